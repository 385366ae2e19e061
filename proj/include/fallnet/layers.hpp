#pragma once

#include <limits>
#include <vector>

#include "fallnet/tensor.hpp"

namespace fallnet {

// All layers share the same contract: forward(x) caches whatever the
// backward pass needs, backward(upstream) ACCUMULATES into the layer's
// gradient tensors and returns d(loss)/d(input). Callers zero gradients
// between optimizer steps. Single-sample semantics throughout; batching is
// the training loop's job (sum per-sample gradients, then scale).

// ---------------------------------------------------------------------------
// Fully connected: y = act(W x + b), W is [out x in].

enum class DenseAct { None, Relu, Softmax };

class DenseLayer {
public:
    DenseLayer() = default;
    DenseLayer(size_t in, size_t out, DenseAct act, SeededRng rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& upstream);

    size_t in_features() const { return w.rank() == 2 ? w.dim(1) : 0; }
    size_t out_features() const { return w.rank() == 2 ? w.dim(0) : 0; }

    // Smallest |pre-activation| seen in the last forward pass; +inf unless
    // the activation is ReLU. Finite-difference harnesses use this to avoid
    // probing at the kink.
    real kink_margin() const { return kink_margin_; }

    Tensor w, b;   // parameters
    Tensor dw, db; // accumulated gradients
    DenseAct act = DenseAct::None;

private:
    Tensor x_, out_;
    real kink_margin_ = std::numeric_limits<real>::infinity();
};

// ---------------------------------------------------------------------------
// 2-D convolution, cross-correlation form: no kernel flip, valid padding,
// stride 1. Input [in_ch x H x W], filters [out_ch x in_ch x kh x kw],
// output [out_ch x (H-kh+1) x (W-kw+1)]. Linear (no activation); pair with
// ReluLayer.

class Conv2dLayer {
public:
    Conv2dLayer() = default;
    Conv2dLayer(size_t in_ch, size_t out_ch, size_t kh, size_t kw, SeededRng rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& upstream);

    Tensor filters, bias;   // [oc x ic x kh x kw], [oc]
    Tensor dfilters, dbias;

private:
    Tensor x_;
};

// ---------------------------------------------------------------------------
// Elementwise ReLU with cached mask.

class ReluLayer {
public:
    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& upstream);
    real kink_margin() const { return kink_margin_; }

private:
    Tensor x_;
    real kink_margin_ = std::numeric_limits<real>::infinity();
};

// ---------------------------------------------------------------------------
// Max pooling over [C x H x W] with window (ph x pw), stride equal to the
// window, floor division for the output extent (trailing remainder dropped).
// Ties take the first maximum in row-major window order; backward routes the
// upstream value to that element alone.

class MaxPool2dLayer {
public:
    MaxPool2dLayer() = default;
    MaxPool2dLayer(size_t ph, size_t pw);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& upstream);

    // Smallest (max - runner_up) over all windows in the last forward;
    // +inf when windows have a single element.
    real tie_margin() const { return tie_margin_; }

private:
    size_t ph_ = 1, pw_ = 1;
    std::vector<size_t> in_shape_;
    std::vector<size_t> argmax_; // flat input index per output element
    real tie_margin_ = std::numeric_limits<real>::infinity();
};

// ---------------------------------------------------------------------------
// Softmax and fused softmax + cross-entropy on logits (log-sum-exp shifted
// by the max, so exp never overflows).

Tensor softmax(const Tensor& logits);

struct SoftmaxXent {
    Tensor probs;
    real loss;
};

SoftmaxXent softmax_xent(const Tensor& logits, size_t label);

// d(loss)/d(logits) = probs - onehot(label).
Tensor softmax_xent_backward(const Tensor& probs, size_t label);

// ---------------------------------------------------------------------------
// Gated recurrent unit. Gate equations, with [h_{t-1}, x_t] meaning
// concatenation in that order:
//
//   r_t = sigmoid(W_r [h_{t-1}, x_t] + b_r)
//   z_t = sigmoid(W_z [h_{t-1}, x_t] + b_z)
//   hcand_t = tanh(W_h [r_t * h_{t-1}, x_t] + b_h)
//   h_t = (1 - z_t) * h_{t-1} + z_t * hcand_t
//
// so z_t = 1 takes the candidate and z_t = 0 keeps the previous state.

struct GruParams {
    Tensor w_r, w_z, w_h; // each [hidden x (hidden + input)]
    Tensor b_r, b_z, b_h; // each [hidden]

    static GruParams init(size_t input, size_t hidden, SeededRng rng);
    size_t hidden() const { return w_r.rank() == 2 ? w_r.dim(0) : 0; }
    size_t input() const { return w_r.rank() == 2 ? w_r.dim(1) - w_r.dim(0) : 0; }
};

struct GruStep {
    Tensor h;     // h_t
    Tensor r, z;  // gate activations, each in (0, 1)
    Tensor hcand; // candidate, in (-1, 1)
};

// One cell update; pure function of (x_t, h_prev, params).
GruStep gru_cell_step(const Tensor& x_t, const Tensor& h_prev, const GruParams& p);

// Unrolled GRU over a [T x input] sequence starting from h_0 = 0, returning
// the full hidden sequence [T x hidden]. backward() runs truncation-free
// BPTT through every step.
class GruLayer {
public:
    GruLayer() = default;
    GruLayer(size_t input, size_t hidden, SeededRng rng);

    Tensor forward(const Tensor& x);
    Tensor backward(const Tensor& upstream);

    GruParams p; // parameters
    GruParams g; // accumulated gradients, same shapes

private:
    Tensor x_, r_, z_, hcand_, h_; // per-step caches, each [T x dim]
};

// ---------------------------------------------------------------------------
// Standard LSTM (forget/input/output gates, tanh cell candidate), same
// concatenation convention as the GRU. Used only by the recurrent baseline.

struct LstmParams {
    Tensor w_i, w_f, w_o, w_c; // each [hidden x (hidden + input)]
    Tensor b_i, b_f, b_o, b_c; // each [hidden]

    static LstmParams init(size_t input, size_t hidden, SeededRng rng);
    size_t hidden() const { return w_i.rank() == 2 ? w_i.dim(0) : 0; }
    size_t input() const { return w_i.rank() == 2 ? w_i.dim(1) - w_i.dim(0) : 0; }
};

class LstmLayer {
public:
    LstmLayer() = default;
    LstmLayer(size_t input, size_t hidden, SeededRng rng);

    Tensor forward(const Tensor& x);   // [T x input] -> [T x hidden]
    Tensor backward(const Tensor& upstream);

    LstmParams p;
    LstmParams g;

private:
    Tensor x_, i_, f_, o_, cc_, c_, tc_, h_; // per-step caches
};

} // namespace fallnet
