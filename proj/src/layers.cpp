#include "fallnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fallnet/kernels.hpp"

namespace fallnet {

namespace {

void require_vector(const Tensor& x, size_t n, const char* who) {
    if (x.rank() != 1 || x.dim(0) != n) {
        throw std::invalid_argument(std::string(who) + ": expected [" + std::to_string(n) +
                                    "], got " + x.shape_str());
    }
}

} // namespace

// ---------------------------------------------------------------------------
// DenseLayer

DenseLayer::DenseLayer(size_t in, size_t out, DenseAct act_, SeededRng rng)
    : w(glorot_uniform({out, in}, in, out, rng)),
      b(Tensor({out})),
      dw(Tensor({out, in})),
      db(Tensor({out})),
      act(act_) {
    if (in == 0 || out == 0) {
        throw std::invalid_argument("DenseLayer: zero-sized dimension");
    }
}

Tensor DenseLayer::forward(const Tensor& x) {
    size_t in = in_features(), out = out_features();
    require_vector(x, in, "DenseLayer::forward");
    x_ = x;
    Tensor pre({out});
    kern::matvec(w.data(), x.data(), pre.data(), out, in);
    for (size_t i = 0; i < out; ++i) {
        pre[i] += b[i];
    }
    switch (act) {
    case DenseAct::None:
        out_ = std::move(pre);
        break;
    case DenseAct::Relu: {
        kink_margin_ = std::numeric_limits<real>::infinity();
        for (size_t i = 0; i < out; ++i) {
            kink_margin_ = std::min(kink_margin_, std::abs(pre[i]));
        }
        out_ = map_activation(Activation::Relu, pre);
        break;
    }
    case DenseAct::Softmax:
        out_ = softmax(pre);
        break;
    }
    return out_;
}

Tensor DenseLayer::backward(const Tensor& upstream) {
    size_t in = in_features(), out = out_features();
    require_vector(upstream, out, "DenseLayer::backward");
    Tensor da({out});
    switch (act) {
    case DenseAct::None:
        da = upstream;
        break;
    case DenseAct::Relu:
        for (size_t i = 0; i < out; ++i) {
            da[i] = out_[i] > 0 ? upstream[i] : real(0);
        }
        break;
    case DenseAct::Softmax: {
        // Full softmax Jacobian: da_i = p_i * (u_i - sum_j u_j p_j).
        real dotup = kern::dot(upstream.data(), out_.data(), out);
        for (size_t i = 0; i < out; ++i) {
            da[i] = out_[i] * (upstream[i] - dotup);
        }
        break;
    }
    }
    kern::outer_acc(dw.data(), da.data(), x_.data(), out, in);
    for (size_t i = 0; i < out; ++i) {
        db[i] += da[i];
    }
    Tensor dx({in});
    kern::matvec_t_acc(w.data(), da.data(), dx.data(), out, in);
    return dx;
}

// ---------------------------------------------------------------------------
// Conv2dLayer

Conv2dLayer::Conv2dLayer(size_t in_ch, size_t out_ch, size_t kh, size_t kw, SeededRng rng) {
    if (in_ch == 0 || out_ch == 0 || kh == 0 || kw == 0) {
        throw std::invalid_argument("Conv2dLayer: zero-sized dimension");
    }
    size_t fan_in = in_ch * kh * kw;
    size_t fan_out = out_ch * kh * kw;
    filters = glorot_uniform({out_ch, in_ch, kh, kw}, fan_in, fan_out, rng);
    bias = Tensor({out_ch});
    dfilters = Tensor({out_ch, in_ch, kh, kw});
    dbias = Tensor({out_ch});
}

Tensor Conv2dLayer::forward(const Tensor& x) {
    size_t oc = filters.dim(0), ic = filters.dim(1), kh = filters.dim(2), kw = filters.dim(3);
    if (x.rank() != 3 || x.dim(0) != ic) {
        throw std::invalid_argument("Conv2dLayer::forward: expected [" + std::to_string(ic) +
                                    " x H x W], got " + x.shape_str());
    }
    size_t h = x.dim(1), w = x.dim(2);
    if (h < kh || w < kw) {
        throw std::invalid_argument("Conv2dLayer::forward: input " + x.shape_str() +
                                    " smaller than kernel " + filters.shape_str());
    }
    x_ = x;
    size_t oh = h - kh + 1, ow = w - kw + 1;
    Tensor out({oc, oh, ow});
    for (size_t f = 0; f < oc; ++f) {
        for (size_t oy = 0; oy < oh; ++oy) {
            real* orow = &out.at(f, oy, 0);
            std::fill(orow, orow + ow, bias[f]);
            for (size_t c = 0; c < ic; ++c) {
                for (size_t ky = 0; ky < kh; ++ky) {
                    const real* xrow = &x_.at(c, oy + ky, 0);
                    const real* krow = &filters.at(f, c, ky, 0);
                    for (size_t kx = 0; kx < kw; ++kx) {
                        kern::axpy(krow[kx], xrow + kx, orow, ow);
                    }
                }
            }
        }
    }
    return out;
}

Tensor Conv2dLayer::backward(const Tensor& upstream) {
    size_t oc = filters.dim(0), ic = filters.dim(1), kh = filters.dim(2), kw = filters.dim(3);
    size_t h = x_.dim(1), w = x_.dim(2);
    size_t oh = h - kh + 1, ow = w - kw + 1;
    if (upstream.rank() != 3 || upstream.dim(0) != oc || upstream.dim(1) != oh ||
        upstream.dim(2) != ow) {
        throw std::invalid_argument("Conv2dLayer::backward: expected " +
                                    shape_to_string({oc, oh, ow}) + ", got " +
                                    upstream.shape_str());
    }
    Tensor dx(x_.shape());
    for (size_t f = 0; f < oc; ++f) {
        real bsum = 0;
        for (size_t oy = 0; oy < oh; ++oy) {
            const real* urow = &upstream.at(f, oy, 0);
            for (size_t ox = 0; ox < ow; ++ox) {
                bsum += urow[ox];
            }
            for (size_t c = 0; c < ic; ++c) {
                for (size_t ky = 0; ky < kh; ++ky) {
                    const real* xrow = &x_.at(c, oy + ky, 0);
                    real* dxrow = &dx.at(c, oy + ky, 0);
                    real* dkrow = &dfilters.at(f, c, ky, 0);
                    const real* krow = &filters.at(f, c, ky, 0);
                    for (size_t kx = 0; kx < kw; ++kx) {
                        dkrow[kx] += kern::dot(urow, xrow + kx, ow);
                        kern::axpy(krow[kx], urow, dxrow + kx, ow);
                    }
                }
            }
        }
        dbias[f] += bsum;
    }
    return dx;
}

// ---------------------------------------------------------------------------
// ReluLayer

Tensor ReluLayer::forward(const Tensor& x) {
    x_ = x;
    kink_margin_ = std::numeric_limits<real>::infinity();
    for (size_t i = 0; i < x.size(); ++i) {
        kink_margin_ = std::min(kink_margin_, std::abs(x[i]));
    }
    return map_activation(Activation::Relu, x);
}

Tensor ReluLayer::backward(const Tensor& upstream) {
    if (!upstream.same_shape(x_)) {
        throw std::invalid_argument("ReluLayer::backward: shape mismatch " +
                                    upstream.shape_str() + " vs " + x_.shape_str());
    }
    Tensor dx(x_.shape());
    for (size_t i = 0; i < x_.size(); ++i) {
        dx[i] = x_[i] > 0 ? upstream[i] : real(0);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// MaxPool2dLayer

MaxPool2dLayer::MaxPool2dLayer(size_t ph, size_t pw) : ph_(ph), pw_(pw) {
    if (ph == 0 || pw == 0) {
        throw std::invalid_argument("MaxPool2dLayer: zero-sized window");
    }
}

Tensor MaxPool2dLayer::forward(const Tensor& x) {
    if (x.rank() != 3) {
        throw std::invalid_argument("MaxPool2dLayer::forward: expected rank-3, got " +
                                    x.shape_str());
    }
    size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
    size_t oh = h / ph_, ow = w / pw_;
    if (oh == 0 || ow == 0) {
        throw std::invalid_argument("MaxPool2dLayer::forward: input " + x.shape_str() +
                                    " smaller than window " +
                                    shape_to_string({ph_, pw_}));
    }
    in_shape_ = x.shape();
    Tensor out({c, oh, ow});
    argmax_.assign(out.size(), 0);
    tie_margin_ = std::numeric_limits<real>::infinity();
    size_t oidx = 0;
    for (size_t ch = 0; ch < c; ++ch) {
        for (size_t py = 0; py < oh; ++py) {
            for (size_t px = 0; px < ow; ++px) {
                real best = -std::numeric_limits<real>::infinity();
                real second = -std::numeric_limits<real>::infinity();
                size_t best_idx = 0;
                for (size_t wy = 0; wy < ph_; ++wy) {
                    size_t iy = py * ph_ + wy;
                    const real* xrow = &x.at(ch, iy, 0);
                    for (size_t wx = 0; wx < pw_; ++wx) {
                        size_t ix = px * pw_ + wx;
                        real v = xrow[ix];
                        if (v > best) {
                            second = best;
                            best = v;
                            best_idx = (ch * h + iy) * w + ix;
                        } else if (v > second) {
                            second = v;
                        }
                    }
                }
                out[oidx] = best;
                argmax_[oidx] = best_idx;
                // A window whose max and runner-up are both exactly zero is
                // flat (an upstream relu clamped the whole window); the
                // argmax choice cannot affect any downstream value there.
                if (best != 0 || second != 0) {
                    tie_margin_ = std::min(tie_margin_, best - second);
                }
                ++oidx;
            }
        }
    }
    return out;
}

Tensor MaxPool2dLayer::backward(const Tensor& upstream) {
    size_t c = in_shape_.at(0), h = in_shape_.at(1), w = in_shape_.at(2);
    size_t oh = h / ph_, ow = w / pw_;
    if (upstream.rank() != 3 || upstream.dim(0) != c || upstream.dim(1) != oh ||
        upstream.dim(2) != ow) {
        throw std::invalid_argument("MaxPool2dLayer::backward: expected " +
                                    shape_to_string({c, oh, ow}) + ", got " +
                                    upstream.shape_str());
    }
    Tensor dx(in_shape_);
    for (size_t i = 0; i < upstream.size(); ++i) {
        dx[argmax_[i]] += upstream[i];
    }
    return dx;
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy

Tensor softmax(const Tensor& logits) {
    if (logits.rank() != 1 || logits.size() == 0) {
        throw std::invalid_argument("softmax: expected non-empty rank-1, got " +
                                    logits.shape_str());
    }
    size_t n = logits.size();
    real m = logits[0];
    for (size_t i = 1; i < n; ++i) {
        m = std::max(m, logits[i]);
    }
    Tensor p({n});
    real z = 0;
    for (size_t i = 0; i < n; ++i) {
        p[i] = std::exp(logits[i] - m);
        z += p[i];
    }
    for (size_t i = 0; i < n; ++i) {
        p[i] /= z;
    }
    return p;
}

SoftmaxXent softmax_xent(const Tensor& logits, size_t label) {
    if (logits.rank() != 1 || logits.size() == 0) {
        throw std::invalid_argument("softmax_xent: expected non-empty rank-1, got " +
                                    logits.shape_str());
    }
    if (label >= logits.size()) {
        throw std::out_of_range("softmax_xent: label " + std::to_string(label) +
                                " for " + std::to_string(logits.size()) + " classes");
    }
    size_t n = logits.size();
    real m = logits[0];
    for (size_t i = 1; i < n; ++i) {
        m = std::max(m, logits[i]);
    }
    Tensor p({n});
    real z = 0;
    for (size_t i = 0; i < n; ++i) {
        p[i] = std::exp(logits[i] - m);
        z += p[i];
    }
    for (size_t i = 0; i < n; ++i) {
        p[i] /= z;
    }
    // loss = -log softmax(logits)[label], in log-sum-exp form.
    real loss = -(logits[label] - m - std::log(z));
    return SoftmaxXent{std::move(p), loss};
}

Tensor softmax_xent_backward(const Tensor& probs, size_t label) {
    if (label >= probs.size()) {
        throw std::out_of_range("softmax_xent_backward: label out of range");
    }
    Tensor d = probs;
    d[label] -= real(1);
    return d;
}

// ---------------------------------------------------------------------------
// GRU

GruParams GruParams::init(size_t input, size_t hidden, SeededRng rng) {
    if (input == 0 || hidden == 0) {
        throw std::invalid_argument("GruParams::init: zero-sized dimension");
    }
    size_t cols = hidden + input;
    GruParams p;
    SeededRng r_rng = rng.split("w_r");
    SeededRng z_rng = rng.split("w_z");
    SeededRng h_rng = rng.split("w_h");
    p.w_r = glorot_uniform({hidden, cols}, cols, hidden, r_rng);
    p.w_z = glorot_uniform({hidden, cols}, cols, hidden, z_rng);
    p.w_h = glorot_uniform({hidden, cols}, cols, hidden, h_rng);
    p.b_r = Tensor({hidden});
    p.b_z = Tensor({hidden});
    p.b_h = Tensor({hidden});
    return p;
}

GruStep gru_cell_step(const Tensor& x_t, const Tensor& h_prev, const GruParams& p) {
    size_t hid = p.hidden(), in = p.input();
    require_vector(x_t, in, "gru_cell_step(x)");
    require_vector(h_prev, hid, "gru_cell_step(h_prev)");
    size_t cols = hid + in;
    std::vector<real> cat(cols);
    std::copy(h_prev.data(), h_prev.data() + hid, cat.begin());
    std::copy(x_t.data(), x_t.data() + in, cat.begin() + hid);

    GruStep s;
    s.r = Tensor({hid});
    s.z = Tensor({hid});
    s.hcand = Tensor({hid});
    s.h = Tensor({hid});

    kern::matvec(p.w_r.data(), cat.data(), s.r.data(), hid, cols);
    kern::matvec(p.w_z.data(), cat.data(), s.z.data(), hid, cols);
    for (size_t i = 0; i < hid; ++i) {
        s.r[i] = sigmoid(s.r[i] + p.b_r[i]);
        s.z[i] = sigmoid(s.z[i] + p.b_z[i]);
    }
    for (size_t i = 0; i < hid; ++i) {
        cat[i] = s.r[i] * h_prev[i];
    }
    kern::matvec(p.w_h.data(), cat.data(), s.hcand.data(), hid, cols);
    for (size_t i = 0; i < hid; ++i) {
        s.hcand[i] = std::tanh(s.hcand[i] + p.b_h[i]);
        s.h[i] = (real(1) - s.z[i]) * h_prev[i] + s.z[i] * s.hcand[i];
    }
    return s;
}

GruLayer::GruLayer(size_t input, size_t hidden, SeededRng rng)
    : p(GruParams::init(input, hidden, rng)) {
    g.w_r = Tensor({hidden, hidden + input});
    g.w_z = Tensor({hidden, hidden + input});
    g.w_h = Tensor({hidden, hidden + input});
    g.b_r = Tensor({hidden});
    g.b_z = Tensor({hidden});
    g.b_h = Tensor({hidden});
}

Tensor GruLayer::forward(const Tensor& x) {
    size_t hid = p.hidden(), in = p.input();
    if (x.rank() != 2 || x.dim(1) != in) {
        throw std::invalid_argument("GruLayer::forward: expected [T x " + std::to_string(in) +
                                    "], got " + x.shape_str());
    }
    size_t steps = x.dim(0);
    x_ = x;
    r_ = Tensor({steps, hid});
    z_ = Tensor({steps, hid});
    hcand_ = Tensor({steps, hid});
    h_ = Tensor({steps, hid});

    size_t cols = hid + in;
    std::vector<real> cat(cols), a(hid);
    std::vector<real> zeros(hid, real(0));
    for (size_t t = 0; t < steps; ++t) {
        const real* h_prev = t == 0 ? zeros.data() : &h_.at(t - 1, 0);
        const real* xt = &x_.at(t, 0);
        std::copy(h_prev, h_prev + hid, cat.begin());
        std::copy(xt, xt + in, cat.begin() + hid);

        real* rt = &r_.at(t, 0);
        real* zt = &z_.at(t, 0);
        real* hct = &hcand_.at(t, 0);
        real* ht = &h_.at(t, 0);

        kern::matvec(p.w_r.data(), cat.data(), a.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) {
            rt[i] = sigmoid(a[i] + p.b_r[i]);
        }
        kern::matvec(p.w_z.data(), cat.data(), a.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) {
            zt[i] = sigmoid(a[i] + p.b_z[i]);
        }
        for (size_t i = 0; i < hid; ++i) {
            cat[i] = rt[i] * h_prev[i];
        }
        kern::matvec(p.w_h.data(), cat.data(), a.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) {
            hct[i] = std::tanh(a[i] + p.b_h[i]);
            ht[i] = (real(1) - zt[i]) * h_prev[i] + zt[i] * hct[i];
        }
    }
    return h_;
}

Tensor GruLayer::backward(const Tensor& upstream) {
    size_t hid = p.hidden(), in = p.input();
    size_t steps = h_.rank() == 2 ? h_.dim(0) : 0;
    if (upstream.rank() != 2 || upstream.dim(0) != steps || upstream.dim(1) != hid) {
        throw std::invalid_argument("GruLayer::backward: expected " +
                                    shape_to_string({steps, hid}) + ", got " +
                                    upstream.shape_str());
    }
    size_t cols = hid + in;
    Tensor dx({steps, in});
    std::vector<real> carry(hid, real(0)), next_carry(hid);
    std::vector<real> gh(hid), dhc(hid), da(hid), da_z(hid);
    std::vector<real> cat(cols), dcat(cols);
    std::vector<real> zeros(hid, real(0));

    for (size_t ti = steps; ti-- > 0;) {
        const real* h_prev = ti == 0 ? zeros.data() : &h_.at(ti - 1, 0);
        const real* xt = &x_.at(ti, 0);
        const real* rt = &r_.at(ti, 0);
        const real* zt = &z_.at(ti, 0);
        const real* hct = &hcand_.at(ti, 0);
        const real* ut = &upstream.at(ti, 0);
        real* dxt = &dx.at(ti, 0);

        for (size_t i = 0; i < hid; ++i) {
            gh[i] = ut[i] + carry[i];
            next_carry[i] = gh[i] * (real(1) - zt[i]);
            dhc[i] = gh[i] * zt[i];
            // through tanh
            da[i] = dhc[i] * (real(1) - hct[i] * hct[i]);
        }

        // Candidate path: a_h = W_h [r*h_prev, x] + b_h.
        for (size_t i = 0; i < hid; ++i) {
            cat[i] = rt[i] * h_prev[i];
        }
        std::copy(xt, xt + in, cat.begin() + hid);
        kern::outer_acc(g.w_h.data(), da.data(), cat.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) {
            g.b_h[i] += da[i];
        }
        std::fill(dcat.begin(), dcat.end(), real(0));
        kern::matvec_t_acc(p.w_h.data(), da.data(), dcat.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) {
            // dcat[0:hid] is d/d(r*h_prev)
            next_carry[i] += dcat[i] * rt[i];
            // reuse da for d(a_r): dr -> through sigmoid
            da[i] = dcat[i] * h_prev[i] * rt[i] * (real(1) - rt[i]);
        }
        std::copy(dcat.begin() + hid, dcat.end(), dxt);

        // Gate paths: a_r and a_z both read [h_prev, x].
        for (size_t i = 0; i < hid; ++i) {
            da_z[i] = gh[i] * (hct[i] - h_prev[i]) * zt[i] * (real(1) - zt[i]);
        }
        std::copy(h_prev, h_prev + hid, cat.begin());
        kern::outer_acc(g.w_r.data(), da.data(), cat.data(), hid, cols);
        kern::outer_acc(g.w_z.data(), da_z.data(), cat.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) {
            g.b_r[i] += da[i];
            g.b_z[i] += da_z[i];
        }
        std::fill(dcat.begin(), dcat.end(), real(0));
        kern::matvec_t_acc(p.w_r.data(), da.data(), dcat.data(), hid, cols);
        kern::matvec_t_acc(p.w_z.data(), da_z.data(), dcat.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) {
            next_carry[i] += dcat[i];
        }
        for (size_t i = 0; i < in; ++i) {
            dxt[i] += dcat[hid + i];
        }
        std::swap(carry, next_carry);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// LSTM

LstmParams LstmParams::init(size_t input, size_t hidden, SeededRng rng) {
    if (input == 0 || hidden == 0) {
        throw std::invalid_argument("LstmParams::init: zero-sized dimension");
    }
    size_t cols = hidden + input;
    LstmParams p;
    SeededRng i_rng = rng.split("w_i");
    SeededRng f_rng = rng.split("w_f");
    SeededRng o_rng = rng.split("w_o");
    SeededRng c_rng = rng.split("w_c");
    p.w_i = glorot_uniform({hidden, cols}, cols, hidden, i_rng);
    p.w_f = glorot_uniform({hidden, cols}, cols, hidden, f_rng);
    p.w_o = glorot_uniform({hidden, cols}, cols, hidden, o_rng);
    p.w_c = glorot_uniform({hidden, cols}, cols, hidden, c_rng);
    p.b_i = Tensor({hidden});
    p.b_f = Tensor({hidden});
    p.b_o = Tensor({hidden});
    p.b_c = Tensor({hidden});
    return p;
}

LstmLayer::LstmLayer(size_t input, size_t hidden, SeededRng rng)
    : p(LstmParams::init(input, hidden, rng)) {
    size_t cols = hidden + input;
    g.w_i = Tensor({hidden, cols});
    g.w_f = Tensor({hidden, cols});
    g.w_o = Tensor({hidden, cols});
    g.w_c = Tensor({hidden, cols});
    g.b_i = Tensor({hidden});
    g.b_f = Tensor({hidden});
    g.b_o = Tensor({hidden});
    g.b_c = Tensor({hidden});
}

Tensor LstmLayer::forward(const Tensor& x) {
    size_t hid = p.hidden(), in = p.input();
    if (x.rank() != 2 || x.dim(1) != in) {
        throw std::invalid_argument("LstmLayer::forward: expected [T x " + std::to_string(in) +
                                    "], got " + x.shape_str());
    }
    size_t steps = x.dim(0);
    x_ = x;
    i_ = Tensor({steps, hid});
    f_ = Tensor({steps, hid});
    o_ = Tensor({steps, hid});
    cc_ = Tensor({steps, hid});
    c_ = Tensor({steps, hid});
    tc_ = Tensor({steps, hid});
    h_ = Tensor({steps, hid});

    size_t cols = hid + in;
    std::vector<real> cat(cols), a(hid);
    std::vector<real> zeros(hid, real(0));
    for (size_t t = 0; t < steps; ++t) {
        const real* h_prev = t == 0 ? zeros.data() : &h_.at(t - 1, 0);
        const real* c_prev = t == 0 ? zeros.data() : &c_.at(t - 1, 0);
        std::copy(h_prev, h_prev + hid, cat.begin());
        const real* xt = &x_.at(t, 0);
        std::copy(xt, xt + in, cat.begin() + hid);

        real* it = &i_.at(t, 0);
        real* ft = &f_.at(t, 0);
        real* ot = &o_.at(t, 0);
        real* cct = &cc_.at(t, 0);
        real* ct = &c_.at(t, 0);
        real* tct = &tc_.at(t, 0);
        real* ht = &h_.at(t, 0);

        kern::matvec(p.w_i.data(), cat.data(), a.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) it[i] = sigmoid(a[i] + p.b_i[i]);
        kern::matvec(p.w_f.data(), cat.data(), a.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) ft[i] = sigmoid(a[i] + p.b_f[i]);
        kern::matvec(p.w_o.data(), cat.data(), a.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) ot[i] = sigmoid(a[i] + p.b_o[i]);
        kern::matvec(p.w_c.data(), cat.data(), a.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) {
            cct[i] = std::tanh(a[i] + p.b_c[i]);
            ct[i] = ft[i] * c_prev[i] + it[i] * cct[i];
            tct[i] = std::tanh(ct[i]);
            ht[i] = ot[i] * tct[i];
        }
    }
    return h_;
}

Tensor LstmLayer::backward(const Tensor& upstream) {
    size_t hid = p.hidden(), in = p.input();
    size_t steps = h_.rank() == 2 ? h_.dim(0) : 0;
    if (upstream.rank() != 2 || upstream.dim(0) != steps || upstream.dim(1) != hid) {
        throw std::invalid_argument("LstmLayer::backward: expected " +
                                    shape_to_string({steps, hid}) + ", got " +
                                    upstream.shape_str());
    }
    size_t cols = hid + in;
    Tensor dx({steps, in});
    std::vector<real> carry_h(hid, real(0)), carry_c(hid, real(0));
    std::vector<real> da_i(hid), da_f(hid), da_o(hid), da_c(hid), dct(hid);
    std::vector<real> cat(cols), dcat(cols);
    std::vector<real> zeros(hid, real(0));

    for (size_t ti = steps; ti-- > 0;) {
        const real* h_prev = ti == 0 ? zeros.data() : &h_.at(ti - 1, 0);
        const real* c_prev = ti == 0 ? zeros.data() : &c_.at(ti - 1, 0);
        const real* xt = &x_.at(ti, 0);
        const real* it = &i_.at(ti, 0);
        const real* ft = &f_.at(ti, 0);
        const real* ot = &o_.at(ti, 0);
        const real* cct = &cc_.at(ti, 0);
        const real* tct = &tc_.at(ti, 0);
        const real* ut = &upstream.at(ti, 0);
        real* dxt = &dx.at(ti, 0);

        for (size_t i = 0; i < hid; ++i) {
            real gh = ut[i] + carry_h[i];
            real do_ = gh * tct[i];
            dct[i] = gh * ot[i] * (real(1) - tct[i] * tct[i]) + carry_c[i];
            da_o[i] = do_ * ot[i] * (real(1) - ot[i]);
            da_i[i] = dct[i] * cct[i] * it[i] * (real(1) - it[i]);
            da_f[i] = dct[i] * c_prev[i] * ft[i] * (real(1) - ft[i]);
            da_c[i] = dct[i] * it[i] * (real(1) - cct[i] * cct[i]);
            carry_c[i] = dct[i] * ft[i];
        }

        std::copy(h_prev, h_prev + hid, cat.begin());
        std::copy(xt, xt + in, cat.begin() + hid);
        kern::outer_acc(g.w_i.data(), da_i.data(), cat.data(), hid, cols);
        kern::outer_acc(g.w_f.data(), da_f.data(), cat.data(), hid, cols);
        kern::outer_acc(g.w_o.data(), da_o.data(), cat.data(), hid, cols);
        kern::outer_acc(g.w_c.data(), da_c.data(), cat.data(), hid, cols);
        for (size_t i = 0; i < hid; ++i) {
            g.b_i[i] += da_i[i];
            g.b_f[i] += da_f[i];
            g.b_o[i] += da_o[i];
            g.b_c[i] += da_c[i];
        }
        std::fill(dcat.begin(), dcat.end(), real(0));
        kern::matvec_t_acc(p.w_i.data(), da_i.data(), dcat.data(), hid, cols);
        kern::matvec_t_acc(p.w_f.data(), da_f.data(), dcat.data(), hid, cols);
        kern::matvec_t_acc(p.w_o.data(), da_o.data(), dcat.data(), hid, cols);
        kern::matvec_t_acc(p.w_c.data(), da_c.data(), dcat.data(), hid, cols);
        std::copy(dcat.begin(), dcat.begin() + hid, carry_h.begin());
        std::copy(dcat.begin() + hid, dcat.end(), dxt);
    }
    return dx;
}

} // namespace fallnet
