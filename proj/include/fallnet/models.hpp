#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fallnet/layers.hpp"

namespace fallnet {

// The model zoo: five baselines plus the ensemble, all operating on a
// [rows x cols] segment (tri-axial window, rows = channels) and emitting a
// class distribution. The ensemble also carries per-branch auxiliary
// classifier heads whose losses are added to the main loss with a weight.

enum class ModelKind {
    SimpleCnn,
    SimpleGru,
    CoarseFineCnn,
    CnnLstm,
    CnnGru,
    EnsembleCfg,
};

// Canonical presentation order for comparison tables.
const std::vector<ModelKind>& all_model_kinds();

std::string model_kind_name(ModelKind kind);        // e.g. "simple_cnn"
std::string model_display_name(ModelKind kind);     // e.g. "Simple CNN"
std::optional<ModelKind> model_kind_from_name(std::string_view name);

struct ZooConfig {
    size_t input_rows = 3;    // accelerometer channels
    size_t input_cols = 140;  // window length in samples
    size_t conv_filters = 32; // per conv layer
    size_t gru_hidden = 64;   // per recurrent layer
    size_t dense_units = 64;  // shared dense layer before the head
    size_t classes = 2;
    bool aux_heads = true;          // ensemble: attach per-branch aux heads
    bool temporal_last_only = false; // ensemble: flatten only the last GRU step

    bool operator==(const ZooConfig&) const = default;
};

struct ParamRef {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

struct LossBreakdown {
    real total = 0;
    real main = 0;
    real aux_coarse = 0;
    real aux_fine = 0;
    real aux_temporal = 0;
};

class Model {
public:
    virtual ~Model() = default;

    ModelKind kind() const { return kind_; }
    const ZooConfig& config() const { return cfg_; }

    // Stable, ordered parameter registry; names double as weights-file keys.
    virtual std::vector<ParamRef> params() = 0;

    // Main-head class distribution for one segment.
    virtual Tensor predict_proba(const Tensor& segment) = 0;

    // Forward-only total loss (used by finite-difference checks).
    virtual real loss_value(const Tensor& segment, size_t label, real aux_weight) = 0;

    // Forward + backward; ACCUMULATES gradients so a batch can sum samples.
    virtual LossBreakdown forward_backward(const Tensor& segment, size_t label,
                                           real aux_weight) = 0;

    // Smallest distance to a ReLU kink or pooling tie in the last forward
    // pass; finite-difference harnesses redraw inputs when this is tiny.
    virtual real nondiff_margin() const;

    // d(total loss)/d(segment) from the most recent forward_backward call.
    const Tensor& input_grad() const { return input_grad_; }

    size_t predict(const Tensor& segment); // argmax, first max wins ties
    void zero_grads();
    void scale_grads(real s);
    size_t param_count();

protected:
    Model(ModelKind kind, ZooConfig cfg) : kind_(kind), cfg_(std::move(cfg)) {}

    ModelKind kind_;
    ZooConfig cfg_;
    Tensor input_grad_;
};

// Every layer draws its weights from a substream keyed by the parameter
// group name, so structural toggles (e.g. disabling aux heads) leave the
// remaining draws bit-identical.
std::unique_ptr<Model> build_model(ModelKind kind, const ZooConfig& cfg, SeededRng rng);

// ---------------------------------------------------------------------------
// Shared building blocks (exposed for white-box tests).

// Conv/ReLU/pool pipeline over a [1 x rows x cols] image.
struct ConvStack {
    std::vector<Conv2dLayer> convs;
    std::vector<ReluLayer> relus;
    std::vector<MaxPool2dLayer> pools;
    std::vector<size_t> map_shape; // [c x h x w] after the last stage
    size_t flat_len = 0;

    Tensor forward_map(const Tensor& x);
    Tensor backward_map(const Tensor& upstream);
    real nondiff_margin() const;
};

// Coarse feature extractor: conv 3x3 -> relu -> maxpool 1x2.
ConvStack make_coarse_stack(const ZooConfig& cfg, SeededRng rng);
// Fine feature extractor: conv 3x3 -> relu -> pool 1x2 -> conv 1x3 -> relu -> pool 1x2.
ConvStack make_fine_stack(const ZooConfig& cfg, SeededRng rng);

// Two stacked GRU layers over a [T x d] sequence; flattens the full hidden
// sequence (or only the last step, for the ensemble's last_only variant).
struct GruStack {
    GruLayer l1, l2;
    bool last_only = false;
    size_t flat_len = 0;

    Tensor forward_flat(const Tensor& seq);       // [T x d] -> [flat_len]
    Tensor backward_flat(const Tensor& upstream); // -> [T x d]

private:
    size_t steps_ = 0;
};

GruStack make_gru_stack(size_t input_dim, size_t steps, const ZooConfig& cfg, bool last_only,
                        SeededRng rng);

// ---------------------------------------------------------------------------
// The ensemble, exposed concretely so tests can inspect branch geometry and
// auxiliary heads.

struct EnsembleOutputs {
    Tensor probs_main;
    std::vector<Tensor> probs_aux; // coarse, fine, temporal; empty if disabled
};

class EnsembleModel : public Model {
public:
    EnsembleModel(const ZooConfig& cfg, SeededRng rng);

    std::vector<ParamRef> params() override;
    Tensor predict_proba(const Tensor& segment) override;
    real loss_value(const Tensor& segment, size_t label, real aux_weight) override;
    LossBreakdown forward_backward(const Tensor& segment, size_t label,
                                   real aux_weight) override;
    real nondiff_margin() const override;

    EnsembleOutputs forward_outputs(const Tensor& segment);

    size_t coarse_len() const { return coarse_.flat_len; }
    size_t fine_len() const { return fine_.flat_len; }
    size_t temporal_len() const { return temporal_.flat_len; }
    size_t concat_len() const { return coarse_.flat_len + fine_.flat_len + temporal_.flat_len; }

private:
    struct Forward {
        Tensor flat_coarse, flat_fine, flat_temporal;
        Tensor logits_main;
        std::vector<Tensor> logits_aux;
    };
    Forward run_forward(const Tensor& segment);

    ConvStack coarse_, fine_;
    GruStack temporal_;
    DenseLayer trunk_, head_;
    DenseLayer aux_coarse_, aux_fine_, aux_temporal_;
};

} // namespace fallnet
