#pragma once

#include "fallnet/data.hpp"
#include "fallnet/models.hpp"

namespace fallnet {

struct AdamConfig {
    real lr = real(0.01);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);

    bool operator==(const AdamConfig&) const = default;
};

// Adam with bias correction; one shared step counter across all parameters.
// Reads whatever the caller accumulated into the grad tensors.
class Adam {
public:
    Adam(std::vector<ParamRef> params, AdamConfig cfg);

    void step();
    size_t steps() const { return t_; }

private:
    std::vector<ParamRef> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    size_t t_ = 0;
};

struct TrainConfig {
    size_t epochs = 40;
    size_t batch_size = 32;
    AdamConfig adam;
    real aux_weight = real(1); // ensemble aux-head loss weight

    bool operator==(const TrainConfig&) const = default;
};

struct TrainHistory {
    std::vector<real> mean_loss; // per epoch: mean per-sample total loss
};

// Mini-batch training: seeded shuffle each epoch (from rng's "shuffle"
// substream), mean-of-batch gradients (sum per-sample, scale by 1/|batch|),
// trailing partial batch included. Throws if a non-finite loss appears.
TrainHistory train(Model& model, const std::vector<const Segment*>& data,
                   const TrainConfig& cfg, SeededRng rng);

TrainHistory train(Model& model, const std::vector<Segment>& data, const TrainConfig& cfg,
                   SeededRng rng);

} // namespace fallnet
