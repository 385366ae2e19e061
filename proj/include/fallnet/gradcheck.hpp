#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fallnet/tensor.hpp"

namespace fallnet {

// Central-difference gradient verification. `value` is nudged in place one
// coordinate at a time; `grad` holds the analytic gradient computed before
// the sweep and must stay untouched by the loss closure.
struct GradCheckItem {
    std::string name;
    Tensor* value;
    const Tensor* grad;
};

struct GradCheckResult {
    real max_rel_err = 0;
    std::string worst; // item name and flat index of the worst coordinate
};

// loss() must recompute the forward pass from the tensors' current contents.
// Per coordinate: numeric = (loss(+eps) - loss(-eps)) / (2 eps) and
// rel_err = |analytic - numeric| / max(|analytic|, |numeric|, 1e-6); the
// floor keeps finite-difference roundoff on near-zero gradients from
// masquerading as relative error.
GradCheckResult gradcheck(const std::function<real()>& loss,
                          const std::vector<GradCheckItem>& items, real eps = real(1e-5));

struct LayerCheck {
    std::string layer;
    real max_rel_err = 0;
    size_t redraws = 0; // inputs redrawn to dodge ReLU kinks / pooling ties
};

// Sweeps every layer kind (dense with each activation, conv, relu, maxpool,
// softmax+cross-entropy, stacked GRU, stacked LSTM) plus a down-scaled
// ensemble model, re-randomized per seed. Draws that land within 1e-3 of a
// ReLU kink or pooling tie are redrawn from a deterministic substream, since
// central differences are invalid across the kink.
std::vector<LayerCheck> gradcheck_suite(size_t seeds, real eps, uint64_t master_seed);

real gradcheck_suite_max_err(size_t seeds, real eps, uint64_t master_seed);

} // namespace fallnet
