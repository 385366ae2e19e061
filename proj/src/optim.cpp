#include "fallnet/optim.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace fallnet {

Adam::Adam(std::vector<ParamRef> params, AdamConfig cfg)
    : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0) || !(cfg_.eps > 0) || !(cfg_.beta1 >= 0) || cfg_.beta1 >= 1 ||
        !(cfg_.beta2 >= 0) || cfg_.beta2 >= 1) {
        throw std::invalid_argument("Adam: invalid hyperparameters");
    }
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const ParamRef& p : params_) {
        if (!p.value || !p.grad || p.value->size() != p.grad->size()) {
            throw std::invalid_argument("Adam: parameter '" + p.name +
                                        "' has mismatched value/grad");
        }
        m_.emplace_back(p.value->shape());
        v_.emplace_back(p.value->shape());
    }
}

void Adam::step() {
    ++t_;
    real bc1 = real(1) - std::pow(cfg_.beta1, static_cast<real>(t_));
    real bc2 = real(1) - std::pow(cfg_.beta2, static_cast<real>(t_));
    for (size_t k = 0; k < params_.size(); ++k) {
        Tensor& w = *params_[k].value;
        const Tensor& g = *params_[k].grad;
        Tensor& m = m_[k];
        Tensor& v = v_[k];
        for (size_t i = 0; i < w.size(); ++i) {
            real gi = g[i];
            m[i] = cfg_.beta1 * m[i] + (real(1) - cfg_.beta1) * gi;
            v[i] = cfg_.beta2 * v[i] + (real(1) - cfg_.beta2) * gi * gi;
            real mhat = m[i] / bc1;
            real vhat = v[i] / bc2;
            w[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

TrainHistory train(Model& model, const std::vector<const Segment*>& data,
                   const TrainConfig& cfg, SeededRng rng) {
    if (data.empty()) {
        throw std::invalid_argument("train: empty training set");
    }
    if (cfg.epochs == 0 || cfg.batch_size == 0) {
        throw std::invalid_argument("train: epochs and batch_size must be positive");
    }
    size_t classes = model.config().classes;
    for (const Segment* s : data) {
        if (s->label >= classes) {
            throw std::invalid_argument("train: label " + std::to_string(s->label) +
                                        " out of range for " + std::to_string(classes) +
                                        " classes (segment '" + s->source_id + "')");
        }
    }

    Adam adam(model.params(), cfg.adam);
    SeededRng shuffle_rng = rng.split("shuffle");
    std::vector<size_t> order(data.size());
    std::iota(order.begin(), order.end(), size_t(0));

    TrainHistory hist;
    hist.mean_loss.reserve(cfg.epochs);
    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        real loss_sum = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch_size) {
            size_t bs = std::min(cfg.batch_size, order.size() - start);
            model.zero_grads();
            for (size_t i = 0; i < bs; ++i) {
                const Segment& s = *data[order[start + i]];
                LossBreakdown lb = model.forward_backward(s.data, s.label, cfg.aux_weight);
                loss_sum += lb.total;
            }
            model.scale_grads(real(1) / static_cast<real>(bs));
            adam.step();
        }
        real mean = loss_sum / static_cast<real>(order.size());
        if (!std::isfinite(mean)) {
            throw std::runtime_error("train: non-finite loss at epoch " +
                                     std::to_string(epoch + 1));
        }
        hist.mean_loss.push_back(mean);
    }
    return hist;
}

TrainHistory train(Model& model, const std::vector<Segment>& data, const TrainConfig& cfg,
                   SeededRng rng) {
    std::vector<const Segment*> ptrs;
    ptrs.reserve(data.size());
    for (const Segment& s : data) {
        ptrs.push_back(&s);
    }
    return train(model, ptrs, cfg, rng);
}

} // namespace fallnet
