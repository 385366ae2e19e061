#include "fallnet/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

#include "fallnet/kernels.hpp"
#include "fallnet/layers.hpp"
#include "fallnet/models.hpp"

namespace fallnet {

GradCheckResult gradcheck(const std::function<real()>& loss,
                          const std::vector<GradCheckItem>& items, real eps) {
    if (!(eps > 0)) {
        throw std::invalid_argument("gradcheck: eps must be positive");
    }
    GradCheckResult res;
    for (const GradCheckItem& item : items) {
        if (!item.value || !item.grad || item.value->size() != item.grad->size()) {
            throw std::invalid_argument("gradcheck: item '" + item.name +
                                        "' has mismatched value/grad");
        }
        Tensor& v = *item.value;
        for (size_t i = 0; i < v.size(); ++i) {
            real orig = v[i];
            v[i] = orig + eps;
            real lp = loss();
            v[i] = orig - eps;
            real lm = loss();
            v[i] = orig;
            real numeric = (lp - lm) / (2 * eps);
            real analytic = (*item.grad)[i];
            // Central differences with eps ~1e-5 on an O(1) loss resolve a
            // derivative only to ~1e-11 absolute (roundoff ~ulp(L)/2eps plus
            // eps^2 truncation), so below ~1e-6 a bare relative comparison
            // measures that noise, not the gradient. The floor turns the
            // check into |a - n| < tol * 1e-6 absolute for near-zero entries.
            real denom = std::max({std::abs(analytic), std::abs(numeric), real(1e-6)});
            real rel = std::abs(analytic - numeric) / denom;
            if (rel > res.max_rel_err) {
                res.max_rel_err = rel;
                res.worst = item.name + "[" + std::to_string(i) + "]";
            }
        }
    }
    return res;
}

namespace {

constexpr real kMarginMin = real(1e-3);
constexpr size_t kMaxRedraws = 64;

real weighted_sum(const Tensor& w, const Tensor& y) {
    if (!w.same_shape(y)) {
        throw std::invalid_argument("gradcheck: weight/output shape mismatch");
    }
    return kern::dot(w.data(), y.data(), w.size());
}

// One layer probe: `build` draws fresh tensors and runs the analytic
// backward, returning items + loss closure + the margin to the nearest
// non-differentiable point; the harness redraws until the margin clears.
struct Probe {
    std::vector<GradCheckItem> items;
    std::function<real()> loss;
    real margin = std::numeric_limits<real>::infinity();
};

LayerCheck run_probe(const std::string& name,
                     const std::function<void(SeededRng, Probe&)>& build, SeededRng rng,
                     real eps) {
    LayerCheck out{name, 0, 0};
    for (size_t attempt = 0;; ++attempt) {
        if (attempt > kMaxRedraws) {
            throw std::runtime_error("gradcheck: '" + name + "' still near a kink after " +
                                     std::to_string(kMaxRedraws) + " redraws");
        }
        Probe probe;
        build(rng.split(attempt), probe);
        if (probe.margin < kMarginMin) {
            ++out.redraws;
            continue;
        }
        GradCheckResult res = gradcheck(probe.loss, probe.items, eps);
        out.max_rel_err = res.max_rel_err;
        return out;
    }
}

LayerCheck check_dense(DenseAct act, const std::string& name, SeededRng rng, real eps) {
    // Probe state must outlive the closure across gradcheck's sweep.
    auto layer = std::make_shared<DenseLayer>();
    auto x = std::make_shared<Tensor>();
    auto up = std::make_shared<Tensor>();
    auto dx = std::make_shared<Tensor>();
    auto build = [&](SeededRng r, Probe& probe) {
        SeededRng xr = r.split("x");
        SeededRng ur = r.split("up");
        *layer = DenseLayer(8, 5, act, r.split("init"));
        *x = seeded_uniform({8}, -1, 1, xr);
        *up = seeded_uniform({5}, -1, 1, ur);
        layer->forward(*x);
        probe.margin = layer->kink_margin();
        if (probe.margin < kMarginMin) return;
        *dx = layer->backward(*up);
        probe.items = {{"w", &layer->w, &layer->dw},
                       {"b", &layer->b, &layer->db},
                       {"x", x.get(), dx.get()}};
        probe.loss = [layer, x, up]() { return weighted_sum(*up, layer->forward(*x)); };
    };
    return run_probe(name, build, rng, eps);
}

LayerCheck check_conv(SeededRng rng, real eps) {
    auto layer = std::make_shared<Conv2dLayer>();
    auto x = std::make_shared<Tensor>();
    auto up = std::make_shared<Tensor>();
    auto dx = std::make_shared<Tensor>();
    auto build = [&](SeededRng r, Probe& probe) {
        SeededRng xr = r.split("x");
        SeededRng ur = r.split("up");
        *layer = Conv2dLayer(2, 3, 2, 3, r.split("init"));
        *x = seeded_uniform({2, 4, 9}, -1, 1, xr);
        *up = seeded_uniform({3, 3, 7}, -1, 1, ur);
        layer->forward(*x);
        *dx = layer->backward(*up);
        probe.items = {{"filters", &layer->filters, &layer->dfilters},
                       {"bias", &layer->bias, &layer->dbias},
                       {"x", x.get(), dx.get()}};
        probe.loss = [layer, x, up]() { return weighted_sum(*up, layer->forward(*x)); };
    };
    return run_probe("conv2d", build, rng, eps);
}

LayerCheck check_relu(SeededRng rng, real eps) {
    auto layer = std::make_shared<ReluLayer>();
    auto x = std::make_shared<Tensor>();
    auto up = std::make_shared<Tensor>();
    auto dx = std::make_shared<Tensor>();
    auto build = [&](SeededRng r, Probe& probe) {
        SeededRng xr = r.split("x");
        SeededRng ur = r.split("up");
        *x = seeded_uniform({12}, -1, 1, xr);
        *up = seeded_uniform({12}, -1, 1, ur);
        layer->forward(*x);
        probe.margin = layer->kink_margin();
        if (probe.margin < kMarginMin) return;
        *dx = layer->backward(*up);
        probe.items = {{"x", x.get(), dx.get()}};
        probe.loss = [layer, x, up]() { return weighted_sum(*up, layer->forward(*x)); };
    };
    return run_probe("relu", build, rng, eps);
}

LayerCheck check_maxpool(SeededRng rng, real eps) {
    auto layer = std::make_shared<MaxPool2dLayer>(2, 2);
    auto x = std::make_shared<Tensor>();
    auto up = std::make_shared<Tensor>();
    auto dx = std::make_shared<Tensor>();
    auto build = [&](SeededRng r, Probe& probe) {
        SeededRng xr = r.split("x");
        SeededRng ur = r.split("up");
        *x = seeded_uniform({3, 4, 9}, -1, 1, xr); // width 9: floor drops a column
        *up = seeded_uniform({3, 2, 4}, -1, 1, ur);
        layer->forward(*x);
        probe.margin = layer->tie_margin();
        if (probe.margin < kMarginMin) return;
        *dx = layer->backward(*up);
        probe.items = {{"x", x.get(), dx.get()}};
        probe.loss = [layer, x, up]() { return weighted_sum(*up, layer->forward(*x)); };
    };
    return run_probe("maxpool", build, rng, eps);
}

LayerCheck check_softmax_xent(SeededRng rng, real eps) {
    auto logits = std::make_shared<Tensor>();
    auto dlogits = std::make_shared<Tensor>();
    auto build = [&](SeededRng r, Probe& probe) {
        SeededRng lr = r.split("logits");
        *logits = seeded_uniform({4}, -2, 2, lr);
        size_t label = r.split("label").below(4);
        SoftmaxXent sx = softmax_xent(*logits, label);
        *dlogits = softmax_xent_backward(sx.probs, label);
        probe.items = {{"logits", logits.get(), dlogits.get()}};
        probe.loss = [logits, label]() { return softmax_xent(*logits, label).loss; };
    };
    return run_probe("softmax_xent", build, rng, eps);
}

template <typename RnnLayer>
LayerCheck check_rnn(const std::string& name, SeededRng rng, real eps) {
    auto l1 = std::make_shared<RnnLayer>();
    auto l2 = std::make_shared<RnnLayer>();
    auto x = std::make_shared<Tensor>();
    auto up = std::make_shared<Tensor>();
    auto dx = std::make_shared<Tensor>();
    auto build = [&](SeededRng r, Probe& probe) {
        SeededRng xr = r.split("x");
        SeededRng ur = r.split("up");
        *l1 = RnnLayer(3, 4, r.split("l1"));
        *l2 = RnnLayer(4, 4, r.split("l2"));
        *x = seeded_uniform({4, 3}, -1, 1, xr);
        *up = seeded_uniform({4, 4}, -1, 1, ur);
        l2->forward(l1->forward(*x));
        Tensor d1 = l2->backward(*up);
        *dx = l1->backward(d1);
        probe.items = {{"x", x.get(), dx.get()}};
        auto add_params = [&probe](const std::string& prefix, RnnLayer& l) {
            if constexpr (std::is_same_v<RnnLayer, GruLayer>) {
                probe.items.push_back({prefix + ".w_r", &l.p.w_r, &l.g.w_r});
                probe.items.push_back({prefix + ".w_z", &l.p.w_z, &l.g.w_z});
                probe.items.push_back({prefix + ".w_h", &l.p.w_h, &l.g.w_h});
                probe.items.push_back({prefix + ".b_r", &l.p.b_r, &l.g.b_r});
                probe.items.push_back({prefix + ".b_z", &l.p.b_z, &l.g.b_z});
                probe.items.push_back({prefix + ".b_h", &l.p.b_h, &l.g.b_h});
            } else {
                probe.items.push_back({prefix + ".w_i", &l.p.w_i, &l.g.w_i});
                probe.items.push_back({prefix + ".w_f", &l.p.w_f, &l.g.w_f});
                probe.items.push_back({prefix + ".w_o", &l.p.w_o, &l.g.w_o});
                probe.items.push_back({prefix + ".w_c", &l.p.w_c, &l.g.w_c});
                probe.items.push_back({prefix + ".b_i", &l.p.b_i, &l.g.b_i});
                probe.items.push_back({prefix + ".b_f", &l.p.b_f, &l.g.b_f});
                probe.items.push_back({prefix + ".b_o", &l.p.b_o, &l.g.b_o});
                probe.items.push_back({prefix + ".b_c", &l.p.b_c, &l.g.b_c});
            }
        };
        add_params("l1", *l1);
        add_params("l2", *l2);
        probe.loss = [l1, l2, x, up]() {
            return weighted_sum(*up, l2->forward(l1->forward(*x)));
        };
    };
    return run_probe(name, build, rng, eps);
}

LayerCheck check_ensemble(SeededRng rng, real eps) {
    ZooConfig cfg;
    cfg.input_rows = 3;
    cfg.input_cols = 10;
    cfg.conv_filters = 2;
    cfg.gru_hidden = 4;
    cfg.dense_units = 8;
    cfg.classes = 2;
    cfg.aux_heads = true;
    constexpr real aux_weight = real(0.7);

    auto model = std::make_shared<EnsembleModel>(cfg, SeededRng(0));
    auto seg = std::make_shared<Tensor>();
    auto build = [&](SeededRng r, Probe& probe) {
        SeededRng sr = r.split("seg");
        *model = EnsembleModel(cfg, r.split("init"));
        *seg = seeded_uniform({cfg.input_rows, cfg.input_cols}, -1, 1, sr);
        size_t label = r.split("label").below(cfg.classes);
        model->zero_grads();
        model->forward_backward(*seg, label, aux_weight);
        probe.margin = model->nondiff_margin();
        if (probe.margin < kMarginMin) return;
        for (ParamRef& ref : model->params()) {
            probe.items.push_back({ref.name, ref.value, ref.grad});
        }
        probe.items.push_back({"input", seg.get(), &model->input_grad()});
        probe.loss = [model, seg, label, aux_weight]() {
            return model->loss_value(*seg, label, aux_weight);
        };
    };
    return run_probe("ensemble", build, rng, eps);
}

} // namespace

std::vector<LayerCheck> gradcheck_suite(size_t seeds, real eps, uint64_t master_seed) {
    if (seeds == 0) {
        throw std::invalid_argument("gradcheck_suite: need at least one seed");
    }
    std::vector<LayerCheck> totals;
    auto fold = [&totals](const LayerCheck& c) {
        for (LayerCheck& t : totals) {
            if (t.layer == c.layer) {
                t.max_rel_err = std::max(t.max_rel_err, c.max_rel_err);
                t.redraws += c.redraws;
                return;
            }
        }
        totals.push_back(c);
    };
    SeededRng root = SeededRng(master_seed).split("gradcheck");
    for (size_t s = 0; s < seeds; ++s) {
        SeededRng r = root.split(s);
        fold(check_dense(DenseAct::None, "dense_linear", r.split("dense_linear"), eps));
        fold(check_dense(DenseAct::Relu, "dense_relu", r.split("dense_relu"), eps));
        fold(check_dense(DenseAct::Softmax, "dense_softmax", r.split("dense_softmax"), eps));
        fold(check_conv(r.split("conv2d"), eps));
        fold(check_relu(r.split("relu"), eps));
        fold(check_maxpool(r.split("maxpool"), eps));
        fold(check_softmax_xent(r.split("softmax_xent"), eps));
        fold(check_rnn<GruLayer>("gru", r.split("gru"), eps));
        fold(check_rnn<LstmLayer>("lstm", r.split("lstm"), eps));
        fold(check_ensemble(r.split("ensemble"), eps));
    }
    return totals;
}

real gradcheck_suite_max_err(size_t seeds, real eps, uint64_t master_seed) {
    real worst = 0;
    for (const LayerCheck& c : gradcheck_suite(seeds, eps, master_seed)) {
        worst = std::max(worst, c.max_rel_err);
    }
    return worst;
}

} // namespace fallnet
