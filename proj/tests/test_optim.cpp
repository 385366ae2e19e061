#include <doctest.h>

#include <cmath>
#include <memory>
#include <vector>

#include "fallnet/data.hpp"
#include "fallnet/models.hpp"
#include "fallnet/optim.hpp"
#include "fallnet/rng.hpp"
#include "fallnet/tensor.hpp"
#include "oracles.hpp"

using namespace fallnet;

TEST_CASE("adam's first step matches the closed form") {
    // With m = v = 0 and bias correction, step 1 moves by lr * g / (|g| + eps'),
    // i.e. almost exactly lr in the direction of the gradient's sign.
    Tensor w({1}), g({1});
    w.data()[0] = 1.0;
    g.data()[0] = 2.0;
    AdamConfig cfg; // lr 0.01
    Adam opt({{"w", &w, &g}}, cfg);
    opt.step();
    double expect = 1.0;
    double m = 0, v = 0;
    oracle::adam_step(expect, 2.0, m, v, 1, 0.01, 0.9, 0.999, 1e-8);
    CHECK(static_cast<double>(w.data()[0]) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(static_cast<double>(w.data()[0]) == doctest::Approx(0.99).epsilon(1e-6));
}

TEST_CASE("adam follows the scalar reference across many steps") {
    Tensor w({3}), g({3});
    double wr[3] = {0.5, -1.25, 2.0};
    for (size_t i = 0; i < 3; ++i) w.data()[i] = static_cast<real>(wr[i]);
    double m[3] = {0, 0, 0}, v[3] = {0, 0, 0};
    AdamConfig cfg;
    cfg.lr = real(0.005);
    Adam opt({{"w", &w, &g}}, cfg);
    SeededRng rng(7001);
    for (size_t t = 1; t <= 200; ++t) {
        for (size_t i = 0; i < 3; ++i) {
            double gv = rng.uniform(-1.0, 1.0);
            g.data()[i] = static_cast<real>(gv);
            oracle::adam_step(wr[i], gv, m[i], v[i], t, 0.005, 0.9, 0.999, 1e-8);
        }
        opt.step();
        for (size_t i = 0; i < 3; ++i) {
            CHECK(static_cast<double>(w.data()[i]) ==
                  doctest::Approx(wr[i]).epsilon(1e-10));
        }
    }
    CHECK(opt.steps() == 200);
}

TEST_CASE("adam minimizes a quadratic") {
    Tensor w({1}), g({1});
    w.data()[0] = 1.0;
    AdamConfig cfg; // defaults
    Adam opt({{"w", &w, &g}}, cfg);
    for (int t = 0; t < 100; ++t) {
        g.data()[0] = 2 * w.data()[0]; // d/dw w^2
        opt.step();
    }
    CHECK(std::abs(static_cast<double>(w.data()[0])) < 0.5);
}

namespace {

std::vector<Segment> toy_dataset(size_t n, uint64_t seed) {
    // Two separable clusters: label 1 windows carry a large positive offset.
    SeededRng rng(seed);
    std::vector<Segment> out;
    for (size_t i = 0; i < n; ++i) {
        Segment s;
        s.label = i % 2;
        s.subject = "s" + std::to_string(i % 3);
        s.source_id = "inst" + std::to_string(i);
        s.data = Tensor({3, 20});
        for (size_t j = 0; j < s.data.size(); ++j) {
            double base = s.label == 1 ? 3.0 : -3.0;
            s.data.data()[j] = static_cast<real>(base + rng.uniform(-0.5, 0.5));
        }
        out.push_back(std::move(s));
    }
    return out;
}

ZooConfig tiny_cfg() {
    ZooConfig cfg;
    cfg.input_cols = 20;
    cfg.conv_filters = 4;
    cfg.gru_hidden = 6;
    cfg.dense_units = 8;
    return cfg;
}

} // namespace

TEST_CASE("training reduces the loss on separable data") {
    std::vector<Segment> data = toy_dataset(24, 8001);
    ZooConfig cfg = tiny_cfg();
    auto model = build_model(ModelKind::SimpleCnn, cfg, SeededRng(8002));
    TrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 8;
    TrainHistory hist = train(*model, data, tc, SeededRng(8003));
    REQUIRE(hist.mean_loss.size() == 8);
    CHECK(static_cast<double>(hist.mean_loss.back()) <
          static_cast<double>(hist.mean_loss.front()));
    size_t correct = 0;
    for (const Segment& s : data) {
        if (model->predict(s.data) == s.label) {
            ++correct;
        }
    }
    CHECK(correct >= 22); // near-perfect on trivially separable data
}

TEST_CASE("training is deterministic under a fixed seed pair") {
    std::vector<Segment> data = toy_dataset(16, 8011);
    ZooConfig cfg = tiny_cfg();
    TrainConfig tc;
    tc.epochs = 3;
    tc.batch_size = 5; // exercises a trailing partial batch (16 = 3*5 + 1)
    auto a = build_model(ModelKind::SimpleGru, cfg, SeededRng(8012));
    auto b = build_model(ModelKind::SimpleGru, cfg, SeededRng(8012));
    TrainHistory ha = train(*a, data, tc, SeededRng(8013));
    TrainHistory hb = train(*b, data, tc, SeededRng(8013));
    REQUIRE(ha.mean_loss.size() == hb.mean_loss.size());
    for (size_t i = 0; i < ha.mean_loss.size(); ++i) {
        CHECK(ha.mean_loss[i] == hb.mean_loss[i]);
    }
    auto pa = a->params();
    auto pb = b->params();
    for (size_t i = 0; i < pa.size(); ++i) {
        for (size_t j = 0; j < pa[i].value->size(); ++j) {
            CHECK(pa[i].value->data()[j] == pb[i].value->data()[j]);
        }
    }
}

TEST_CASE("batch gradient equals the mean of per-sample gradients") {
    std::vector<Segment> data = toy_dataset(4, 8021);
    ZooConfig cfg = tiny_cfg();
    auto model = build_model(ModelKind::SimpleCnn, cfg, SeededRng(8022));

    // Accumulate the whole batch, scale by 1/B (as the trainer does).
    model->zero_grads();
    for (const Segment& s : data) {
        (void)model->forward_backward(s.data, s.label, 0.0);
    }
    model->scale_grads(real(1.0) / real(4.0));
    std::vector<std::vector<double>> batch_grads;
    for (ParamRef& p : model->params()) {
        batch_grads.emplace_back(p.grad->data(), p.grad->data() + p.grad->size());
    }

    // Mean of individual per-sample gradients.
    std::vector<std::vector<double>> mean_grads(batch_grads.size());
    for (size_t i = 0; i < batch_grads.size(); ++i) {
        mean_grads[i].assign(batch_grads[i].size(), 0.0);
    }
    for (const Segment& s : data) {
        model->zero_grads();
        (void)model->forward_backward(s.data, s.label, 0.0);
        auto params = model->params();
        for (size_t i = 0; i < params.size(); ++i) {
            for (size_t j = 0; j < params[i].grad->size(); ++j) {
                mean_grads[i][j] += static_cast<double>(params[i].grad->data()[j]) / 4.0;
            }
        }
    }
    for (size_t i = 0; i < batch_grads.size(); ++i) {
        for (size_t j = 0; j < batch_grads[i].size(); ++j) {
            CHECK(batch_grads[i][j] == doctest::Approx(mean_grads[i][j]).epsilon(1e-9));
        }
    }
}

TEST_CASE("train rejects out-of-range labels") {
    std::vector<Segment> data = toy_dataset(4, 8031);
    data[2].label = 5;
    ZooConfig cfg = tiny_cfg();
    auto model = build_model(ModelKind::SimpleCnn, cfg, SeededRng(8032));
    TrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS(train(*model, data, tc, SeededRng(8033)));
}

TEST_CASE("train rejects an empty dataset and zero-size batches") {
    std::vector<Segment> empty;
    ZooConfig cfg = tiny_cfg();
    auto model = build_model(ModelKind::SimpleCnn, cfg, SeededRng(8042));
    TrainConfig tc;
    CHECK_THROWS(train(*model, empty, tc, SeededRng(1)));
    std::vector<Segment> data = toy_dataset(4, 8041);
    tc.batch_size = 0;
    CHECK_THROWS(train(*model, data, tc, SeededRng(1)));
}
