#include <doctest.h>

#include <cmath>
#include <vector>

#include "fallnet/layers.hpp"
#include "fallnet/rng.hpp"
#include "fallnet/tensor.hpp"
#include "oracles.hpp"

using namespace fallnet;

namespace {

std::vector<double> as_vec(const Tensor& t) {
    return std::vector<double>(t.data(), t.data() + t.size());
}

} // namespace

TEST_CASE("gru cell step matches the gate equations") {
    SeededRng rng(4001);
    size_t in = 5, hid = 4;
    GruParams p = GruParams::init(in, hid, rng.split("p"));
    Tensor x = seeded_uniform({in}, -1.5, 1.5, rng);
    Tensor h_prev = seeded_uniform({hid}, -0.9, 0.9, rng);

    GruStep s = gru_cell_step(x, h_prev, p);
    oracle::GruStepRef ref = oracle::gru_step(
        as_vec(x), as_vec(h_prev), as_vec(p.w_r), as_vec(p.w_z), as_vec(p.w_h),
        as_vec(p.b_r), as_vec(p.b_z), as_vec(p.b_h), hid, in);

    for (size_t i = 0; i < hid; ++i) {
        CHECK(static_cast<double>(s.r.data()[i]) ==
              doctest::Approx(ref.r[i]).epsilon(1e-10));
        CHECK(static_cast<double>(s.z.data()[i]) ==
              doctest::Approx(ref.z[i]).epsilon(1e-10));
        CHECK(static_cast<double>(s.hcand.data()[i]) ==
              doctest::Approx(ref.hcand[i]).epsilon(1e-10));
        CHECK(static_cast<double>(s.h.data()[i]) ==
              doctest::Approx(ref.h[i]).epsilon(1e-10));
    }
}

TEST_CASE("gru activations stay in their analytic ranges") {
    SeededRng rng(4002);
    size_t in = 6, hid = 5;
    GruParams p = GruParams::init(in, hid, rng.split("p"));
    Tensor h = Tensor({hid});
    for (int t = 0; t < 20; ++t) {
        Tensor x = seeded_uniform({in}, -3.0, 3.0, rng);
        GruStep s = gru_cell_step(x, h, p);
        for (size_t i = 0; i < hid; ++i) {
            CHECK(static_cast<double>(s.r.data()[i]) > 0.0);
            CHECK(static_cast<double>(s.r.data()[i]) < 1.0);
            CHECK(static_cast<double>(s.z.data()[i]) > 0.0);
            CHECK(static_cast<double>(s.z.data()[i]) < 1.0);
            CHECK(static_cast<double>(s.hcand.data()[i]) > -1.0);
            CHECK(static_cast<double>(s.hcand.data()[i]) < 1.0);
            // h_t is a convex combination of h_prev and the candidate
            double lo = std::min(static_cast<double>(h.data()[i]),
                                 static_cast<double>(s.hcand.data()[i]));
            double hi = std::max(static_cast<double>(h.data()[i]),
                                 static_cast<double>(s.hcand.data()[i]));
            CHECK(static_cast<double>(s.h.data()[i]) >= lo - 1e-12);
            CHECK(static_cast<double>(s.h.data()[i]) <= hi + 1e-12);
        }
        h = s.h;
    }
}

TEST_CASE("gru with zero weights halves the previous state") {
    size_t in = 3, hid = 4;
    GruParams p;
    p.w_r = Tensor({hid, hid + in});
    p.w_z = Tensor({hid, hid + in});
    p.w_h = Tensor({hid, hid + in});
    p.b_r = Tensor({hid});
    p.b_z = Tensor({hid});
    p.b_h = Tensor({hid});
    Tensor x({in}), h_prev({hid});
    for (size_t i = 0; i < hid; ++i) h_prev.data()[i] = static_cast<real>(i) + 1;
    GruStep s = gru_cell_step(x, h_prev, p);
    for (size_t i = 0; i < hid; ++i) {
        CHECK(static_cast<double>(s.r.data()[i]) == doctest::Approx(0.5));
        CHECK(static_cast<double>(s.z.data()[i]) == doctest::Approx(0.5));
        CHECK(static_cast<double>(s.hcand.data()[i]) == doctest::Approx(0.0));
        CHECK(static_cast<double>(s.h.data()[i]) ==
              doctest::Approx(0.5 * static_cast<double>(h_prev.data()[i])));
    }
}

TEST_CASE("gru layer unrolls the cell from a zero initial state") {
    SeededRng rng(4003);
    size_t in = 4, hid = 3, steps = 6;
    GruLayer layer(in, hid, rng.split("layer"));
    Tensor x = seeded_uniform({steps, in}, -1.0, 1.0, rng);
    Tensor hs = layer.forward(x);
    REQUIRE(hs.shape() == std::vector<size_t>{steps, hid});

    Tensor h({hid});
    for (size_t t = 0; t < steps; ++t) {
        Tensor xt({in});
        for (size_t j = 0; j < in; ++j) xt.data()[j] = x.at(t, j);
        GruStep s = gru_cell_step(xt, h, layer.p);
        for (size_t j = 0; j < hid; ++j) {
            CHECK(static_cast<double>(hs.at(t, j)) ==
                  doctest::Approx(static_cast<double>(s.h.data()[j])).epsilon(1e-12));
        }
        h = s.h;
    }
}

TEST_CASE("lstm cell matches the reference recurrence") {
    SeededRng rng(4004);
    size_t in = 4, hid = 5, steps = 7;
    LstmLayer layer(in, hid, rng.split("lstm"));
    Tensor x = seeded_uniform({steps, in}, -1.2, 1.2, rng);
    Tensor hs = layer.forward(x);
    REQUIRE(hs.shape() == std::vector<size_t>{steps, hid});

    std::vector<double> h(hid, 0.0), c(hid, 0.0);
    for (size_t t = 0; t < steps; ++t) {
        std::vector<double> xt(in);
        for (size_t j = 0; j < in; ++j) xt[j] = static_cast<double>(x.at(t, j));
        oracle::LstmStepRef s = oracle::lstm_step(
            xt, h, c, as_vec(layer.p.w_i), as_vec(layer.p.w_f), as_vec(layer.p.w_o),
            as_vec(layer.p.w_c), as_vec(layer.p.b_i), as_vec(layer.p.b_f),
            as_vec(layer.p.b_o), as_vec(layer.p.b_c), hid, in);
        for (size_t j = 0; j < hid; ++j) {
            CHECK(static_cast<double>(hs.at(t, j)) ==
                  doctest::Approx(s.h[j]).epsilon(1e-10));
        }
        h = s.h;
        c = s.c;
    }
}

TEST_CASE("stacked gru layers compose by feeding hidden sequences forward") {
    SeededRng rng(4005);
    size_t in = 3, hid1 = 4, hid2 = 5, steps = 5;
    GruLayer l1(in, hid1, rng.split("l1"));
    GruLayer l2(hid1, hid2, rng.split("l2"));
    Tensor x = seeded_uniform({steps, in}, -1.0, 1.0, rng);
    Tensor h1 = l1.forward(x);
    Tensor h2 = l2.forward(h1);
    CHECK(h2.shape() == std::vector<size_t>{steps, hid2});
    CHECK(h2.all_finite());
}

TEST_CASE("gru init is seed stable and parameter shapes are correct") {
    size_t in = 6, hid = 4;
    GruParams a = GruParams::init(in, hid, SeededRng(500));
    GruParams b = GruParams::init(in, hid, SeededRng(500));
    CHECK(a.hidden() == hid);
    CHECK(a.input() == in);
    REQUIRE(a.w_r.shape() == std::vector<size_t>{hid, hid + in});
    REQUIRE(a.b_h.shape() == std::vector<size_t>{hid});
    for (size_t i = 0; i < a.w_h.size(); ++i) {
        CHECK(a.w_h.data()[i] == b.w_h.data()[i]);
    }
    for (size_t i = 0; i < hid; ++i) {
        CHECK(static_cast<double>(a.b_r.data()[i]) == 0.0);
        CHECK(static_cast<double>(a.b_z.data()[i]) == 0.0);
        CHECK(static_cast<double>(a.b_h.data()[i]) == 0.0);
    }
}
