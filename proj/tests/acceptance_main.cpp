// Acceptance harness: checks the numbered release criteria end to end and
// prints one PASS/FAIL line each. Exits nonzero if any gating criterion
// fails. Criterion 9 needs an external dataset and is skipped (not failed)
// unless FALLNET_REAL_DATA points at a manifest.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <unistd.h>

#include "fallnet/data.hpp"
#include "fallnet/gradcheck.hpp"
#include "fallnet/layers.hpp"
#include "fallnet/loso.hpp"
#include "fallnet/metrics.hpp"
#include "fallnet/models.hpp"
#include "fallnet/optim.hpp"
#include "fallnet/rng.hpp"

using namespace fallnet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool ok = false;
    std::string detail;
};

int g_failures = 0;

void report(int criterion, const std::string& title, const Outcome& out) {
    std::printf("%s  criterion %d (%s): %s\n", out.ok ? "PASS" : "FAIL", criterion,
                title.c_str(), out.detail.c_str());
    std::fflush(stdout);
    if (!out.ok) {
        ++g_failures;
    }
}

void report_skip(int criterion, const std::string& title, const std::string& why) {
    std::printf("SKIP  criterion %d (%s): %s\n", criterion, title.c_str(), why.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list args;
    va_start(args, f);
    std::vsnprintf(buf, sizeof buf, f, args);
    va_end(args);
    return buf;
}

// --------------------------------------------------------------------------
// 1. Gradient correctness across all layer kinds and the tiny ensemble.

Outcome criterion1() {
    Clock::time_point t0 = Clock::now();
    std::vector<LayerCheck> checks = gradcheck_suite(100, real(1e-5), 20240601);
    double elapsed = seconds_since(t0);

    const char* required[] = {"dense_linear", "dense_relu",    "dense_softmax",
                              "conv2d",       "maxpool",       "softmax_xent",
                              "gru",          "lstm",          "ensemble"};
    double worst = 0;
    std::string worst_layer = "-";
    std::map<std::string, bool> seen;
    for (const LayerCheck& c : checks) {
        seen[c.layer] = true;
        if (static_cast<double>(c.max_rel_err) > worst) {
            worst = static_cast<double>(c.max_rel_err);
            worst_layer = c.layer;
        }
    }
    for (const char* name : required) {
        if (!seen.count(name)) {
            return {false, fmt("layer '%s' missing from the sweep", name)};
        }
    }
    bool ok = worst < 1e-4 && elapsed < 60.0;
    return {ok, fmt("max rel err %.3e (worst: %s) over 100 seeds in %.1f s (tol 1e-4, "
                    "budget 60 s)",
                    worst, worst_layer.c_str(), elapsed)};
}

// --------------------------------------------------------------------------
// 2. GRU cell semantics: pinned examples plus range/convexity invariants.

GruParams zero_params(size_t input, size_t hidden) {
    GruParams p;
    p.w_r = Tensor({hidden, hidden + input});
    p.w_z = Tensor({hidden, hidden + input});
    p.w_h = Tensor({hidden, hidden + input});
    p.b_r = Tensor({hidden});
    p.b_z = Tensor({hidden});
    p.b_h = Tensor({hidden});
    return p;
}

Outcome criterion2() {
    const double tol = 1e-10;

    // Example A: zero weights, zero state -> gates 0.5, h stays 0.
    {
        GruParams p = zero_params(2, 3);
        Tensor x({2}), h0({3});
        x.data()[0] = 0.7;
        x.data()[1] = -1.3;
        GruStep s = gru_cell_step(x, h0, p);
        for (size_t i = 0; i < 3; ++i) {
            if (std::abs(static_cast<double>(s.r.data()[i]) - 0.5) > tol ||
                std::abs(static_cast<double>(s.z.data()[i]) - 0.5) > tol ||
                std::abs(static_cast<double>(s.h.data()[i])) > tol) {
                return {false, "zero-weight example with h_prev=0 diverged"};
            }
        }
    }

    // Example B: zero weights, h_prev = 1 -> h = 0.5 elementwise.
    {
        GruParams p = zero_params(2, 3);
        Tensor x({2}), h0({3});
        for (size_t i = 0; i < 3; ++i) h0.data()[i] = 1.0;
        GruStep s = gru_cell_step(x, h0, p);
        for (size_t i = 0; i < 3; ++i) {
            if (std::abs(static_cast<double>(s.h.data()[i]) - 0.5) > tol) {
                return {false, "zero-weight example with h_prev=1 diverged"};
            }
        }
    }

    // Example C: hidden=2, d=1, hand-set weights, two steps unrolled by hand
    // with plain scalar arithmetic.
    {
        GruParams p = zero_params(1, 2);
        const double wr[6] = {0.1, -0.2, 0.3, 0.0, 0.2, -0.1};
        const double wz[6] = {-0.3, 0.1, 0.2, 0.2, -0.1, 0.1};
        const double wh[6] = {0.25, 0.15, -0.2, -0.1, 0.3, 0.2};
        const double br[2] = {0.05, -0.05}, bz[2] = {0.1, 0.0}, bh[2] = {0.0, 0.1};
        for (size_t i = 0; i < 6; ++i) {
            p.w_r.data()[i] = static_cast<real>(wr[i]);
            p.w_z.data()[i] = static_cast<real>(wz[i]);
            p.w_h.data()[i] = static_cast<real>(wh[i]);
        }
        for (size_t i = 0; i < 2; ++i) {
            p.b_r.data()[i] = static_cast<real>(br[i]);
            p.b_z.data()[i] = static_cast<real>(bz[i]);
            p.b_h.data()[i] = static_cast<real>(bh[i]);
        }
        const double x1 = 0.5, x2 = -1.0;
        auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };

        // step 1 from h = (0, 0)
        double r1a = sig(br[0] + wr[2] * x1), r1b = sig(br[1] + wr[5] * x1);
        double z1a = sig(bz[0] + wz[2] * x1), z1b = sig(bz[1] + wz[5] * x1);
        (void)r1a;
        (void)r1b; // reset gates multiply a zero state in step 1
        double hc1a = std::tanh(bh[0] + wh[2] * x1);
        double hc1b = std::tanh(bh[1] + wh[5] * x1);
        double h1a = z1a * hc1a, h1b = z1b * hc1b;

        // step 2 from h = (h1a, h1b)
        double r2a = sig(br[0] + wr[0] * h1a + wr[1] * h1b + wr[2] * x2);
        double r2b = sig(br[1] + wr[3] * h1a + wr[4] * h1b + wr[5] * x2);
        double z2a = sig(bz[0] + wz[0] * h1a + wz[1] * h1b + wz[2] * x2);
        double z2b = sig(bz[1] + wz[3] * h1a + wz[4] * h1b + wz[5] * x2);
        double hc2a = std::tanh(bh[0] + wh[0] * (r2a * h1a) + wh[1] * (r2b * h1b) +
                                wh[2] * x2);
        double hc2b = std::tanh(bh[1] + wh[3] * (r2a * h1a) + wh[4] * (r2b * h1b) +
                                wh[5] * x2);
        double h2a = (1.0 - z2a) * h1a + z2a * hc2a;
        double h2b = (1.0 - z2b) * h1b + z2b * hc2b;

        Tensor xt1({1}), xt2({1}), h0({2});
        xt1.data()[0] = static_cast<real>(x1);
        xt2.data()[0] = static_cast<real>(x2);
        GruStep s1 = gru_cell_step(xt1, h0, p);
        GruStep s2 = gru_cell_step(xt2, s1.h, p);
        double da = std::abs(static_cast<double>(s2.h.data()[0]) - h2a);
        double db = std::abs(static_cast<double>(s2.h.data()[1]) - h2b);
        if (da > tol || db > tol) {
            return {false, fmt("hand-unrolled 2-step oracle off by %.2e / %.2e", da, db)};
        }
    }

    // Invariants on 10^4 random steps: gates in (0,1), candidate in (-1,1),
    // h between h_prev and the candidate.
    SeededRng rng(20240602);
    size_t in = 3, hid = 4;
    GruParams p = GruParams::init(in, hid, rng.split("params"));
    for (size_t step = 0; step < 10000; ++step) {
        if (step % 500 == 0) {
            p = GruParams::init(in, hid, rng.split(step));
        }
        Tensor x({in}), h({hid});
        for (size_t i = 0; i < in; ++i) {
            x.data()[i] = static_cast<real>(rng.uniform(-3.0, 3.0));
        }
        for (size_t i = 0; i < hid; ++i) {
            h.data()[i] = static_cast<real>(rng.uniform(-1.0, 1.0));
        }
        GruStep s = gru_cell_step(x, h, p);
        for (size_t i = 0; i < hid; ++i) {
            double r = static_cast<double>(s.r.data()[i]);
            double z = static_cast<double>(s.z.data()[i]);
            double hc = static_cast<double>(s.hcand.data()[i]);
            double hp = static_cast<double>(h.data()[i]);
            double ht = static_cast<double>(s.h.data()[i]);
            double lo = std::min(hp, hc) - 1e-12, hi = std::max(hp, hc) + 1e-12;
            if (!(r > 0 && r < 1 && z > 0 && z < 1 && hc > -1 && hc < 1 && ht >= lo &&
                  ht <= hi)) {
                return {false, fmt("invariant violated at random step %zu", step)};
            }
        }
    }
    return {true, "pinned examples within 1e-10; invariants held on 10000 random steps"};
}

// --------------------------------------------------------------------------
// 3. Ensemble shape contract for the 3 x 140 input.

Outcome criterion3() {
    ZooConfig cfg;
    EnsembleModel model(cfg, SeededRng(3));
    bool ok = model.coarse_len() == 2208 && model.fine_len() == 1056 &&
              model.temporal_len() == 8960 && model.concat_len() == 12224;
    return {ok, fmt("branch lengths %zu / %zu / %zu, concat %zu (want 2208 / 1056 / "
                    "8960, 12224)",
                    model.coarse_len(), model.fine_len(), model.temporal_len(),
                    model.concat_len())};
}

// --------------------------------------------------------------------------
// 4. Windowing arithmetic at corpus scale: 1332 ADL + 466 Fall instances of
// 20 s at 20 Hz segment into exactly 5328 + 932 = 6260 windows.

Outcome criterion4() {
    Clock::time_point t0 = Clock::now();
    SynthConfig sc;
    sc.n_subjects = 2;
    sc.adl_per_subject = 666;  // 2 x 666 = 1332 ADL
    sc.falls_per_subject = 233; // 2 x 233 = 466 Fall
    sc.duration_s = 20.0;
    sc.sample_hz = 20.0; // already at the target rate
    sc.impact_time_s = 10.0;
    std::vector<RawInstance> instances = synth_dataset(sc, SeededRng(20240604));

    PipelineConfig pc;
    pc.source_hz = 20.0;

    size_t adl_instances = 0, fall_instances = 0, adl_segments = 0, fall_segments = 0;
    bool per_instance_ok = true;
    for (const RawInstance& inst : instances) {
        size_t n = segment_instance(inst, pc).size();
        if (inst.label == Label::Adl) {
            ++adl_instances;
            adl_segments += n;
            per_instance_ok = per_instance_ok && n == 4;
        } else {
            ++fall_instances;
            fall_segments += n;
            per_instance_ok = per_instance_ok && n == 2;
        }
    }
    std::vector<Segment> all = preprocess(instances, pc);
    double elapsed = seconds_since(t0);

    bool ok = per_instance_ok && adl_instances == 1332 && fall_instances == 466 &&
              adl_segments == 5328 && fall_segments == 932 && all.size() == 6260 &&
              elapsed < 120.0;
    return {ok, fmt("%zu ADL -> %zu segments, %zu Fall -> %zu segments, total %zu "
                    "(want 5328 + 932 = 6260) in %.1f s (budget 120 s)",
                    adl_instances, adl_segments, fall_instances, fall_segments,
                    all.size(), elapsed)};
}

// --------------------------------------------------------------------------
// 5. Metric identities: published operating point plus brute-force recounts.

Outcome criterion5() {
    double r = 0.9254, p = 0.9613;
    double f = 2 * r * p / (r + p);
    double f_pct = percent2(f);
    if (std::abs(f_pct - 94.30) > 1e-9) {
        return {false, fmt("F(0.9254, 0.9613) -> %.2f%%, expected 94.30%%", f_pct)};
    }
    if (std::abs(f_pct - 94.26) > 0.1) {
        return {false, fmt("F %.2f%% further than 0.1 pp from the reported 94.26%%",
                           f_pct)};
    }

    SeededRng rng(20240605);
    for (int trial = 0; trial < 200; ++trial) {
        size_t n = 1 + rng.below(400);
        std::vector<size_t> pred(n), act(n);
        size_t tp = 0, fp = 0, fn = 0, tn = 0; // brute-force recount
        for (size_t i = 0; i < n; ++i) {
            pred[i] = rng.below(2);
            act[i] = rng.below(2);
            if (act[i] == 1 && pred[i] == 1) ++tp;
            if (act[i] == 0 && pred[i] == 1) ++fp;
            if (act[i] == 1 && pred[i] == 0) ++fn;
            if (act[i] == 0 && pred[i] == 0) ++tn;
        }
        ConfusionCounts c = confusion(pred, act);
        if (c.tp != tp || c.fp != fp || c.fn != fn || c.tn != tn) {
            return {false, fmt("confusion recount mismatch on trial %d", trial)};
        }
        MetricSet m = compute_metrics(c);
        double acc = n ? static_cast<double>(tp + tn) / static_cast<double>(n) : 0;
        double rec = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0;
        double pre = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0;
        double fs = (rec + pre > 0) ? 2 * rec * pre / (rec + pre) : 0;
        if (std::abs(m.accuracy - acc) > 1e-12 || std::abs(m.recall - rec) > 1e-12 ||
            std::abs(m.precision - pre) > 1e-12 || std::abs(m.f_score - fs) > 1e-12) {
            return {false, fmt("metric identity mismatch on trial %d", trial)};
        }
    }
    return {true, "F(92.54%, 96.13%) = 94.30% (0.04 pp from reported 94.26%); 200 "
                  "random confusion matrices matched the brute-force recount"};
}

// --------------------------------------------------------------------------
// 6 + 7. End-to-end LOSO on the deterministic synthetic corpus, twice.

struct SixModelRun {
    std::vector<LosoReport> reports;
    std::string table;
    double elapsed = 0;
};

std::vector<Segment> synthetic_corpus() {
    SynthConfig sc; // 5 subjects, 8 ADL + 4 Fall, 20 s at 238 Hz
    std::vector<RawInstance> instances = synth_dataset(sc, SeededRng(20240606));
    PipelineConfig pc; // 238 -> 20 Hz, window 140, stride 70
    return preprocess(instances, pc);
}

SixModelRun run_six_models(const std::vector<Segment>& segments, const fs::path& dir) {
    Clock::time_point t0 = Clock::now();
    LosoOptions opt;
    opt.train.epochs = 40;
    opt.train.batch_size = 32;
    opt.train.adam.lr = real(0.01);
    opt.jobs = 1;

    SixModelRun run;
    for (ModelKind kind : all_model_kinds()) {
        opt.out_dir = dir / model_kind_name(kind);
        fs::create_directories(opt.out_dir);
        LosoReport report = loso_run(kind, segments, opt, SeededRng(42));
        std::ofstream(opt.out_dir / "report.json") << report_json(report);
        run.reports.push_back(std::move(report));
    }
    run.table = report_table(run.reports, false);
    std::ofstream(dir / "comparison.txt") << run.table;
    std::ofstream(dir / "comparison.csv") << report_table(run.reports, true);
    run.elapsed = seconds_since(t0);
    return run;
}

Outcome criterion6(const SixModelRun& run, size_t n_segments) {
    const LosoReport& ensemble = run.reports.back();
    if (ensemble.kind != ModelKind::EnsembleCfg) {
        return {false, "ensemble row missing from the comparison"};
    }
    bool table_ok = !run.table.empty();
    for (ModelKind kind : all_model_kinds()) {
        table_ok = table_ok &&
                   run.table.find(model_display_name(kind)) != std::string::npos;
    }
    bool ok = ensemble.pooled.f_score >= 0.95 && table_ok && run.elapsed < 900.0 &&
              ensemble.folds.size() == 5;
    return {ok, fmt("ensemble pooled F %.4f (want >= 0.95) on %zu segments, 5-fold "
                    "LOSO; six-model table %s; %.0f s (budget 900 s)",
                    ensemble.pooled.f_score, n_segments,
                    table_ok ? "complete" : "INCOMPLETE", run.elapsed)};
}

bool same_file_bytes(const fs::path& a, const fs::path& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    std::vector<char> ba((std::istreambuf_iterator<char>(fa)),
                         std::istreambuf_iterator<char>());
    std::vector<char> bb((std::istreambuf_iterator<char>(fb)),
                         std::istreambuf_iterator<char>());
    return fa && fb && ba == bb;
}

Outcome criterion7(const SixModelRun& a, const SixModelRun& b, const fs::path& dir_a,
                   const fs::path& dir_b) {
    for (size_t i = 0; i < a.reports.size(); ++i) {
        if (report_json(a.reports[i]) != report_json(b.reports[i])) {
            return {false, fmt("report for %s differs between runs",
                               model_kind_name(a.reports[i].kind).c_str())};
        }
    }
    if (a.table != b.table) {
        return {false, "comparison tables differ between runs"};
    }
    size_t files = 0;
    for (const auto& entry : fs::recursive_directory_iterator(dir_a)) {
        if (!entry.is_regular_file()) {
            continue;
        }
        fs::path rel = fs::relative(entry.path(), dir_a);
        ++files;
        if (!fs::exists(dir_b / rel)) {
            return {false, "second run is missing artifact " + rel.string()};
        }
        if (!same_file_bytes(entry.path(), dir_b / rel)) {
            return {false, "artifact differs between runs: " + rel.string()};
        }
    }
    return {true, fmt("two same-seed runs produced byte-identical artifacts "
                      "(%zu files: weights, history, reports)",
                      files)};
}

// --------------------------------------------------------------------------
// 8. Adam unit behavior.

Outcome criterion8() {
    for (double g0 : {2.0, -0.3, 1e-3, -50.0}) {
        Tensor w({1}), g({1});
        w.data()[0] = 1.0;
        g.data()[0] = static_cast<real>(g0);
        AdamConfig cfg; // lr 0.01
        Adam opt({{"w", &w, &g}}, cfg);
        opt.step();
        double moved = std::abs(static_cast<double>(w.data()[0]) - 1.0);
        double expect = 0.01 * std::abs(g0) / (std::abs(g0) + 1e-8);
        if (std::abs(moved - expect) > 1e-12 || std::abs(moved - 0.01) > 1e-6) {
            return {false, fmt("first step for g=%g moved %.12f, expected ~lr=0.01",
                               g0, moved)};
        }
        if ((g0 > 0) != (static_cast<double>(w.data()[0]) < 1.0)) {
            return {false, fmt("first step for g=%g went the wrong way", g0)};
        }
    }

    Tensor w({1}), g({1});
    w.data()[0] = 1.0;
    AdamConfig cfg;
    Adam opt({{"w", &w, &g}}, cfg);
    for (int t = 0; t < 100; ++t) {
        g.data()[0] = 2 * w.data()[0];
        opt.step();
    }
    double final_w = std::abs(static_cast<double>(w.data()[0]));
    bool ok = final_w < 0.5;
    return {ok, fmt("first-step magnitude within 1e-6 of lr for g in {2, -0.3, 1e-3, "
                    "-50}; 100 steps on w^2 from w=1 reached |w| = %.4f (want < 0.5)",
                    final_w)};
}

// --------------------------------------------------------------------------
// 9. Optional: user-supplied real dataset.

void criterion9() {
    const char* manifest = std::getenv("FALLNET_REAL_DATA");
    if (!manifest || !*manifest) {
        report_skip(9, "real-dataset reproduction",
                    "set FALLNET_REAL_DATA to a converted manifest.csv to enable; "
                    "non-gating");
        return;
    }
    try {
        double rate = 238.0;
        if (const char* r = std::getenv("FALLNET_REAL_RATE")) {
            rate = std::atof(r);
        }
        std::vector<RawInstance> instances = load_dataset(manifest, rate);
        PipelineConfig pc;
        pc.source_hz = rate;
        std::vector<Segment> segments = preprocess(instances, pc);
        LosoOptions opt;
        opt.train.epochs = 40;
        opt.train.batch_size = 32;
        LosoReport rep = loso_run(ModelKind::EnsembleCfg, segments, opt, SeededRng(42));
        double f = rep.pooled.f_score;
        Outcome out{f >= 0.92 && f <= 0.96,
                    fmt("ensemble pooled F %.4f over %zu folds (window 0.92-0.96)", f,
                        rep.folds.size())};
        // Non-gating: report but do not count a miss as failure.
        std::printf("%s  criterion 9 (real-dataset reproduction, non-gating): %s\n",
                    out.ok ? "PASS" : "WARN", out.detail.c_str());
    } catch (const std::exception& e) {
        std::printf("WARN  criterion 9 (real-dataset reproduction, non-gating): %s\n",
                    e.what());
    }
    std::fflush(stdout);
}

struct TempTree {
    fs::path path;
    explicit TempTree(const std::string& tag) {
        path = fs::temp_directory_path() /
               (tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempTree() { fs::remove_all(path); }
};

} // namespace

int main() {
    std::printf("acceptance harness: %s precision, %zu-byte real\n",
                sizeof(real) == 8 ? "double" : "single", sizeof(real));
    std::fflush(stdout);

    try {
        report(1, "gradient correctness", criterion1());
        report(2, "gru semantics", criterion2());
        report(3, "ensemble shape contract", criterion3());
        report(4, "windowing arithmetic", criterion4());
        report(5, "metric identities", criterion5());

        std::vector<Segment> corpus = synthetic_corpus();
        TempTree dir_a("fallnet_accept_a"), dir_b("fallnet_accept_b");
        SixModelRun run_a = run_six_models(corpus, dir_a.path);
        report(6, "end-to-end learning", criterion6(run_a, corpus.size()));
        SixModelRun run_b = run_six_models(corpus, dir_b.path);
        report(7, "determinism", criterion7(run_a, run_b, dir_a.path, dir_b.path));

        report(8, "adam unit behavior", criterion8());
        criterion9();
    } catch (const std::exception& e) {
        std::printf("FAIL  acceptance harness aborted: %s\n", e.what());
        return 1;
    }

    if (g_failures) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all gating criteria passed\n");
    return 0;
}
