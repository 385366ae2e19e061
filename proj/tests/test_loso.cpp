#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <string>
#include <vector>

#include "fallnet/data.hpp"
#include "fallnet/loso.hpp"
#include "fallnet/metrics.hpp"
#include "fallnet/rng.hpp"

using namespace fallnet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() /
               ("fallnet_loso_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

// Small separable corpus over a handful of subjects.
std::vector<Segment> tiny_corpus(size_t subjects, size_t per_subject, uint64_t seed) {
    SeededRng rng(seed);
    std::vector<Segment> out;
    for (size_t s = 0; s < subjects; ++s) {
        for (size_t i = 0; i < per_subject; ++i) {
            Segment seg;
            seg.subject = "subj" + std::to_string(s);
            seg.source_id = seg.subject + "_" + std::to_string(i);
            seg.label = i % 2;
            seg.data = Tensor({3, 16});
            double base = seg.label == 1 ? 2.5 : -2.5;
            for (size_t j = 0; j < seg.data.size(); ++j) {
                seg.data.data()[j] =
                    static_cast<real>(base + rng.uniform(-0.4, 0.4));
            }
            out.push_back(std::move(seg));
        }
    }
    return out;
}

LosoOptions tiny_options() {
    LosoOptions opt;
    opt.zoo.input_cols = 16;
    opt.zoo.conv_filters = 3;
    opt.zoo.gru_hidden = 4;
    opt.zoo.dense_units = 6;
    opt.train.epochs = 3;
    opt.train.batch_size = 4;
    return opt;
}

} // namespace

TEST_CASE("loso runs one fold per subject and pools counts by summation") {
    std::vector<Segment> segs = tiny_corpus(3, 8, 12001);
    LosoOptions opt = tiny_options();
    LosoReport rep = loso_run(ModelKind::SimpleCnn, segs, opt, SeededRng(12002));

    REQUIRE(rep.folds.size() == 3);
    CHECK(rep.kind == ModelKind::SimpleCnn);
    ConfusionCounts sum;
    size_t test_total = 0;
    for (const FoldResult& f : rep.folds) {
        CHECK(f.train_segments == 16);
        CHECK(f.test_segments == 8);
        CHECK(f.counts.total() == 8);
        CHECK(f.history.mean_loss.size() == opt.train.epochs);
        sum += f.counts;
        test_total += f.test_segments;
    }
    CHECK(test_total == segs.size());
    CHECK(rep.pooled_counts.tp == sum.tp);
    CHECK(rep.pooled_counts.fp == sum.fp);
    CHECK(rep.pooled_counts.fn == sum.fn);
    CHECK(rep.pooled_counts.tn == sum.tn);

    MetricSet pooled = compute_metrics(sum);
    CHECK(rep.pooled.accuracy == doctest::Approx(pooled.accuracy));
    CHECK(rep.pooled.f_score == doctest::Approx(pooled.f_score));

    double acc = 0;
    for (const FoldResult& f : rep.folds) {
        acc += f.metrics.accuracy;
    }
    CHECK(rep.macro.accuracy == doctest::Approx(acc / 3.0));

    // separable data should be learnable even in this tiny setting
    CHECK(rep.pooled.accuracy > 0.8);
}

TEST_CASE("fold order follows sorted subject ids") {
    std::vector<Segment> segs = tiny_corpus(4, 4, 12011);
    LosoOptions opt = tiny_options();
    opt.train.epochs = 1;
    LosoReport rep = loso_run(ModelKind::SimpleCnn, segs, opt, SeededRng(12012));
    REQUIRE(rep.folds.size() == 4);
    for (size_t i = 0; i < 4; ++i) {
        CHECK(rep.folds[i].held_out == "subj" + std::to_string(i));
    }
}

TEST_CASE("reports are byte-identical across repeated runs") {
    std::vector<Segment> segs = tiny_corpus(3, 6, 12021);
    LosoOptions opt = tiny_options();
    opt.train.epochs = 2;
    LosoReport a = loso_run(ModelKind::SimpleGru, segs, opt, SeededRng(12022));
    LosoReport b = loso_run(ModelKind::SimpleGru, segs, opt, SeededRng(12022));
    CHECK(report_json(a) == report_json(b));
}

TEST_CASE("parallel fold execution matches the sequential report") {
    std::vector<Segment> segs = tiny_corpus(4, 6, 12031);
    LosoOptions seq = tiny_options();
    seq.train.epochs = 2;
    LosoOptions par = seq;
    par.jobs = 4;
    LosoReport a = loso_run(ModelKind::SimpleCnn, segs, seq, SeededRng(12032));
    LosoReport b = loso_run(ModelKind::SimpleCnn, segs, par, SeededRng(12032));
    CHECK(report_json(a) == report_json(b));
}

TEST_CASE("standardization option changes the computation but stays deterministic") {
    std::vector<Segment> segs = tiny_corpus(3, 6, 12041);
    LosoOptions plain = tiny_options();
    plain.train.epochs = 2;
    LosoOptions std_opt = plain;
    std_opt.standardize = true;
    LosoReport a = loso_run(ModelKind::SimpleCnn, segs, plain, SeededRng(12042));
    LosoReport b = loso_run(ModelKind::SimpleCnn, segs, std_opt, SeededRng(12042));
    LosoReport b2 = loso_run(ModelKind::SimpleCnn, segs, std_opt, SeededRng(12042));
    CHECK(report_json(b) == report_json(b2));
    CHECK(report_json(a) != report_json(b));
}

TEST_CASE("out_dir receives per-fold weights and training history") {
    TempDir dir;
    std::vector<Segment> segs = tiny_corpus(2, 6, 12051);
    LosoOptions opt = tiny_options();
    opt.train.epochs = 2;
    opt.out_dir = dir.path;
    LosoReport rep = loso_run(ModelKind::SimpleCnn, segs, opt, SeededRng(12052));
    REQUIRE(rep.folds.size() == 2);
    for (const FoldResult& f : rep.folds) {
        fs::path fold_dir = dir.path / ("fold_" + f.held_out);
        CHECK(fs::exists(fold_dir / "weights.bin"));
        CHECK(fs::exists(fold_dir / "history.csv"));
    }
}

TEST_CASE("report json exposes the expected structure") {
    std::vector<Segment> segs = tiny_corpus(2, 4, 12061);
    LosoOptions opt = tiny_options();
    opt.train.epochs = 1;
    LosoReport rep = loso_run(ModelKind::EnsembleCfg, segs, opt, SeededRng(12062));
    std::string json = report_json(rep);
    CHECK(json.find("\"model\"") != std::string::npos);
    CHECK(json.find("ensemble_cfg") != std::string::npos);
    CHECK(json.find("\"pooled\"") != std::string::npos);
    CHECK(json.find("\"macro\"") != std::string::npos);
    CHECK(json.find("\"folds\"") != std::string::npos);
    CHECK(json.find("\"pooled_counts\"") != std::string::npos);
}

TEST_CASE("comparison table renders one row per model with percent entries") {
    std::vector<Segment> segs = tiny_corpus(2, 4, 12071);
    LosoOptions opt = tiny_options();
    opt.train.epochs = 1;
    std::vector<LosoReport> reports;
    reports.push_back(loso_run(ModelKind::SimpleCnn, segs, opt, SeededRng(12072)));
    reports.push_back(loso_run(ModelKind::SimpleGru, segs, opt, SeededRng(12072)));

    std::string table = report_table(reports, false);
    CHECK(table.find("Simple CNN") != std::string::npos);
    CHECK(table.find("Simple GRU") != std::string::npos);
    CHECK(table.find("Accuracy") != std::string::npos);

    std::string csv = report_table(reports, true);
    CHECK(csv.find("model,accuracy_pct,recall_pct,precision_pct,f_score_pct") !=
          std::string::npos);
    CHECK(csv.find("simple_cnn,") != std::string::npos);
    CHECK(csv.find("simple_gru,") != std::string::npos);
}

TEST_CASE("weights meta json round-trips the evaluation contract") {
    ZooConfig zoo;
    zoo.input_cols = 99;
    zoo.gru_hidden = 17;
    zoo.aux_heads = false;
    std::string meta = weights_meta_json(ModelKind::CnnLstm, zoo, true);
    WeightsMeta parsed = parse_weights_meta(meta);
    CHECK(parsed.kind == ModelKind::CnnLstm);
    CHECK(parsed.zoo == zoo);
    CHECK(parsed.standardized);
}
