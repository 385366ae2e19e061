#pragma once

#include <filesystem>

#include "fallnet/data.hpp"
#include "fallnet/metrics.hpp"
#include "fallnet/models.hpp"
#include "fallnet/optim.hpp"

namespace fallnet {

struct FoldResult {
    std::string held_out;
    ConfusionCounts counts;
    MetricSet metrics;
    TrainHistory history;
    size_t train_segments = 0;
    size_t test_segments = 0;
};

struct LosoReport {
    ModelKind kind = ModelKind::SimpleCnn;
    std::vector<FoldResult> folds;
    ConfusionCounts pooled_counts;
    MetricSet pooled; // headline numbers: metrics of the summed counts
    MetricSet macro;  // unweighted mean of the per-fold metric values
};

struct LosoOptions {
    ZooConfig zoo;
    TrainConfig train;
    bool standardize = false; // per-fold channel stats fit on the train side
    size_t jobs = 1;          // worker threads across folds
    std::filesystem::path out_dir; // when set: fold_<id>/{weights.bin,history.csv}
};

// Leave-one-subject-out protocol: per held-out subject, build a fresh model
// from a substream keyed by the subject id, train on everyone else, test on
// the held-out subject. Fold order, artifacts, and the report are
// deterministic for a given rng seed regardless of `jobs`.
LosoReport loso_run(ModelKind kind, const std::vector<Segment>& segments,
                    const LosoOptions& opt, SeededRng rng);

std::string report_json(const LosoReport& report);

// One row per report: pooled metrics as percentages, two decimals, half
// away from zero. `csv` picks machine layout over the aligned text table.
std::string report_table(const std::vector<LosoReport>& reports, bool csv);

// Weights-file metadata (JSON) describing how to rebuild and feed the model.
std::string weights_meta_json(ModelKind kind, const ZooConfig& zoo, bool standardized);

struct WeightsMeta {
    ModelKind kind = ModelKind::SimpleCnn;
    ZooConfig zoo;
    bool standardized = false;
};

WeightsMeta parse_weights_meta(const std::string& json_text);

} // namespace fallnet
