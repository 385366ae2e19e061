#include "fallnet/loso.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

#include "fallnet/serialize.hpp"

namespace fallnet {

namespace {

using nlohmann::json;

json zoo_to_json(const ZooConfig& z) {
    return json{{"input_rows", z.input_rows},
                {"input_cols", z.input_cols},
                {"conv_filters", z.conv_filters},
                {"gru_hidden", z.gru_hidden},
                {"dense_units", z.dense_units},
                {"classes", z.classes},
                {"aux_heads", z.aux_heads},
                {"temporal_last_only", z.temporal_last_only}};
}

ZooConfig zoo_from_json(const json& j) {
    ZooConfig z;
    z.input_rows = j.at("input_rows").get<size_t>();
    z.input_cols = j.at("input_cols").get<size_t>();
    z.conv_filters = j.at("conv_filters").get<size_t>();
    z.gru_hidden = j.at("gru_hidden").get<size_t>();
    z.dense_units = j.at("dense_units").get<size_t>();
    z.classes = j.at("classes").get<size_t>();
    z.aux_heads = j.at("aux_heads").get<bool>();
    z.temporal_last_only = j.at("temporal_last_only").get<bool>();
    return z;
}

json metrics_to_json(const MetricSet& m) {
    return json{{"accuracy", m.accuracy},
                {"recall", m.recall},
                {"precision", m.precision},
                {"f_score", m.f_score},
                {"degenerate", m.degenerate}};
}

json counts_to_json(const ConfusionCounts& c) {
    return json{{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}};
}

void write_history_csv(const std::filesystem::path& path, const TrainHistory& hist) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write history file: " + path.string());
    }
    out << "epoch,mean_loss\n";
    char buf[64];
    for (size_t e = 0; e < hist.mean_loss.size(); ++e) {
        std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1,
                      static_cast<double>(hist.mean_loss[e]));
        out << buf;
    }
}

FoldResult run_fold(ModelKind kind, const LosoFold& fold, const LosoOptions& opt,
                    SeededRng fold_rng) {
    FoldResult res;
    res.held_out = fold.held_out;
    res.train_segments = fold.train.size();
    res.test_segments = fold.test.size();

    std::unique_ptr<Model> model = build_model(kind, opt.zoo, fold_rng.split("init"));

    // Standardization stats come from the training side only.
    ChannelStats stats;
    std::vector<Segment> train_owned, test_owned;
    std::vector<const Segment*> train_ptrs, test_ptrs;
    if (opt.standardize) {
        stats = channel_stats(fold.train);
        auto transform = [&stats](const std::vector<const Segment*>& src,
                                  std::vector<Segment>& owned,
                                  std::vector<const Segment*>& ptrs) {
            owned.reserve(src.size());
            for (const Segment* s : src) {
                Segment copy = *s;
                copy.data = standardize_segment(s->data, stats);
                owned.push_back(std::move(copy));
            }
            for (const Segment& s : owned) {
                ptrs.push_back(&s);
            }
        };
        transform(fold.train, train_owned, train_ptrs);
        transform(fold.test, test_owned, test_ptrs);
    } else {
        train_ptrs = fold.train;
        test_ptrs = fold.test;
    }

    res.history = train(*model, train_ptrs, opt.train, fold_rng.split("train"));

    std::vector<size_t> predicted, actual;
    predicted.reserve(test_ptrs.size());
    actual.reserve(test_ptrs.size());
    for (const Segment* s : test_ptrs) {
        predicted.push_back(model->predict(s->data));
        actual.push_back(s->label);
    }
    res.counts = confusion(predicted, actual);
    res.metrics = compute_metrics(res.counts);

    if (!opt.out_dir.empty()) {
        std::filesystem::path fold_dir = opt.out_dir / ("fold_" + fold.held_out);
        std::filesystem::create_directories(fold_dir);
        std::vector<std::pair<std::string, Tensor>> extras;
        if (opt.standardize) {
            extras.emplace_back("standardize.mean", stats.mean);
            extras.emplace_back("standardize.sd", stats.sd);
        }
        WeightsFile wf =
            snapshot_weights(*model, fold_rng.seed(),
                             weights_meta_json(kind, opt.zoo, opt.standardize), extras);
        write_weights_file(fold_dir / "weights.bin", wf);
        write_history_csv(fold_dir / "history.csv", res.history);
    }
    return res;
}

} // namespace

LosoReport loso_run(ModelKind kind, const std::vector<Segment>& segments,
                    const LosoOptions& opt, SeededRng rng) {
    std::vector<LosoFold> folds = loso_folds(segments);
    SeededRng fold_root = rng.split("fold");

    LosoReport report;
    report.kind = kind;
    report.folds.resize(folds.size());

    size_t jobs = std::max<size_t>(1, std::min(opt.jobs, folds.size()));
    std::vector<std::exception_ptr> errors(folds.size());
    auto work = [&](size_t i) {
        try {
            report.folds[i] = run_fold(kind, folds[i], opt, fold_root.split(folds[i].held_out));
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (jobs == 1) {
        for (size_t i = 0; i < folds.size(); ++i) {
            work(i);
        }
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(jobs);
        for (size_t w = 0; w < jobs; ++w) {
            pool.emplace_back([&]() {
                for (size_t i = next.fetch_add(1); i < folds.size(); i = next.fetch_add(1)) {
                    work(i);
                }
            });
        }
        for (std::thread& t : pool) {
            t.join();
        }
    }
    for (size_t i = 0; i < folds.size(); ++i) {
        if (errors[i]) {
            std::rethrow_exception(errors[i]);
        }
    }

    for (const FoldResult& f : report.folds) {
        report.pooled_counts += f.counts;
    }
    report.pooled = compute_metrics(report.pooled_counts);
    MetricSet macro;
    for (const FoldResult& f : report.folds) {
        macro.accuracy += f.metrics.accuracy;
        macro.recall += f.metrics.recall;
        macro.precision += f.metrics.precision;
        macro.f_score += f.metrics.f_score;
        macro.degenerate = macro.degenerate || f.metrics.degenerate;
    }
    double n = static_cast<double>(report.folds.size());
    macro.accuracy /= n;
    macro.recall /= n;
    macro.precision /= n;
    macro.f_score /= n;
    report.macro = macro;
    return report;
}

std::string report_json(const LosoReport& report) {
    json folds = json::array();
    for (const FoldResult& f : report.folds) {
        folds.push_back(json{{"held_out", f.held_out},
                             {"train_segments", f.train_segments},
                             {"test_segments", f.test_segments},
                             {"counts", counts_to_json(f.counts)},
                             {"metrics", metrics_to_json(f.metrics)},
                             {"history", f.history.mean_loss}});
    }
    json j{{"model", model_kind_name(report.kind)},
           {"display_name", model_display_name(report.kind)},
           {"folds", folds},
           {"pooled_counts", counts_to_json(report.pooled_counts)},
           {"pooled", metrics_to_json(report.pooled)},
           {"macro", metrics_to_json(report.macro)}};
    return j.dump(2) + "\n";
}

std::string report_table(const std::vector<LosoReport>& reports, bool csv) {
    std::ostringstream os;
    if (csv) {
        os << "model,accuracy_pct,recall_pct,precision_pct,f_score_pct\n";
        char buf[160];
        for (const LosoReport& r : reports) {
            std::snprintf(buf, sizeof buf, "%s,%.2f,%.2f,%.2f,%.2f\n",
                          model_kind_name(r.kind).c_str(), percent2(r.pooled.accuracy),
                          percent2(r.pooled.recall), percent2(r.pooled.precision),
                          percent2(r.pooled.f_score));
            os << buf;
        }
        return os.str();
    }
    size_t name_w = std::string("Model").size();
    for (const LosoReport& r : reports) {
        name_w = std::max(name_w, model_display_name(r.kind).size());
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-*s  %12s  %10s  %13s  %11s\n",
                  static_cast<int>(name_w), "Model", "Accuracy (%)", "Recall (%)",
                  "Precision (%)", "F-score (%)");
    os << buf;
    for (const LosoReport& r : reports) {
        std::snprintf(buf, sizeof buf, "%-*s  %12.2f  %10.2f  %13.2f  %11.2f\n",
                      static_cast<int>(name_w), model_display_name(r.kind).c_str(),
                      percent2(r.pooled.accuracy), percent2(r.pooled.recall),
                      percent2(r.pooled.precision), percent2(r.pooled.f_score));
        os << buf;
    }
    return os.str();
}

std::string weights_meta_json(ModelKind kind, const ZooConfig& zoo, bool standardized) {
    json j{{"model", model_kind_name(kind)},
           {"zoo", zoo_to_json(zoo)},
           {"standardized", standardized}};
    return j.dump();
}

WeightsMeta parse_weights_meta(const std::string& json_text) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("weights metadata is not valid JSON: ") +
                                 e.what());
    }
    WeightsMeta meta;
    std::string name = j.at("model").get<std::string>();
    std::optional<ModelKind> kind = model_kind_from_name(name);
    if (!kind) {
        throw std::runtime_error("weights metadata names unknown model '" + name + "'");
    }
    meta.kind = *kind;
    meta.zoo = zoo_from_json(j.at("zoo"));
    meta.standardized = j.value("standardized", false);
    return meta;
}

} // namespace fallnet
