#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fallnet/data.hpp"
#include "fallnet/gradcheck.hpp"
#include "fallnet/loso.hpp"
#include "fallnet/metrics.hpp"
#include "fallnet/models.hpp"
#include "fallnet/optim.hpp"
#include "fallnet/serialize.hpp"

// Exit codes: 0 success, 1 runtime failure, 2 usage error.

namespace {

using nlohmann::json;
using namespace fallnet;

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

// Thrown for problems the user can fix on the command line (bad config file,
// unknown model name); mapped to exit code 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json load_config_file(const std::string& path) {
    if (path.empty()) {
        return json::object();
    }
    std::ifstream in(path);
    if (!in) {
        throw UsageError("cannot open config file: " + path);
    }
    try {
        json j = json::parse(in);
        if (!j.is_object()) {
            throw UsageError("config file must hold a JSON object: " + path);
        }
        return j;
    } catch (const json::exception& e) {
        throw UsageError("config file " + path + " is not valid JSON: " + e.what());
    }
}

// Precedence: command-line flag > config file value > built-in default.
class ConfigOverlay {
public:
    ConfigOverlay(CLI::App* cmd, json cfg) : cmd_(cmd), cfg_(std::move(cfg)) {
        for (auto it = cfg_.begin(); it != cfg_.end(); ++it) {
            unused_.insert(it.key());
        }
    }

    template <typename T>
    void maybe(const std::string& key, T& target) {
        unused_.erase(key);
        if (!cfg_.contains(key) || cmd_->count("--" + key) > 0) {
            return;
        }
        try {
            target = cfg_.at(key).get<T>();
        } catch (const json::exception&) {
            throw UsageError("config key '" + key + "' has the wrong type");
        }
    }

    void finish() const {
        if (!unused_.empty()) {
            throw UsageError("config file has unknown key '" + *unused_.begin() + "'");
        }
    }

private:
    CLI::App* cmd_;
    json cfg_;
    std::set<std::string> unused_;
};

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write " + path.string());
    }
    out << text;
}

void write_config_snapshot(const std::filesystem::path& dir, const json& effective) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "config.json", effective.dump(2) + "\n");
}

ModelKind parse_model_name(const std::string& name) {
    std::optional<ModelKind> kind = model_kind_from_name(name);
    if (!kind) {
        std::string known;
        for (ModelKind k : all_model_kinds()) {
            known += (known.empty() ? "" : ", ") + model_kind_name(k);
        }
        throw UsageError("unknown model '" + name + "' (known: " + known + ", all)");
    }
    return *kind;
}

void print_metrics(const ConfusionCounts& c, const MetricSet& m) {
    std::printf("counts: tp=%zu fp=%zu fn=%zu tn=%zu (total %zu)\n", c.tp, c.fp, c.fn, c.tn,
                c.total());
    std::printf("accuracy:  %6.2f %%\n", percent2(m.accuracy));
    std::printf("recall:    %6.2f %%\n", percent2(m.recall));
    std::printf("precision: %6.2f %%\n", percent2(m.precision));
    std::printf("f-score:   %6.2f %%\n", percent2(m.f_score));
    if (m.degenerate) {
        std::printf("note: one or more ratios were 0/0 and reported as 0\n");
    }
}

// --------------------------------------------------------------------------
// synth

struct SynthArgs {
    std::string out, config;
    uint64_t seed = 42;
    SynthConfig synth;
};

int cmd_synth(CLI::App* cmd, SynthArgs& a) {
    ConfigOverlay overlay(cmd, load_config_file(a.config));
    overlay.maybe("seed", a.seed);
    overlay.maybe("subjects", a.synth.n_subjects);
    overlay.maybe("adl", a.synth.adl_per_subject);
    overlay.maybe("falls", a.synth.falls_per_subject);
    overlay.maybe("duration", a.synth.duration_s);
    overlay.maybe("rate", a.synth.sample_hz);
    overlay.maybe("impact-time", a.synth.impact_time_s);
    overlay.finish();
    if (a.synth.n_subjects == 0)
        throw UsageError("--subjects must be at least 1");
    if (a.synth.adl_per_subject + a.synth.falls_per_subject == 0)
        throw UsageError("--adl and --falls cannot both be 0");

    std::vector<RawInstance> data = synth_dataset(a.synth, SeededRng(a.seed));
    write_dataset(data, a.out);
    write_config_snapshot(a.out, json{{"command", "synth"},
                                      {"seed", a.seed},
                                      {"subjects", a.synth.n_subjects},
                                      {"adl", a.synth.adl_per_subject},
                                      {"falls", a.synth.falls_per_subject},
                                      {"duration", a.synth.duration_s},
                                      {"rate", a.synth.sample_hz},
                                      {"impact-time", a.synth.impact_time_s}});
    size_t falls = 0;
    for (const RawInstance& inst : data) {
        falls += inst.label == Label::Fall;
    }
    std::printf("wrote %zu instances (%zu adl, %zu fall) for %zu subjects to %s\n",
                data.size(), data.size() - falls, falls, a.synth.n_subjects, a.out.c_str());
    return kExitOk;
}

// --------------------------------------------------------------------------
// shared train/loso/eval plumbing

struct DataArgs {
    std::string data;
    PipelineConfig pipeline;
};

void add_pipeline_flags(CLI::App* cmd, DataArgs& a) {
    cmd->add_option("--data", a.data, "manifest CSV of the dataset")->required();
    cmd->add_option("--rate", a.pipeline.source_hz, "sample rate of the instance files (Hz)");
    cmd->add_option("--target-rate", a.pipeline.target_hz, "resampling target rate (Hz)");
    cmd->add_option("--window", a.pipeline.window, "segment length in resampled samples");
    cmd->add_option("--stride", a.pipeline.stride, "segment stride in resampled samples");
    cmd->add_option("--impact-time", a.pipeline.impact_time_s,
                    "impact instant for fall recordings (s)");
}

void overlay_pipeline(ConfigOverlay& overlay, DataArgs& a) {
    overlay.maybe("data", a.data);
    overlay.maybe("rate", a.pipeline.source_hz);
    overlay.maybe("target-rate", a.pipeline.target_hz);
    overlay.maybe("window", a.pipeline.window);
    overlay.maybe("stride", a.pipeline.stride);
    overlay.maybe("impact-time", a.pipeline.impact_time_s);
}

json pipeline_json(const DataArgs& a) {
    return json{{"data", a.data},
                {"rate", a.pipeline.source_hz},
                {"target-rate", a.pipeline.target_hz},
                {"window", a.pipeline.window},
                {"stride", a.pipeline.stride},
                {"impact-time", a.pipeline.impact_time_s}};
}

struct TrainArgs {
    DataArgs data;
    std::string model = "ensemble_cfg";
    std::string out, config;
    uint64_t seed = 42;
    TrainConfig train;
    bool standardize = false;
    bool no_aux_heads = false;
    bool temporal_last_only = false;
};

void add_train_flags(CLI::App* cmd, TrainArgs& a, bool model_allows_all) {
    add_pipeline_flags(cmd, a.data);
    cmd->add_option("--model", a.model,
                    model_allows_all ? "model to run, or 'all'" : "model to train");
    cmd->add_option("--out", a.out, "output directory")->required();
    cmd->add_option("--config", a.config, "JSON config file (flags override it)");
    cmd->add_option("--seed", a.seed, "master seed");
    cmd->add_option("--epochs", a.train.epochs, "training epochs");
    cmd->add_option("--batch", a.train.batch_size, "mini-batch size");
    cmd->add_option("--lr", a.train.adam.lr, "Adam learning rate");
    cmd->add_option("--aux-weight", a.train.aux_weight,
                    "weight of the ensemble auxiliary losses");
    cmd->add_flag("--standardize", a.standardize,
                  "standardize channels with training-set statistics");
    cmd->add_flag("--no-aux-heads", a.no_aux_heads, "build the ensemble without aux heads");
    cmd->add_flag("--temporal-last-only", a.temporal_last_only,
                  "ensemble GRU branch feeds only its last step");
}

void overlay_train(ConfigOverlay& overlay, TrainArgs& a) {
    overlay_pipeline(overlay, a.data);
    overlay.maybe("model", a.model);
    overlay.maybe("seed", a.seed);
    overlay.maybe("epochs", a.train.epochs);
    overlay.maybe("batch", a.train.batch_size);
    overlay.maybe("lr", a.train.adam.lr);
    overlay.maybe("aux-weight", a.train.aux_weight);
    overlay.maybe("standardize", a.standardize);
    overlay.maybe("no-aux-heads", a.no_aux_heads);
    overlay.maybe("temporal-last-only", a.temporal_last_only);
}

json train_json(const TrainArgs& a) {
    json j = pipeline_json(a.data);
    j["model"] = a.model;
    j["seed"] = a.seed;
    j["epochs"] = a.train.epochs;
    j["batch"] = a.train.batch_size;
    j["lr"] = a.train.adam.lr;
    j["aux-weight"] = a.train.aux_weight;
    j["standardize"] = a.standardize;
    j["no-aux-heads"] = a.no_aux_heads;
    j["temporal-last-only"] = a.temporal_last_only;
    return j;
}

ZooConfig zoo_from_args(const TrainArgs& a) {
    ZooConfig zoo;
    zoo.input_cols = a.data.pipeline.window;
    zoo.aux_heads = !a.no_aux_heads;
    zoo.temporal_last_only = a.temporal_last_only;
    return zoo;
}

// --------------------------------------------------------------------------
// train

int cmd_train(CLI::App* cmd, TrainArgs& a) {
    ConfigOverlay overlay(cmd, load_config_file(a.config));
    overlay_train(overlay, a);
    overlay.finish();
    ModelKind kind = parse_model_name(a.model);

    std::vector<RawInstance> instances = load_dataset(a.data.data, a.data.pipeline.source_hz);
    std::vector<Segment> segments = preprocess(instances, a.data.pipeline);
    if (segments.empty()) {
        throw std::runtime_error("dataset produced no segments (instances shorter than one "
                                 "window?)");
    }
    ZooConfig zoo = zoo_from_args(a);
    SeededRng rng(a.seed);
    std::unique_ptr<Model> model = build_model(kind, zoo, rng.split("init"));

    ChannelStats stats;
    if (a.standardize) {
        std::vector<const Segment*> ptrs;
        for (const Segment& s : segments) {
            ptrs.push_back(&s);
        }
        stats = channel_stats(ptrs);
        for (Segment& s : segments) {
            s.data = standardize_segment(s.data, stats);
        }
    }

    std::printf("training %s on %zu segments (%zu epochs, batch %zu, lr %g)\n",
                model_kind_name(kind).c_str(), segments.size(), a.train.epochs,
                a.train.batch_size, static_cast<double>(a.train.adam.lr));
    TrainHistory hist = train(*model, segments, a.train, rng.split("train"));

    std::vector<size_t> predicted, actual;
    for (const Segment& s : segments) {
        predicted.push_back(model->predict(s.data));
        actual.push_back(s.label);
    }
    ConfusionCounts counts = confusion(predicted, actual);

    std::filesystem::path out(a.out);
    std::filesystem::create_directories(out);
    std::vector<std::pair<std::string, Tensor>> extras;
    if (a.standardize) {
        extras.emplace_back("standardize.mean", stats.mean);
        extras.emplace_back("standardize.sd", stats.sd);
    }
    WeightsFile wf = snapshot_weights(*model, a.seed,
                                      weights_meta_json(kind, zoo, a.standardize), extras);
    write_weights_file(out / "weights.bin", wf);
    {
        std::ofstream hout(out / "history.csv");
        if (!hout) {
            throw std::runtime_error("cannot write " + (out / "history.csv").string());
        }
        hout << "epoch,mean_loss\n";
        char buf[64];
        for (size_t e = 0; e < hist.mean_loss.size(); ++e) {
            std::snprintf(buf, sizeof buf, "%zu,%.17g\n", e + 1,
                          static_cast<double>(hist.mean_loss[e]));
            hout << buf;
        }
    }
    json snapshot = train_json(a);
    snapshot["command"] = "train";
    write_config_snapshot(out, snapshot);

    std::printf("final epoch mean loss: %.6f\n",
                static_cast<double>(hist.mean_loss.back()));
    std::printf("training-set fit:\n");
    print_metrics(counts, compute_metrics(counts));
    std::printf("weights: %s\n", (out / "weights.bin").string().c_str());
    return kExitOk;
}

// --------------------------------------------------------------------------
// loso

int cmd_loso(CLI::App* cmd, TrainArgs& a, size_t& jobs) {
    ConfigOverlay overlay(cmd, load_config_file(a.config));
    overlay_train(overlay, a);
    overlay.maybe("jobs", jobs);
    overlay.finish();
    if (jobs == 0) {
        throw UsageError("--jobs must be at least 1");
    }

    std::vector<ModelKind> kinds;
    if (a.model == "all") {
        kinds = all_model_kinds();
    } else {
        kinds.push_back(parse_model_name(a.model));
    }

    std::vector<RawInstance> instances = load_dataset(a.data.data, a.data.pipeline.source_hz);
    std::vector<Segment> segments = preprocess(instances, a.data.pipeline);
    if (segments.empty()) {
        throw std::runtime_error("dataset produced no segments");
    }

    std::filesystem::path out(a.out);
    std::filesystem::create_directories(out);
    json snapshot = train_json(a);
    snapshot["command"] = "loso";
    snapshot["jobs"] = jobs;
    write_config_snapshot(out, snapshot);

    LosoOptions opt;
    opt.zoo = zoo_from_args(a);
    opt.train = a.train;
    opt.standardize = a.standardize;
    opt.jobs = jobs;

    std::vector<LosoReport> reports;
    for (ModelKind kind : kinds) {
        std::printf("== %s: leave-one-subject-out over %zu segments\n",
                    model_kind_name(kind).c_str(), segments.size());
        std::fflush(stdout);
        opt.out_dir = out / model_kind_name(kind);
        std::filesystem::create_directories(opt.out_dir);
        LosoReport report = loso_run(kind, segments, opt, SeededRng(a.seed));
        write_text_file(opt.out_dir / "report.json", report_json(report));
        for (const FoldResult& f : report.folds) {
            std::printf("   fold %s: acc %.2f%%  recall %.2f%%  precision %.2f%%  F %.2f%%\n",
                        f.held_out.c_str(), percent2(f.metrics.accuracy),
                        percent2(f.metrics.recall), percent2(f.metrics.precision),
                        percent2(f.metrics.f_score));
        }
        std::fflush(stdout);
        reports.push_back(std::move(report));
    }

    std::string table = report_table(reports, false);
    write_text_file(out / "comparison.txt", table);
    write_text_file(out / "comparison.csv", report_table(reports, true));
    std::printf("\n%s", table.c_str());
    std::printf("reports under %s\n", out.string().c_str());
    return kExitOk;
}

// --------------------------------------------------------------------------
// gradcheck

struct GradcheckArgs {
    std::string config;
    uint64_t seed = 42;
    size_t seeds = 100;
    double eps = 1e-5;
};

int cmd_gradcheck(CLI::App* cmd, GradcheckArgs& a) {
    ConfigOverlay overlay(cmd, load_config_file(a.config));
    overlay.maybe("seed", a.seed);
    overlay.maybe("seeds", a.seeds);
    overlay.maybe("eps", a.eps);
    overlay.finish();

    std::vector<LayerCheck> checks =
        gradcheck_suite(a.seeds, static_cast<real>(a.eps), a.seed);
    std::printf("%-16s %14s %9s\n", "layer", "max_rel_err", "redraws");
    real worst = 0;
    for (const LayerCheck& c : checks) {
        std::printf("%-16s %14.3e %9zu\n", c.layer.c_str(),
                    static_cast<double>(c.max_rel_err), c.redraws);
        worst = std::max(worst, c.max_rel_err);
    }
    bool pass = worst < real(1e-4);
    std::printf("%zu seeds, eps %.1e: max relative error %.3e -> %s\n", a.seeds, a.eps,
                static_cast<double>(worst), pass ? "PASS" : "FAIL");
    if (!pass) {
        throw std::runtime_error("gradient check failed (tolerance 1e-4)");
    }
    return kExitOk;
}

// --------------------------------------------------------------------------
// eval

struct EvalArgs {
    DataArgs data;
    std::string weights, out, config;
};

int cmd_eval(CLI::App* cmd, EvalArgs& a) {
    ConfigOverlay overlay(cmd, load_config_file(a.config));
    overlay_pipeline(overlay, a.data);
    overlay.maybe("weights", a.weights);
    overlay.finish();

    WeightsFile wf = read_weights_file(a.weights);
    WeightsMeta meta = parse_weights_meta(wf.meta);
    std::unique_ptr<Model> model = build_model(meta.kind, meta.zoo, SeededRng(wf.seed));
    restore_weights(*model, wf);

    ChannelStats stats;
    if (meta.standardized) {
        const Tensor* mean = wf.find("standardize.mean");
        const Tensor* sd = wf.find("standardize.sd");
        if (!mean || !sd) {
            throw std::runtime_error(a.weights +
                                     ": metadata says standardized but the "
                                     "standardize.mean/sd tensors are missing");
        }
        stats.mean = *mean;
        stats.sd = *sd;
    }

    std::vector<RawInstance> instances = load_dataset(a.data.data, a.data.pipeline.source_hz);
    std::vector<Segment> segments = preprocess(instances, a.data.pipeline);
    if (segments.empty()) {
        throw std::runtime_error("dataset produced no segments");
    }

    std::vector<size_t> predicted, actual;
    for (const Segment& s : segments) {
        if (meta.standardized) {
            predicted.push_back(model->predict(standardize_segment(s.data, stats)));
        } else {
            predicted.push_back(model->predict(s.data));
        }
        actual.push_back(s.label);
    }
    ConfusionCounts counts = confusion(predicted, actual);
    MetricSet m = compute_metrics(counts);
    std::printf("model %s on %zu segments\n", model_kind_name(meta.kind).c_str(),
                segments.size());
    print_metrics(counts, m);

    if (!a.out.empty()) {
        std::filesystem::path out(a.out);
        std::filesystem::create_directories(out);
        json j{{"model", model_kind_name(meta.kind)},
               {"segments", segments.size()},
               {"counts", {{"tp", counts.tp}, {"fp", counts.fp}, {"fn", counts.fn},
                           {"tn", counts.tn}}},
               {"metrics",
                {{"accuracy", m.accuracy},
                 {"recall", m.recall},
                 {"precision", m.precision},
                 {"f_score", m.f_score},
                 {"degenerate", m.degenerate}}}};
        write_text_file(out / "eval.json", j.dump(2) + "\n");
        json snapshot = pipeline_json(a.data);
        snapshot["command"] = "eval";
        snapshot["weights"] = a.weights;
        write_config_snapshot(out, snapshot);
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"fallnet: fall detection on tri-axial accelerometer data"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset");
    synth_cmd->add_option("--out", synth_args.out, "output directory")->required();
    synth_cmd->add_option("--config", synth_args.config, "JSON config file");
    synth_cmd->add_option("--seed", synth_args.seed, "master seed");
    synth_cmd->add_option("--subjects", synth_args.synth.n_subjects, "number of subjects");
    synth_cmd->add_option("--adl", synth_args.synth.adl_per_subject,
                          "ADL recordings per subject");
    synth_cmd->add_option("--falls", synth_args.synth.falls_per_subject,
                          "fall recordings per subject");
    synth_cmd->add_option("--duration", synth_args.synth.duration_s,
                          "recording length (s)");
    synth_cmd->add_option("--rate", synth_args.synth.sample_hz, "sample rate (Hz)");
    synth_cmd->add_option("--impact-time", synth_args.synth.impact_time_s,
                          "fall impact instant (s)");

    TrainArgs train_args;
    CLI::App* train_cmd = app.add_subcommand("train", "train one model on a dataset");
    add_train_flags(train_cmd, train_args, false);

    TrainArgs loso_args;
    size_t loso_jobs = 1;
    CLI::App* loso_cmd =
        app.add_subcommand("loso", "leave-one-subject-out evaluation and comparison table");
    add_train_flags(loso_cmd, loso_args, true);
    loso_cmd->add_option("--jobs", loso_jobs, "worker threads across folds");

    GradcheckArgs grad_args;
    CLI::App* grad_cmd =
        app.add_subcommand("gradcheck", "finite-difference check of every layer kind");
    grad_cmd->add_option("--config", grad_args.config, "JSON config file");
    grad_cmd->add_option("--seed", grad_args.seed, "master seed");
    grad_cmd->add_option("--seeds", grad_args.seeds, "number of random restarts");
    grad_cmd->add_option("--eps", grad_args.eps, "finite-difference step");

    EvalArgs eval_args;
    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate saved weights on a dataset");
    add_pipeline_flags(eval_cmd, eval_args.data);
    eval_cmd->add_option("--weights", eval_args.weights, "weights file")->required();
    eval_cmd->add_option("--out", eval_args.out, "optional output directory");
    eval_cmd->add_option("--config", eval_args.config, "JSON config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth_cmd->parsed()) return cmd_synth(synth_cmd, synth_args);
        if (train_cmd->parsed()) return cmd_train(train_cmd, train_args);
        if (loso_cmd->parsed()) return cmd_loso(loso_cmd, loso_args, loso_jobs);
        if (grad_cmd->parsed()) return cmd_gradcheck(grad_cmd, grad_args);
        if (eval_cmd->parsed()) return cmd_eval(eval_cmd, eval_args);
        std::cerr << "error: no subcommand selected\n";
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
}
