#include "fallnet/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>

namespace fallnet {

std::string label_name(Label l) {
    return l == Label::Fall ? "fall" : "adl";
}

// ---------------------------------------------------------------------------
// Resampling and segmentation

Tensor resample_linear(const Tensor& samples, double src_hz, double dst_hz) {
    if (samples.rank() != 2 || samples.dim(1) != 3) {
        throw std::invalid_argument("resample_linear: expected [N x 3], got " +
                                    samples.shape_str());
    }
    if (!(src_hz > 0) || !(dst_hz > 0)) {
        throw std::invalid_argument("resample_linear: rates must be positive");
    }
    size_t n = samples.dim(0);
    if (n < 2) {
        throw std::invalid_argument("resample_linear: need at least 2 samples, got " +
                                    std::to_string(n));
    }
    size_t m = static_cast<size_t>(
                   std::floor(static_cast<double>(n - 1) * dst_hz / src_hz)) +
               1;
    Tensor out({m, 3});
    for (size_t k = 0; k < m; ++k) {
        double pos = static_cast<double>(k) * src_hz / dst_hz;
        size_t i0 = std::min(static_cast<size_t>(pos), n - 1);
        size_t i1 = std::min(i0 + 1, n - 1);
        double frac = pos - static_cast<double>(i0);
        for (size_t c = 0; c < 3; ++c) {
            double a = samples.at(i0, c);
            double b = samples.at(i1, c);
            out.at(k, c) = static_cast<real>(a + frac * (b - a));
        }
    }
    return out;
}

std::vector<Segment> segment_instance(const RawInstance& inst, const PipelineConfig& cfg) {
    if (inst.samples.rank() != 2 || inst.samples.dim(1) != 3) {
        throw std::invalid_argument("segment_instance: instance '" + inst.source_id +
                                    "' has shape " + inst.samples.shape_str() +
                                    ", expected [N x 3]");
    }
    if (cfg.window == 0 || cfg.stride == 0) {
        throw std::invalid_argument("segment_instance: window and stride must be positive");
    }
    if (std::abs(inst.sample_hz - cfg.target_hz) > 1e-9) {
        throw std::invalid_argument("segment_instance: instance '" + inst.source_id +
                                    "' is at " + std::to_string(inst.sample_hz) +
                                    " Hz, expected the target rate " +
                                    std::to_string(cfg.target_hz) +
                                    " Hz (resample first or use preprocess)");
    }
    size_t len = inst.samples.dim(0);
    std::vector<Segment> out;
    if (len < cfg.window) {
        return out;
    }
    size_t impact = static_cast<size_t>(std::llround(cfg.impact_time_s * cfg.target_hz));
    for (size_t start = 0; start + cfg.window <= len; start += cfg.stride) {
        if (inst.label == Label::Fall &&
            !(start <= impact && impact < start + cfg.window)) {
            continue;
        }
        Segment seg;
        seg.data = Tensor({3, cfg.window});
        for (size_t c = 0; c < 3; ++c) {
            for (size_t t = 0; t < cfg.window; ++t) {
                seg.data.at(c, t) = inst.samples.at(start + t, c);
            }
        }
        seg.label = inst.label == Label::Fall ? 1 : 0;
        seg.subject = inst.subject;
        seg.source_id = inst.source_id;
        seg.start = start;
        out.push_back(std::move(seg));
    }
    return out;
}

std::vector<Segment> preprocess(const std::vector<RawInstance>& instances,
                                const PipelineConfig& cfg) {
    std::vector<Segment> out;
    for (const RawInstance& inst : instances) {
        RawInstance resampled;
        resampled.source_id = inst.source_id;
        resampled.subject = inst.subject;
        resampled.label = inst.label;
        resampled.activity = inst.activity;
        resampled.sample_hz = cfg.target_hz;
        resampled.samples = resample_linear(inst.samples, inst.sample_hz, cfg.target_hz);
        std::vector<Segment> segs = segment_instance(resampled, cfg);
        out.insert(out.end(), std::make_move_iterator(segs.begin()),
                   std::make_move_iterator(segs.end()));
    }
    return out;
}

// ---------------------------------------------------------------------------
// CSV io

namespace {

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) {
        fields.push_back(trim(cur));
    }
    if (!line.empty() && line.back() == ',') {
        fields.push_back("");
    }
    return fields;
}

double parse_number(const std::string& s, const std::filesystem::path& file, size_t lineno,
                    const std::string& column) {
    size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != s.size() || s.empty()) {
        throw std::runtime_error(file.string() + ":" + std::to_string(lineno) +
                                 ": expected a number in column '" + column + "', got '" +
                                 s + "'");
    }
    return v;
}

} // namespace

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_csv) {
    std::ifstream in(manifest_csv);
    if (!in) {
        throw std::runtime_error("cannot open manifest: " + manifest_csv.string());
    }
    std::string line;
    size_t lineno = 0;
    if (!std::getline(in, line)) {
        throw std::runtime_error(manifest_csv.string() + ": empty manifest");
    }
    ++lineno;
    std::vector<std::string> header = split_csv(line);
    const std::vector<std::string> expected = {"path", "subject_id", "label",
                                               "activity_code"};
    std::vector<std::string> header_lc;
    for (const std::string& h : header) {
        header_lc.push_back(lower(h));
    }
    if (header_lc != expected) {
        throw std::runtime_error(manifest_csv.string() +
                                 ": manifest header must be 'path,subject_id,label,"
                                 "activity_code', got '" + line + "'");
    }
    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        std::vector<std::string> f = split_csv(line);
        if (f.size() != 4) {
            throw std::runtime_error(manifest_csv.string() + ":" + std::to_string(lineno) +
                                     ": expected 4 fields, got " + std::to_string(f.size()));
        }
        ManifestEntry e;
        e.path = f[0];
        e.subject = f[1];
        std::string lab = lower(f[2]);
        if (lab == "fall") {
            e.label = Label::Fall;
        } else if (lab == "adl") {
            e.label = Label::Adl;
        } else {
            throw std::runtime_error(manifest_csv.string() + ":" + std::to_string(lineno) +
                                     ": label must be 'adl' or 'fall', got '" + f[2] + "'");
        }
        e.activity = f[3];
        if (e.path.empty() || e.subject.empty()) {
            throw std::runtime_error(manifest_csv.string() + ":" + std::to_string(lineno) +
                                     ": path and subject_id must be non-empty");
        }
        entries.push_back(std::move(e));
    }
    if (entries.empty()) {
        throw std::runtime_error(manifest_csv.string() + ": manifest has no data rows");
    }
    return entries;
}

Tensor read_instance_csv(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) {
        throw std::runtime_error("cannot open instance file: " + file.string());
    }
    std::string line;
    size_t lineno = 0;
    if (!std::getline(in, line)) {
        throw std::runtime_error(file.string() + ": empty instance file");
    }
    ++lineno;
    std::vector<std::string> header = split_csv(line);
    std::vector<std::string> header_lc;
    for (const std::string& h : header) {
        header_lc.push_back(lower(h));
    }
    bool has_time = false;
    if (header_lc == std::vector<std::string>{"ax", "ay", "az"}) {
        has_time = false;
    } else if (header_lc == std::vector<std::string>{"t", "ax", "ay", "az"}) {
        has_time = true;
    } else {
        throw std::runtime_error(file.string() +
                                 ": instance header must be 'ax,ay,az' or 't,ax,ay,az', "
                                 "got '" + line + "'");
    }
    std::vector<real> values;
    size_t rows = 0;
    const size_t ncol = has_time ? 4 : 3;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) {
            continue;
        }
        std::vector<std::string> f = split_csv(line);
        if (f.size() != ncol) {
            throw std::runtime_error(file.string() + ":" + std::to_string(lineno) +
                                     ": expected " + std::to_string(ncol) +
                                     " fields, got " + std::to_string(f.size()));
        }
        size_t base = has_time ? 1 : 0;
        for (size_t c = 0; c < 3; ++c) {
            values.push_back(static_cast<real>(
                parse_number(f[base + c], file, lineno, header[base + c])));
        }
        ++rows;
    }
    if (rows == 0) {
        throw std::runtime_error(file.string() + ": instance file has no samples");
    }
    return Tensor({rows, 3}, std::move(values));
}

std::vector<RawInstance> load_dataset(const std::filesystem::path& manifest_csv,
                                      double source_hz) {
    std::vector<ManifestEntry> entries = read_manifest(manifest_csv);
    std::filesystem::path dir = manifest_csv.parent_path();
    std::vector<RawInstance> out;
    out.reserve(entries.size());
    for (const ManifestEntry& e : entries) {
        RawInstance inst;
        std::filesystem::path file = e.path.is_absolute() ? e.path : dir / e.path;
        inst.source_id = e.path.stem().string();
        inst.subject = e.subject;
        inst.label = e.label;
        inst.activity = e.activity;
        inst.sample_hz = source_hz;
        inst.samples = read_instance_csv(file);
        out.push_back(std::move(inst));
    }
    return out;
}

void write_dataset(const std::vector<RawInstance>& instances,
                   const std::filesystem::path& dir) {
    if (instances.empty()) {
        throw std::invalid_argument("write_dataset: no instances");
    }
    std::filesystem::create_directories(dir);
    std::set<std::string> seen;
    for (const RawInstance& inst : instances) {
        if (!seen.insert(inst.source_id).second) {
            throw std::invalid_argument("write_dataset: duplicate source_id '" +
                                        inst.source_id + "'");
        }
    }
    std::ofstream mf(dir / "manifest.csv");
    if (!mf) {
        throw std::runtime_error("cannot write manifest in " + dir.string());
    }
    mf << "path,subject_id,label,activity_code\n";
    for (const RawInstance& inst : instances) {
        std::string fname = inst.source_id + ".csv";
        mf << fname << ',' << inst.subject << ',' << label_name(inst.label) << ','
           << inst.activity << '\n';
        std::ofstream f(dir / fname);
        if (!f) {
            throw std::runtime_error("cannot write instance file " + (dir / fname).string());
        }
        f << "ax,ay,az\n";
        char buf[96];
        for (size_t i = 0; i < inst.samples.dim(0); ++i) {
            std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f\n",
                          static_cast<double>(inst.samples.at(i, 0)),
                          static_cast<double>(inst.samples.at(i, 1)),
                          static_cast<double>(inst.samples.at(i, 2)));
            f << buf;
        }
    }
}

// ---------------------------------------------------------------------------
// LOSO

std::vector<std::string> subjects_of(const std::vector<Segment>& segments) {
    std::set<std::string> ids;
    for (const Segment& s : segments) {
        ids.insert(s.subject);
    }
    return {ids.begin(), ids.end()};
}

std::vector<LosoFold> loso_folds(const std::vector<Segment>& segments) {
    std::vector<std::string> subjects = subjects_of(segments);
    if (subjects.size() < 2) {
        throw std::invalid_argument("loso_folds: need at least 2 subjects, got " +
                                    std::to_string(subjects.size()));
    }
    std::vector<LosoFold> folds;
    folds.reserve(subjects.size());
    for (const std::string& held : subjects) {
        LosoFold fold;
        fold.held_out = held;
        for (const Segment& s : segments) {
            (s.subject == held ? fold.test : fold.train).push_back(&s);
        }
        folds.push_back(std::move(fold));
    }
    return folds;
}

// ---------------------------------------------------------------------------
// Standardization

ChannelStats channel_stats(const std::vector<const Segment*>& segments) {
    if (segments.empty()) {
        throw std::invalid_argument("channel_stats: no segments");
    }
    size_t channels = segments.front()->data.dim(0);
    Tensor mean({channels});
    Tensor sd({channels});
    size_t count = 0;
    for (const Segment* s : segments) {
        const Tensor& d = s->data;
        for (size_t c = 0; c < channels; ++c) {
            for (size_t t = 0; t < d.dim(1); ++t) {
                mean[c] += d.at(c, t);
            }
        }
        count += d.dim(1);
    }
    for (size_t c = 0; c < channels; ++c) {
        mean[c] /= static_cast<real>(count);
    }
    for (const Segment* s : segments) {
        const Tensor& d = s->data;
        for (size_t c = 0; c < channels; ++c) {
            for (size_t t = 0; t < d.dim(1); ++t) {
                real v = d.at(c, t) - mean[c];
                sd[c] += v * v;
            }
        }
    }
    for (size_t c = 0; c < channels; ++c) {
        sd[c] = std::max(std::sqrt(sd[c] / static_cast<real>(count)), real(1e-8));
    }
    return ChannelStats{std::move(mean), std::move(sd)};
}

Tensor standardize_segment(const Tensor& data, const ChannelStats& stats) {
    if (data.rank() != 2 || data.dim(0) != stats.mean.size()) {
        throw std::invalid_argument("standardize_segment: segment " + data.shape_str() +
                                    " vs stats for " + std::to_string(stats.mean.size()) +
                                    " channels");
    }
    Tensor out(data.shape());
    for (size_t c = 0; c < data.dim(0); ++c) {
        for (size_t t = 0; t < data.dim(1); ++t) {
            out.at(c, t) = (data.at(c, t) - stats.mean[c]) / stats.sd[c];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace {

struct Gait {
    double freq;      // Hz
    double amp;       // g
    double noise_sd;  // g
};

Gait subject_gait(SeededRng& rng) {
    Gait g;
    g.freq = rng.uniform(1.4, 2.4);
    g.amp = rng.uniform(0.15, 0.45);
    g.noise_sd = rng.uniform(0.02, 0.05);
    return g;
}

std::string two_digit(size_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%02zu", v);
    return buf;
}

std::string three_digit(size_t v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%03zu", v);
    return buf;
}

// Walking: gravity on z plus an oscillation with per-instance phases.
void walking_at(double t, const Gait& g, const double phase[3], double out[3]) {
    constexpr double tau = 2.0 * std::numbers::pi;
    out[0] = g.amp * std::sin(tau * g.freq * t + phase[0]);
    out[1] = 0.7 * g.amp * std::sin(tau * g.freq * t + phase[1]);
    out[2] = 1.0 + 0.4 * g.amp * std::sin(2.0 * tau * g.freq * t + phase[2]);
}

RawInstance synth_adl(const SynthConfig& cfg, const std::string& subject, size_t idx,
                      const Gait& gait, SeededRng rng) {
    static const char* activities[] = {"walk", "sit_down", "stand_up", "stairs"};
    RawInstance inst;
    inst.subject = subject;
    inst.source_id = subject + "_ADL_" + three_digit(idx);
    inst.label = Label::Adl;
    inst.activity = activities[idx % 4];
    inst.sample_hz = cfg.sample_hz;

    size_t n = static_cast<size_t>(std::llround(cfg.duration_s * cfg.sample_hz));
    double phase[3] = {rng.uniform(0.0, 6.28), rng.uniform(0.0, 6.28),
                       rng.uniform(0.0, 6.28)};
    Tensor samples({n, 3});
    for (size_t i = 0; i < n; ++i) {
        double t = static_cast<double>(i) / cfg.sample_hz;
        double w[3];
        walking_at(t, gait, phase, w);
        for (size_t c = 0; c < 3; ++c) {
            samples.at(i, c) = static_cast<real>(w[c] + rng.normal(0.0, gait.noise_sd));
        }
    }
    inst.samples = std::move(samples);
    return inst;
}

RawInstance synth_fall(const SynthConfig& cfg, const std::string& subject, size_t idx,
                       const Gait& gait, SeededRng rng) {
    static const char* activities[] = {"fall_forward", "fall_backward", "fall_lateral"};
    RawInstance inst;
    inst.subject = subject;
    inst.source_id = subject + "_FALL_" + three_digit(idx);
    inst.label = Label::Fall;
    inst.activity = activities[idx % 3];
    inst.sample_hz = cfg.sample_hz;

    size_t n = static_cast<size_t>(std::llround(cfg.duration_s * cfg.sample_hz));
    double phase[3] = {rng.uniform(0.0, 6.28), rng.uniform(0.0, 6.28),
                       rng.uniform(0.0, 6.28)};

    double t_impact = cfg.impact_time_s;
    double peak = rng.uniform(5.5, 7.0);       // g
    double pulse_sd = rng.uniform(0.05, 0.08); // s; pulse dies out well inside 0.5 s

    // Random impact direction and lying orientation (gravity leaves z).
    double ux = rng.uniform(0.4, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    double uy = rng.uniform(-0.6, 0.6);
    double uz = rng.uniform(-0.4, 0.4);
    double un = std::sqrt(ux * ux + uy * uy + uz * uz);
    ux /= un;
    uy /= un;
    uz /= un;
    double lying[3];
    double lx = rng.uniform(0.7, 1.0) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    double ly = rng.uniform(-0.5, 0.5);
    double lz = rng.uniform(-0.2, 0.2);
    double ln = std::sqrt(lx * lx + ly * ly + lz * lz);
    lying[0] = lx / ln;
    lying[1] = ly / ln;
    lying[2] = lz / ln;

    const double fade = 0.3; // s of cross-fade from walking into lying
    Tensor samples({n, 3});
    for (size_t i = 0; i < n; ++i) {
        double t = static_cast<double>(i) / cfg.sample_hz;
        double w[3];
        walking_at(t, gait, phase, w);
        double mix = 0.0; // 0 = walking, 1 = lying
        if (t >= t_impact) {
            mix = 1.0;
        } else if (t > t_impact - fade) {
            mix = (t - (t_impact - fade)) / fade;
        }
        double z = t - t_impact;
        double pulse = peak * std::exp(-0.5 * z * z / (pulse_sd * pulse_sd));
        for (size_t c = 0; c < 3; ++c) {
            double base = (1.0 - mix) * w[c] + mix * lying[c];
            double dir = c == 0 ? ux : (c == 1 ? uy : uz);
            samples.at(i, c) =
                static_cast<real>(base + dir * pulse + rng.normal(0.0, gait.noise_sd));
        }
    }
    inst.samples = std::move(samples);
    return inst;
}

} // namespace

std::vector<RawInstance> synth_dataset(const SynthConfig& cfg, SeededRng rng) {
    if (cfg.n_subjects == 0 || (cfg.adl_per_subject + cfg.falls_per_subject) == 0) {
        throw std::invalid_argument("synth_dataset: empty configuration");
    }
    if (!(cfg.sample_hz > 0) || !(cfg.duration_s > 0)) {
        throw std::invalid_argument("synth_dataset: rate and duration must be positive");
    }
    if (!(cfg.impact_time_s > 0.5) || !(cfg.impact_time_s < cfg.duration_s - 0.5)) {
        throw std::invalid_argument("synth_dataset: impact instant must sit inside the "
                                    "recording with 0.5 s to spare");
    }
    SeededRng synth_rng = rng.split("synth");
    std::vector<RawInstance> out;
    out.reserve(cfg.n_subjects * (cfg.adl_per_subject + cfg.falls_per_subject));
    for (size_t s = 0; s < cfg.n_subjects; ++s) {
        std::string subject = "S" + two_digit(s + 1);
        SeededRng subject_rng = synth_rng.split(s);
        SeededRng trait_rng = subject_rng.split("traits");
        Gait gait = subject_gait(trait_rng);
        SeededRng adl_rng = subject_rng.split("adl");
        for (size_t k = 0; k < cfg.adl_per_subject; ++k) {
            out.push_back(synth_adl(cfg, subject, k + 1, gait, adl_rng.split(k)));
        }
        SeededRng fall_rng = subject_rng.split("fall");
        for (size_t k = 0; k < cfg.falls_per_subject; ++k) {
            out.push_back(synth_fall(cfg, subject, k + 1, gait, fall_rng.split(k)));
        }
    }
    return out;
}

} // namespace fallnet
