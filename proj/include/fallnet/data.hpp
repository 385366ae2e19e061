#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "fallnet/tensor.hpp"

namespace fallnet {

// The fall class is the positive class everywhere in the library.
enum class Label { Adl = 0, Fall = 1 };

std::string label_name(Label l);

// One recording: a continuous tri-axial accelerometer trace in g units.
struct RawInstance {
    std::string source_id; // unique id, doubles as the instance file stem
    std::string subject;
    Label label = Label::Adl;
    std::string activity;
    double sample_hz = 0;
    Tensor samples; // [N x 3], one row per timestep: ax, ay, az
};

// One fixed-length window in model layout (channels x time).
struct Segment {
    Tensor data; // [3 x window]
    size_t label = 0;
    std::string subject;
    std::string source_id;
    size_t start = 0; // window start index in the resampled trace
};

struct PipelineConfig {
    double source_hz = 238.0;
    double target_hz = 20.0;
    size_t window = 140;
    size_t stride = 70;
    double impact_time_s = 10.0; // fall recordings: impact instant

    bool operator==(const PipelineConfig&) const = default;
};

// Linear interpolation onto the target rate. Output sample k sits at source
// position k * src_hz / dst_hz; the output length floor((N-1) * dst / src) + 1
// keeps the last sample inside the source span (no extrapolation).
Tensor resample_linear(const Tensor& samples, double src_hz, double dst_hz);

// Window extraction with the configured stride. ADL instances keep every
// window; fall instances keep only windows containing the impact sample
// (round(impact_time_s * target_hz)) and drop the rest. Instances shorter
// than one window yield nothing.
std::vector<Segment> segment_instance(const RawInstance& inst, const PipelineConfig& cfg);

// resample_linear + segment_instance over a dataset.
std::vector<Segment> preprocess(const std::vector<RawInstance>& instances,
                                const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Dataset files. A dataset is a manifest CSV with header
// path,subject_id,label,activity_code plus one CSV per instance (header
// ax,ay,az, or t,ax,ay,az — the t column is ignored; rates come from config).

struct ManifestEntry {
    std::filesystem::path path; // relative to the manifest's directory
    std::string subject;
    Label label = Label::Adl;
    std::string activity;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest_csv);

Tensor read_instance_csv(const std::filesystem::path& file);

std::vector<RawInstance> load_dataset(const std::filesystem::path& manifest_csv,
                                      double source_hz);

// Writes dir/manifest.csv plus dir/<source_id>.csv per instance.
void write_dataset(const std::vector<RawInstance>& instances,
                   const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Leave-one-subject-out splitting.

struct LosoFold {
    std::string held_out;
    std::vector<const Segment*> train;
    std::vector<const Segment*> test;
};

// Sorted unique subject ids.
std::vector<std::string> subjects_of(const std::vector<Segment>& segments);

// One fold per subject in sorted order; requires at least two subjects.
// Pointers alias `segments`, which must outlive the folds.
std::vector<LosoFold> loso_folds(const std::vector<Segment>& segments);

// ---------------------------------------------------------------------------
// Per-channel standardization (fit on training data only).

struct ChannelStats {
    Tensor mean; // [channels]
    Tensor sd;   // [channels], population sd, floored at 1e-8
};

ChannelStats channel_stats(const std::vector<const Segment*>& segments);
Tensor standardize_segment(const Tensor& data, const ChannelStats& stats);

// ---------------------------------------------------------------------------
// Synthetic data: ADL recordings are gravity plus a walking oscillation and
// noise; fall recordings walk, then take a short high-g impact at the
// configured impact instant and settle into a lying plateau. Deterministic
// for a given seed; per-subject gait traits come from per-subject substreams.

struct SynthConfig {
    size_t n_subjects = 5;
    size_t adl_per_subject = 8;
    size_t falls_per_subject = 4;
    double duration_s = 20.0;
    double sample_hz = 238.0;
    double impact_time_s = 10.0;
};

std::vector<RawInstance> synth_dataset(const SynthConfig& cfg, SeededRng rng);

} // namespace fallnet
