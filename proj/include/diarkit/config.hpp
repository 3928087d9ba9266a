#pragma once

// Sectioned plaintext configuration: `[section]` headers over `key = value`
// lines, with `#`/`;` comments. Every key has a documented default; keys the
// schema does not know are rejected rather than ignored, so a typo cannot
// silently fall back to a default. Defaults depend on the model variant
// (the two training recipes publish different schedules), so parsing is
// two-pass: the variant and preset are read first, the remaining keys are
// applied on top of the matching defaults.

#include "diarkit/eda.hpp"
#include "diarkit/features.hpp"
#include "diarkit/tensor.hpp"
#include "diarkit/tsvad.hpp"

#include <stdexcept>
#include <string>

namespace diarkit {

// File-level failures (open/read/write). Kept distinct from ContractError so
// the command-line layer can map them to a different exit code.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ModelVariant {
    CONCAT,
    BLSTM_BLSTM,
    TRANS_TRANS,
    BLSTM_TIME_TRANS_SPK,
    EDA_DOT,
    EDA_TSVAD,
};

std::string to_string(ModelVariant v);
ModelVariant variant_from_string(const std::string& s);  // ContractError on unknown
bool is_eda_variant(ModelVariant v);
// EDA variants have no JSD kind; calling this for them is a contract error.
JsdKind jsd_kind_for(ModelVariant v);

struct ModelSection {
    ModelVariant variant = ModelVariant::BLSTM_TIME_TRANS_SPK;
    std::string preset = "full";  // full | toy
    TsVadDims tsvad;              // mel_bins is derived from [features]
    EendDims eend;                // input_dim is derived from [features]

    bool operator==(const ModelSection&) const = default;
};

struct FeaturesSection {
    FeatureConfig config;  // defaults depend on the variant family
    int stack = 15;        // attractor path only
    int subsample = 10;    // attractor path only

    bool operator==(const FeaturesSection&) const = default;
};

struct TrainingSection {
    double peak_lr = 2e-4;
    int warmup_steps = 20000;
    int total_steps = 200000;
    int batch = 32;
    double chunk_seconds = 60.0;
    std::uint64_t seed = 0;

    bool operator==(const TrainingSection&) const = default;
};

struct InferenceSection {
    double binarize_threshold = 0.5;
    int median_taps = 11;
    double collar = 0.25;
    double ahc_threshold = 0.4;
    double min_profile_dur = 2.0;
    int vad_hangover = 30;
    int chunk_frames = 750;  // 60 s of 80-ms embedding frames

    bool operator==(const InferenceSection&) const = default;
};

struct PathsSection {
    std::string train_manifest;
    std::string eval_manifest;
    std::string checkpoint;
    std::string out_dir;

    bool operator==(const PathsSection&) const = default;
};

struct Config {
    ModelSection model;
    FeaturesSection features;
    TrainingSection training;
    InferenceSection inference;
    PathsSection paths;

    // Paper-faithful defaults for a variant: target-speaker variants use the
    // 2e-4 peak / 20k warm-up / 200k total / batch-32 recipe over 80-bin
    // features; attractor variants use 5e-5 / 27k / 230k / batch-36 over
    // 40-bin stacked features. `preset` picks full or toy layer dims.
    static Config defaults_for(ModelVariant v, const std::string& preset = "full");

    // Re-derives the coupled dims (mel bins, stacked input width) and checks
    // every range constraint. Called by parse_config; call it after mutating
    // a Config by hand.
    void finalize();

    bool operator==(const Config&) const = default;
};

// Parse from text / file. Errors carry the line number and the offending
// section.key. parse_config(serialize_config(c)) == c for every valid c.
Config parse_config_text(const std::string& text);
Config parse_config(const std::string& path);
std::string serialize_config(const Config& config);

// Model construction from a finalized config, seeded by training.seed.
// Calling the wrong builder for the variant family is a contract error.
TsVadModel build_tsvad_model(const Config& config);
EdaTsVadModel build_eda_tsvad_model(const Config& config);

}  // namespace diarkit
