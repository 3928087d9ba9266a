#pragma once

// Training loops for both model families, plus manifest/session loading and
// the Config-to-inference-config plumbing shared by the command-line tools.
//
// Both loops follow the same recipe: sample a batch of fixed-length chunks
// from the preprocessed sessions, run the family's training forward, average
// the chunk losses, clip the global gradient norm, and take one scheduled
// Adam step. A non-finite loss or gradient aborts training; the checkpoint
// from the last completed save is left untouched so the most recent good
// state survives.

#include "diarkit/checkpoint.hpp"
#include "diarkit/config.hpp"
#include "diarkit/pipeline.hpp"

#include <string>
#include <vector>

namespace diarkit {

struct ManifestEntry {
    std::string id;
    std::string wav_path;
    std::string rttm_path;
};

// Tab-separated `id wav rttm` rows; paths are used verbatim.
std::vector<ManifestEntry> read_manifest(const std::string& path);

struct TrainSession {
    std::string id;
    Tensor features;  // target path: log-mel [T0, mel]; attractor path: stacked [T, stack*mel]
    Tensor labels;    // {0,1}^[T, S] at the model frame rate
    std::vector<std::string> speakers;  // label column names, sorted
};

// Read, featurize, and rasterize reference labels for every manifest row.
// The target-speaker loader keeps raw log-mel frames (the trainable front
// end consumes them); the attractor loader pre-stacks and subsamples.
std::vector<TrainSession> load_tsvad_sessions(const std::string& manifest_path,
                                              const Config& config);
std::vector<TrainSession> load_eda_sessions(const std::string& manifest_path,
                                            const Config& config);

struct TrainOptions {
    double grad_clip = 5.0;
    std::string loss_csv_path;    // when non-empty: `step,loss,lr` per completed step
    std::string checkpoint_path;  // when non-empty: saved on completion
    int checkpoint_every = 0;     // additional periodic saves when > 0
};

struct TrainResult {
    int steps = 0;  // completed optimization steps
    double first_loss = 0.0;
    double last_loss = 0.0;
    bool nan_abort = false;
    std::vector<double> losses;  // one entry per completed step
};

// config.training drives the schedule (peak_lr/warmup/total/batch/
// chunk_seconds/seed). For the CONCAT variant, chunk profiles are zero-padded
// to max_speakers and the padded columns train against silence.
TrainResult train_tsvad_model(TsVadModel& model, const std::vector<TrainSession>& sessions,
                              const Config& config, const TrainOptions& opts);

// Attractor training: time-shuffled EDA branch decoding true_n + 1
// attractors, existence loss against [1...1,0], permutation-invariant BCE for
// the activities. config.model.variant picks the matcher (eda_dot |
// eda_tsvad).
TrainResult train_eda_model(EdaTsVadModel& model, const std::vector<TrainSession>& sessions,
                            const Config& config, const TrainOptions& opts);

// Inference configs assembled from the corresponding Config sections.
InferConfig infer_config_from(const Config& config);
EdaInferConfig eda_infer_config_from(const Config& config);

}  // namespace diarkit
