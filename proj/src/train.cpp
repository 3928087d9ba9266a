#include "diarkit/train.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>

namespace diarkit {

namespace {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

// Plain data copies (leaves): chunks and label views never need gradients.
Tensor rows_copy(const Tensor& x, int r0, int r1) {
    const int d = x.dim(1);
    std::vector<double> out(static_cast<std::size_t>(r1 - r0) * static_cast<std::size_t>(d));
    const std::span<const double> v = x.values();
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(r0) * d,
              v.begin() + static_cast<std::ptrdiff_t>(r1) * d, out.begin());
    return Tensor::from_data({r1 - r0, d}, std::move(out));
}

Tensor cols_copy(const Tensor& x, const std::vector<int>& cols) {
    const int t_len = x.dim(0);
    const int n = static_cast<int>(cols.size());
    std::vector<double> out(static_cast<std::size_t>(t_len) * static_cast<std::size_t>(n));
    for (int t = 0; t < t_len; ++t) {
        for (int j = 0; j < n; ++j) {
            out[static_cast<std::size_t>(t) * n + static_cast<std::size_t>(j)] =
                x.at2(t, cols[static_cast<std::size_t>(j)]);
        }
    }
    return Tensor::from_data({t_len, n}, std::move(out));
}

std::vector<std::string> speakers_of(const std::vector<RttmSegment>& segments) {
    std::set<std::string> names;
    for (const RttmSegment& s : segments) names.insert(s.speaker);
    return {names.begin(), names.end()};
}

std::vector<RttmSegment> session_reference(const ManifestEntry& entry) {
    std::vector<RttmSegment> all = read_rttm_file(entry.rttm_path);
    std::vector<RttmSegment> mine;
    for (RttmSegment& s : all) {
        if (s.session == entry.id) mine.push_back(std::move(s));
    }
    if (mine.empty()) {
        throw ContractError("train: no reference segments for session '" + entry.id +
                            "' in " + entry.rttm_path);
    }
    return mine;
}

struct CsvLog {
    std::ofstream out;

    explicit CsvLog(const std::string& path) {
        if (path.empty()) return;
        out.open(path, std::ios::trunc);
        if (!out) throw IoError("train: cannot open loss log '" + path + "'");
        out << "step,loss,lr\n";
    }
    void row(int step, double loss, double lr) {
        if (!out.is_open()) return;
        out << step << ',' << format_double(loss) << ',' << format_double(lr) << '\n';
    }
};

struct Chunk {
    Tensor features;
    Tensor labels;
};

// Uniform (session, window) draw; retried until the window contains speech so
// every training chunk has at least one target column.
Chunk sample_chunk(const std::vector<TrainSession>& sessions, int chunk_frames,
                   int feature_rows_per_frame, Rng& rng) {
    for (int attempt = 0; attempt < 200; ++attempt) {
        const TrainSession& sess =
            sessions[static_cast<std::size_t>(rng.randint(static_cast<int>(sessions.size())))];
        const int t_total = sess.labels.dim(0);
        const int t_chunk = std::min(chunk_frames, t_total);
        const int start = rng.randint(t_total - t_chunk + 1);
        Chunk chunk;
        chunk.labels = rows_copy(sess.labels, start, start + t_chunk);
        bool any = false;
        for (double v : chunk.labels.values()) {
            if (v != 0.0) {
                any = true;
                break;
            }
        }
        if (!any) continue;
        chunk.features = rows_copy(sess.features, start * feature_rows_per_frame,
                                   (start + t_chunk) * feature_rows_per_frame);
        return chunk;
    }
    throw ContractError("train: could not sample a chunk containing speech");
}

std::vector<int> active_columns(const Tensor& labels) {
    std::vector<int> active;
    for (int s = 0; s < labels.dim(1); ++s) {
        for (int t = 0; t < labels.dim(0); ++t) {
            if (labels.at2(t, s) != 0.0) {
                active.push_back(s);
                break;
            }
        }
    }
    return active;
}

// Shared outer loop: per-step batch assembly is delegated, everything else
// (schedule, clipping, logging, checkpoints, abort handling) is common.
template <typename StepLoss>
TrainResult run_training(ParamList params, const Config& config, const TrainOptions& opts,
                         StepLoss&& batch_loss) {
    const TrainingSection& tr = config.training;
    AdamOptimizer opt;
    opt.schedule = LrSchedule{tr.peak_lr, tr.warmup_steps, tr.total_steps};
    CsvLog log(opts.loss_csv_path);
    TrainResult result;

    for (int step = 1; step <= tr.total_steps; ++step) {
        zero_grads(params);
        Tensor loss = batch_loss();
        const double loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
            result.nan_abort = true;
            return result;
        }
        loss.backward();
        clip_grad_norm(params, opts.grad_clip);
        try {
            opt.step(params);
        } catch (const NumericalError&) {
            result.nan_abort = true;
            return result;
        }
        result.steps = step;
        result.last_loss = loss_value;
        if (step == 1) result.first_loss = loss_value;
        result.losses.push_back(loss_value);
        log.row(step, loss_value, opt.schedule.at(step));
        if (!opts.checkpoint_path.empty() && opts.checkpoint_every > 0 &&
            step % opts.checkpoint_every == 0) {
            save_checkpoint(params, config, opts.checkpoint_path);
        }
    }
    if (!opts.checkpoint_path.empty()) save_checkpoint(params, config, opts.checkpoint_path);
    return result;
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("manifest: cannot open '" + path + "'");
    std::vector<ManifestEntry> entries;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        ManifestEntry e;
        if (!std::getline(row, e.id, '\t') || !std::getline(row, e.wav_path, '\t') ||
            !std::getline(row, e.rttm_path, '\t') || e.id.empty() || e.wav_path.empty() ||
            e.rttm_path.empty()) {
            throw ContractError("manifest line " + std::to_string(line_no) +
                                ": expected id<TAB>wav<TAB>rttm");
        }
        entries.push_back(std::move(e));
    }
    if (entries.empty()) throw ContractError("manifest: '" + path + "' lists no sessions");
    return entries;
}

std::vector<TrainSession> load_tsvad_sessions(const std::string& manifest_path,
                                              const Config& config) {
    const int factor = config.model.tsvad.frontend_stride1 * config.model.tsvad.frontend_stride2;
    const double frame_s = config.features.config.hop_ms / 1000.0 * factor;
    std::vector<TrainSession> sessions;
    for (const ManifestEntry& entry : read_manifest(manifest_path)) {
        Wav wav = read_wav(entry.wav_path);
        std::vector<double> samples = wav.sample_rate == config.features.config.sample_rate
                                          ? std::move(wav.samples)
                                          : resample_nearest(wav.samples, wav.sample_rate,
                                                             config.features.config.sample_rate);
        TrainSession sess;
        sess.id = entry.id;
        sess.features = logmel(samples, config.features.config);
        const int t_emb = sess.features.dim(0) / factor;
        if (t_emb < 1) {
            throw ContractError("train: session '" + entry.id + "' is too short");
        }
        const std::vector<RttmSegment> ref = session_reference(entry);
        sess.speakers = speakers_of(ref);
        sess.labels = segments_to_frames(ref, frame_s, t_emb, sess.speakers);
        sessions.push_back(std::move(sess));
    }
    return sessions;
}

std::vector<TrainSession> load_eda_sessions(const std::string& manifest_path,
                                            const Config& config) {
    const double frame_s =
        config.features.config.hop_ms / 1000.0 * config.features.subsample;
    std::vector<TrainSession> sessions;
    for (const ManifestEntry& entry : read_manifest(manifest_path)) {
        Wav wav = read_wav(entry.wav_path);
        std::vector<double> samples = wav.sample_rate == config.features.config.sample_rate
                                          ? std::move(wav.samples)
                                          : resample_nearest(wav.samples, wav.sample_rate,
                                                             config.features.config.sample_rate);
        TrainSession sess;
        sess.id = entry.id;
        const Tensor mel = logmel(samples, config.features.config);
        sess.features = stack_subsample(mel, config.features.stack, config.features.subsample);
        const int t_len = sess.features.dim(0);
        if (t_len < 1) {
            throw ContractError("train: session '" + entry.id + "' is too short");
        }
        const std::vector<RttmSegment> ref = session_reference(entry);
        sess.speakers = speakers_of(ref);
        sess.labels = segments_to_frames(ref, frame_s, t_len, sess.speakers);
        sessions.push_back(std::move(sess));
    }
    return sessions;
}

TrainResult train_tsvad_model(TsVadModel& model, const std::vector<TrainSession>& sessions,
                              const Config& config, const TrainOptions& opts) {
    if (sessions.empty()) throw ContractError("train: no sessions");
    if (is_eda_variant(config.model.variant)) {
        throw ContractError("train: config variant is not a target-speaker model");
    }
    const int factor = model.dims.frontend_stride1 * model.dims.frontend_stride2;
    const double frame_s = config.features.config.hop_ms / 1000.0 * factor;
    const int chunk_frames =
        std::max(1, static_cast<int>(std::lround(config.training.chunk_seconds / frame_s)));
    const bool concat = config.model.variant == ModelVariant::CONCAT;
    Rng rng(config.training.seed);
    ParamList params = model.parameters();

    auto batch_loss = [&]() -> Tensor {
        Tensor total;
        for (int b = 0; b < config.training.batch; ++b) {
            Chunk chunk = sample_chunk(sessions, chunk_frames, factor, rng);
            Tensor emb = frontend_encode(chunk.features, model.frontend);
            TrainingProfiles tp = training_profiles(emb, chunk.labels);
            Tensor profiles = tp.profiles;
            Tensor targets = cols_copy(chunk.labels, tp.kept);
            if (concat) {
                // Baseline capacity rule at train time as well: zero-pad the
                // profile matrix and train the padded columns toward silence.
                std::vector<double> durations;
                for (int idx : tp.kept) {
                    double frames = 0.0;
                    for (int t = 0; t < chunk.labels.dim(0); ++t) {
                        frames += chunk.labels.at2(t, idx);
                    }
                    durations.push_back(frames * frame_s);
                }
                PaddedProfiles pp =
                    pad_profiles_baseline(profiles, durations, model.dims.max_speakers);
                profiles = pp.profiles;
                Tensor padded = Tensor::zeros({targets.dim(0), model.dims.max_speakers});
                for (std::size_t j = 0; j < pp.kept.size(); ++j) {
                    for (int t = 0; t < targets.dim(0); ++t) {
                        padded.mutable_values()[static_cast<std::size_t>(t) *
                                                    model.dims.max_speakers +
                                                j] = targets.at2(t, pp.kept[j]);
                    }
                }
                targets = padded;
            }
            Tensor activities = tsvad_forward_embedded(emb, profiles, model);
            Tensor mask = Tensor::full({targets.dim(0)}, 1.0);
            Tensor item = bce_sum_loss(activities, targets, mask);
            total = total.defined() ? add(total, item) : item;
        }
        return mul_scalar(total, 1.0 / config.training.batch);
    };
    return run_training(std::move(params), config, opts, batch_loss);
}

TrainResult train_eda_model(EdaTsVadModel& model, const std::vector<TrainSession>& sessions,
                            const Config& config, const TrainOptions& opts) {
    if (sessions.empty()) throw ContractError("train: no sessions");
    if (!is_eda_variant(config.model.variant)) {
        throw ContractError("train: config variant is not an attractor model");
    }
    const bool dot = config.model.variant == ModelVariant::EDA_DOT;
    const double frame_s =
        config.features.config.hop_ms / 1000.0 * config.features.subsample;
    const int chunk_frames =
        std::max(1, static_cast<int>(std::lround(config.training.chunk_seconds / frame_s)));
    Rng rng(config.training.seed);
    ParamList params = model.parameters();

    auto batch_loss = [&]() -> Tensor {
        Tensor total;
        for (int b = 0; b < config.training.batch; ++b) {
            Chunk chunk = sample_chunk(sessions, chunk_frames, 1, rng);
            const std::vector<int> active = active_columns(chunk.labels);
            const int true_n = static_cast<int>(active.size());
            Tensor targets = cols_copy(chunk.labels, active);
            const std::uint64_t shuffle_seed = rng.gen();
            EdaTsVadTrainOutput out =
                dot ? eda_dot_forward_train(chunk.features, model, true_n, shuffle_seed)
                    : eda_tsvad_forward_train(chunk.features, model, true_n, shuffle_seed);
            Tensor mask = Tensor::full({targets.dim(0)}, 1.0);
            CombinedLoss cl = combined_loss(out.activities, targets, mask,
                                            out.existence_probs, true_n);
            total = total.defined() ? add(total, cl.loss) : cl.loss;
        }
        return mul_scalar(total, 1.0 / config.training.batch);
    };
    return run_training(std::move(params), config, opts, batch_loss);
}

InferConfig infer_config_from(const Config& config) {
    InferConfig cfg;
    cfg.features = config.features.config;
    cfg.vad_hangover = config.inference.vad_hangover;
    cfg.ahc_threshold = config.inference.ahc_threshold;
    cfg.min_profile_dur = config.inference.min_profile_dur;
    cfg.chunk_frames = config.inference.chunk_frames;
    cfg.binarize_threshold = config.inference.binarize_threshold;
    cfg.median_taps = config.inference.median_taps;
    return cfg;
}

EdaInferConfig eda_infer_config_from(const Config& config) {
    EdaInferConfig cfg;
    cfg.features = config.features.config;
    cfg.stack = config.features.stack;
    cfg.subsample = config.features.subsample;
    cfg.binarize_threshold = config.inference.binarize_threshold;
    cfg.median_taps = config.inference.median_taps;
    cfg.use_dot_matcher = config.model.variant == ModelVariant::EDA_DOT;
    return cfg;
}

}  // namespace diarkit
