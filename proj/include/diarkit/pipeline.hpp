#pragma once

// Everything between raw audio and final segment lists: voice activity
// detection, the clustering first pass, profile extraction, chunked model
// inference, decision smoothing, and stitching.

#include "diarkit/audio.hpp"
#include "diarkit/eda.hpp"
#include "diarkit/features.hpp"
#include "diarkit/score.hpp"
#include "diarkit/tsvad.hpp"

#include <string>
#include <utility>
#include <vector>

namespace diarkit {

// Consecutive non-overlapping [start, end) ranges tiling [0, length); a
// short final remainder is kept as its own chunk.
std::vector<std::pair<int, int>> chunk_ranges(int length_frames, int chunk_frames);

// Energy-based VAD over feature frames. Frame energy is the mean feature
// value; the threshold is the midpoint between the quietest and loudest
// frame, and active stretches are extended by `hangover` frames at the tail.
// A flat signal (all energies equal) is silence.
std::vector<char> energy_vad(const Tensor& features, int hangover = 30);

// Maximal active runs as [onset, offset) in seconds.
std::vector<Interval> vad_to_intervals(const std::vector<char>& vad, double frame_s);

// ---------------------------------------------------------------------------
// First pass: agglomerative clustering of segment embeddings
// ---------------------------------------------------------------------------

struct SegmentEmbedding {
    double onset = 0.0;
    double duration = 0.0;
    Tensor embedding;  // [E] mean frame embedding of the segment
};

struct FirstPassSpeaker {
    std::string name;  // fp0, fp1, ... ordered by earliest segment
    std::vector<RttmSegment> segments;
    double total_speech = 0.0;
    bool has_profile = false;
    Tensor profile;  // [E]; set by profiles_from_firstpass when speech suffices
};

struct FirstPassResult {
    std::vector<FirstPassSpeaker> speakers;
};

// Average-linkage agglomerative clustering over cosine distance: merge the
// closest cluster pair until the minimum inter-cluster distance exceeds the
// threshold. Each final cluster becomes one first-pass speaker.
FirstPassResult ahc_firstpass(const std::vector<SegmentEmbedding>& segments,
                              double threshold, const std::string& session);

struct ProfileSet {
    Tensor profiles;                     // [n_kept, E]
    std::vector<std::string> kept;       // speaker names, profile row order
    std::vector<double> kept_durations;  // total speech per kept speaker
    std::vector<std::string> excluded;   // speakers under the duration floor
};

// Profile = mean frame embedding over the speaker's detected regions.
// Speakers with less than min_dur total speech get no profile and are
// returned separately (their activity is later copied through unchanged).
// Also records has_profile/profile on the FirstPassResult entries.
ProfileSet profiles_from_firstpass(const Tensor& frame_embeddings, double frame_s,
                                   FirstPassResult& fp, double min_dur = 2.0);

// ---------------------------------------------------------------------------
// Decision post-processing
// ---------------------------------------------------------------------------

// Element-wise threshold; ties (== thr) count as active.
Tensor binarize(const Tensor& probs, double thr = 0.5);

// Per-column sliding binary median with edge replication; taps must be odd.
// The window's left half reads already-filtered values (a recursive median),
// so one pass reaches a fixed point: filtering twice changes nothing.
Tensor median_filter(const Tensor& decisions, int taps = 11);

// Maximal per-column runs of ones -> segments (frame t spans
// [t*frame_s, (t+1)*frame_s)). speakers names the columns.
std::vector<RttmSegment> frames_to_segments(const Tensor& decisions, double frame_s,
                                            const std::vector<std::string>& speakers,
                                            const std::string& session);

// Inverse rasterization: frame t is active when its center lies inside a
// segment. Exact inverse of frames_to_segments on frame-aligned segments.
Tensor segments_to_frames(const std::vector<RttmSegment>& segments, double frame_s,
                          int n_frames, const std::vector<std::string>& speakers);

// Union of both lists with same-speaker overlapping-or-abutting segments
// merged. The label spaces must be disjoint between the two inputs.
std::vector<RttmSegment> stitch(const std::vector<RttmSegment>& primary,
                                const std::vector<RttmSegment>& copied);

// ---------------------------------------------------------------------------
// Session inference
// ---------------------------------------------------------------------------

struct InferConfig {
    FeatureConfig features = FeatureConfig::target_speaker_path();
    int vad_hangover = 30;
    double ahc_threshold = 0.4;  // cosine distance
    double min_profile_dur = 2.0;
    int chunk_frames = 750;  // embedding frames per chunk (60 s at 80 ms)
    double binarize_threshold = 0.5;
    int median_taps = 11;
};

// features -> VAD -> AHC first pass -> profiles -> per-chunk target-speaker
// inference -> binarize -> median filter -> segments -> stitch with the
// profile-less speakers' first-pass activity. Errors carry the session id.
std::vector<RttmSegment> infer_session(const Wav& audio, const TsVadModel& model,
                                       const InferConfig& cfg,
                                       const std::string& session_id);

// Second pass only, with externally supplied speaker profiles instead of the
// AHC first pass. `profiles` is [n, profile_dim] with one row per entry of
// `names` (unique, non-empty). The energy VAD still gates all-silent input.
std::vector<RttmSegment> infer_session_with_profiles(
    const Wav& audio, const TsVadModel& model, const Tensor& profiles,
    const std::vector<std::string>& names, const InferConfig& cfg,
    const std::string& session_id);

struct EdaInferConfig {
    FeatureConfig features = FeatureConfig::attractor_path();
    int stack = 15;
    int subsample = 10;
    double binarize_threshold = 0.5;
    int median_taps = 11;
    // Match frames to attractors with plain dot products instead of the
    // TS-VAD matching stack (the eda_dot baseline).
    bool use_dot_matcher = false;
};

// Single-pass attractor mode: no first pass and no profiles; the whole
// session is encoded once and matched against its decoded attractors. An
// all-silent session (per the energy VAD) returns no segments.
std::vector<RttmSegment> infer_session_eda(const Wav& audio, const EdaTsVadModel& model,
                                           const EdaInferConfig& cfg,
                                           const std::string& session_id);

}  // namespace diarkit
