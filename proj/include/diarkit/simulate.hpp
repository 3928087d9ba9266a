#pragma once

// Deterministic conversation simulator: synthetic spectral speakers, a
// round-robin utterance scheduler with controllable overlap, additive white
// noise, and full small-dataset generation with ground truth.

#include "diarkit/audio.hpp"
#include "diarkit/score.hpp"
#include "diarkit/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace diarkit {

// A speaker is a band-limited filtered-noise source: id fixes the resonator
// center frequency, bandwidth and syllabic amplitude-modulation rate, so
// distinct ids have distinct spectral signatures by construction.
struct SyntheticSpeaker {
    int id = 0;
    double center_hz = 500.0;
    double bandwidth_hz = 120.0;
    double mod_hz = 3.0;

    static SyntheticSpeaker make(int id);
};

// Seed-deterministic utterance: white noise through a two-pole resonator at
// the speaker's center frequency, amplitude-modulated, edge-ramped, and RMS
// normalized to 1.
std::vector<double> synth_utterance(const SyntheticSpeaker& speaker, double length_s,
                                    std::uint64_t seed, int sample_rate = 16000);

struct ConversationSpec {
    int num_speakers = 2;
    double overlap_target = 0.2;  // overlapped speech / total speech, in [0, 0.5)
    double duration_s = 60.0;
    double utt_min_s = 1.5;
    double utt_max_s = 4.0;
    double pause_min_s = 0.5;
    double pause_max_s = 2.0;
    bool add_noise = true;
    double snr_db = 20.0;
    int sample_rate = 16000;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SimulatedConversation {
    Wav audio;
    std::vector<RttmSegment> reference;
    double realized_overlap = 0.0;
    bool overlap_unreachable = false;
    // Per-speaker speech actually placed in the mix (sample-grid exact).
    std::map<std::string, double> scheduled_speech;
};

// Instant-wise overlap ratio of a segment list: time with >= 2 active
// speakers divided by time with >= 1 active speaker (0 when there is none).
double overlap_ratio(const std::vector<RttmSegment>& segments);

// Builds one conversation: schedules round-robin turns with pauses, then
// pulls onsets earlier pair-by-pair until the overlap target is met (the
// realized ratio is measured from the reference; if the target cannot be
// reached within the schedule the result is flagged), mixes the waveforms,
// adds white noise at the configured SNR, and peak-normalizes.
SimulatedConversation mix_conversation(const ConversationSpec& spec,
                                       const std::string& session_id = "session");

struct DatasetSpec {
    int n_sessions = 10;
    int min_speakers = 2;
    int max_speakers = 3;
    double duration_s = 60.0;
    double overlap_target = 0.2;
    double utt_min_s = 1.5;
    double utt_max_s = 4.0;
    double pause_min_s = 0.5;
    double pause_max_s = 2.0;
    bool add_noise = true;
    double snr_db = 20.0;
    int sample_rate = 16000;
    std::uint64_t seed = 0;
};

struct DatasetResult {
    std::vector<std::string> session_ids;
    std::string manifest_path;
};

// Writes <id>.wav and <id>.rttm per session plus a tab-separated manifest
// (`<session-id>\t<audio-path>\t<rttm-path>`). A pure function of the spec:
// regenerating with the same spec produces bit-identical files. Disjoint
// seeds give disjoint datasets, so train/dev/test splits are separate calls.
DatasetResult build_dataset(const std::string& out_dir, const DatasetSpec& spec);

}  // namespace diarkit
