#include "diarkit/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

namespace diarkit {

namespace {

constexpr double kMinSegment = 0.02;  // s; shorter placements are dropped
constexpr double kGuard = 0.01;       // s; spacing guard between related turns

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct Turn {
    int speaker = 0;
    double onset = 0.0;
    double dur = 0.0;  // unclipped utterance length
    std::uint64_t seed = 0;
};

}  // namespace

SyntheticSpeaker SyntheticSpeaker::make(int id) {
    if (id < 0) throw ContractError("speaker id must be non-negative");
    SyntheticSpeaker s;
    s.id = id;
    s.center_hz = 500.0 + 230.0 * id;
    s.bandwidth_hz = 120.0 + 20.0 * (id % 5);
    s.mod_hz = 2.5 + 0.37 * id;
    return s;
}

std::vector<double> synth_utterance(const SyntheticSpeaker& speaker, double length_s,
                                    std::uint64_t seed, int sample_rate) {
    if (length_s <= 0) throw ContractError("synth_utterance: length must be positive");
    if (sample_rate <= 0) throw ContractError("synth_utterance: bad sample rate");
    if (speaker.center_hz >= sample_rate / 2.0) {
        throw ContractError("synth_utterance: speaker center above Nyquist");
    }
    const auto n = static_cast<std::size_t>(std::lround(length_s * sample_rate));
    Rng rng(seed);
    const double theta = 2.0 * std::numbers::pi * speaker.center_hz / sample_rate;
    const double pole = std::exp(-std::numbers::pi * speaker.bandwidth_hz / sample_rate);
    const double a1 = 2.0 * pole * std::cos(theta);
    const double a2 = -pole * pole;
    const double phase0 = rng.uniform(0.0, 2.0 * std::numbers::pi);

    std::vector<double> x(n);
    double y1 = 0.0, y2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double y = a1 * y1 + a2 * y2 + rng.normal();
        y2 = y1;
        y1 = y;
        const double env =
            0.55 - 0.45 * std::cos(2.0 * std::numbers::pi * speaker.mod_hz *
                                       static_cast<double>(i) / sample_rate +
                                   phase0);
        x[i] = y * env;
    }
    // Raised-cosine edge ramps (5 ms) against onset/offset clicks.
    const std::size_t ramp = std::min(n / 2, static_cast<std::size_t>(sample_rate / 200));
    for (std::size_t i = 0; i < ramp; ++i) {
        const double w =
            0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(i) / static_cast<double>(ramp));
        x[i] *= w;
        x[n - 1 - i] *= w;
    }
    double power = 0.0;
    for (double v : x) power += v * v;
    const double rms = std::sqrt(power / static_cast<double>(n));
    if (!(rms > 0.0)) throw NumericalError("synth_utterance: degenerate signal");
    for (double& v : x) v /= rms;
    return x;
}

void ConversationSpec::validate() const {
    if (num_speakers < 1) throw ContractError("spec: need at least one speaker");
    if (!(duration_s > 0)) throw ContractError("spec: duration must be positive");
    if (overlap_target < 0 || overlap_target >= 0.5) {
        throw ContractError("spec: overlap target must lie in [0, 0.5)");
    }
    if (num_speakers == 1 && overlap_target > 0) {
        throw ContractError("spec: one speaker cannot overlap with itself");
    }
    if (!(utt_min_s > 0) || utt_max_s < utt_min_s) {
        throw ContractError("spec: bad utterance length range");
    }
    if (pause_min_s < 0 || pause_max_s < pause_min_s) {
        throw ContractError("spec: bad pause range");
    }
    if (sample_rate <= 0) throw ContractError("spec: bad sample rate");
}

double overlap_ratio(const std::vector<RttmSegment>& segments) {
    std::vector<std::pair<double, int>> events;
    for (const RttmSegment& s : segments) {
        events.push_back({s.onset, +1});
        events.push_back({s.offset(), -1});
    }
    std::sort(events.begin(), events.end());
    double speech = 0.0, overlapped = 0.0;
    int active = 0;
    double prev = 0.0;
    for (const auto& [t, delta] : events) {
        if (active >= 1) speech += t - prev;
        if (active >= 2) overlapped += t - prev;
        active += delta;
        prev = t;
    }
    return speech > 0 ? overlapped / speech : 0.0;
}

SimulatedConversation mix_conversation(const ConversationSpec& spec,
                                       const std::string& session_id) {
    spec.validate();
    Rng rng(spec.seed);
    const int sr = spec.sample_rate;

    // Phase 1: no-overlap round-robin schedule covering the duration.
    std::vector<int> order = rng.permutation(spec.num_speakers);
    std::vector<Turn> turns;
    double t = rng.uniform(0.05, 0.3);
    while (t < spec.duration_s - kMinSegment) {
        Turn turn;
        turn.speaker = order[turns.size() % order.size()];
        turn.onset = t;
        turn.dur = rng.uniform(spec.utt_min_s, spec.utt_max_s);
        turn.seed = rng.gen();
        turns.push_back(turn);
        t = turn.onset + turn.dur + rng.uniform(spec.pause_min_s, spec.pause_max_s);
    }
    double total_speech = 0.0;
    for (const Turn& turn : turns) {
        total_speech += std::min(turn.onset + turn.dur, spec.duration_s) - turn.onset;
    }

    // Phase 2: pull onsets earlier, pair by pair, until the overlap budget is
    // spent. Caps keep overlaps pairwise-disjoint (no onset crosses the end
    // of the turn before last) and same-speaker segments separated.
    // The ratio is instant-wise (overlapped time over the union of speech),
    // and pulling shrinks the union: ov / (sum - ov) = target solves to
    // ov = target * sum / (1 + target).
    double need = spec.overlap_target * total_speech / (1.0 + spec.overlap_target);
    std::vector<double> last_end(static_cast<std::size_t>(spec.num_speakers), -1.0);
    for (std::size_t k = 0; k < turns.size(); ++k) {
        Turn& turn = turns[k];
        if (k > 0 && need > 1e-9) {
            const Turn& prev = turns[k - 1];
            const double prev_end = prev.onset + prev.dur;
            double onset_min = prev_end - 0.8 * std::min(turn.dur, prev.dur);
            if (k > 1) {
                onset_min = std::max(onset_min,
                                     turns[k - 2].onset + turns[k - 2].dur + kGuard);
            }
            onset_min = std::max(onset_min,
                                 last_end[static_cast<std::size_t>(turn.speaker)] + kGuard);
            onset_min = std::max(onset_min, 0.0);
            const double max_pull = std::max(0.0, prev_end - std::max(onset_min, 0.0));
            const double overlap_here =
                std::min(need, std::max(0.0, prev_end - onset_min));
            if (overlap_here > 1e-9 && max_pull > 1e-9) {
                turn.onset = prev_end - overlap_here;
                need -= overlap_here;
            }
        }
        last_end[static_cast<std::size_t>(turn.speaker)] = turn.onset + turn.dur;
    }

    // Phase 3: snap to the sample grid, synthesize, and place.
    SimulatedConversation out;
    const auto n_total = static_cast<std::size_t>(std::lround(spec.duration_s * sr));
    out.audio.sample_rate = sr;
    out.audio.samples.assign(n_total, 0.0);
    for (const Turn& turn : turns) {
        const auto onset_idx = static_cast<std::size_t>(std::lround(turn.onset * sr));
        if (onset_idx >= n_total) continue;
        auto len_idx = static_cast<std::size_t>(std::lround(turn.dur * sr));
        len_idx = std::min(len_idx, n_total - onset_idx);
        const double placed_s = static_cast<double>(len_idx) / sr;
        if (placed_s < kMinSegment) continue;
        SyntheticSpeaker speaker = SyntheticSpeaker::make(turn.speaker);
        std::vector<double> utt = synth_utterance(speaker, placed_s, turn.seed, sr);
        for (std::size_t i = 0; i < len_idx; ++i) out.audio.samples[onset_idx + i] += utt[i];

        RttmSegment segm;
        segm.session = session_id;
        segm.onset = static_cast<double>(onset_idx) / sr;
        segm.duration = placed_s;
        segm.speaker = "spk" + std::to_string(turn.speaker);
        out.reference.push_back(segm);
        out.scheduled_speech[segm.speaker] += placed_s;
    }

    // Phase 4: noise and headroom.
    if (spec.add_noise && !out.reference.empty()) {
        double power = 0.0;
        for (double v : out.audio.samples) power += v * v;
        power /= static_cast<double>(n_total);
        const double sigma = std::sqrt(power / std::pow(10.0, spec.snr_db / 10.0));
        for (double& v : out.audio.samples) v += rng.normal(0.0, sigma);
    }
    double peak = 0.0;
    for (double v : out.audio.samples) peak = std::max(peak, std::abs(v));
    if (peak > 0.95) {
        const double gain = 0.95 / peak;
        for (double& v : out.audio.samples) v *= gain;
    }

    out.realized_overlap = overlap_ratio(out.reference);
    out.overlap_unreachable = out.realized_overlap < spec.overlap_target - 0.05;
    return out;
}

DatasetResult build_dataset(const std::string& out_dir, const DatasetSpec& spec) {
    if (spec.n_sessions < 1) throw ContractError("dataset: need at least one session");
    if (spec.min_speakers < 1 || spec.max_speakers < spec.min_speakers) {
        throw ContractError("dataset: bad speaker-count range");
    }
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw ContractError("dataset: cannot create " + out_dir + ": " + ec.message());

    DatasetResult result;
    std::ostringstream manifest;
    for (int i = 0; i < spec.n_sessions; ++i) {
        ConversationSpec cs;
        cs.seed = splitmix64(spec.seed ^ (0x5e551a0000000000ULL + static_cast<std::uint64_t>(i)));
        Rng pick(splitmix64(cs.seed));
        cs.num_speakers = spec.min_speakers + pick.randint(spec.max_speakers - spec.min_speakers + 1);
        cs.overlap_target = spec.overlap_target;
        cs.duration_s = spec.duration_s;
        cs.utt_min_s = spec.utt_min_s;
        cs.utt_max_s = spec.utt_max_s;
        cs.pause_min_s = spec.pause_min_s;
        cs.pause_max_s = spec.pause_max_s;
        cs.add_noise = spec.add_noise;
        cs.snr_db = spec.snr_db;
        cs.sample_rate = spec.sample_rate;

        std::ostringstream id_s;
        id_s << "sess" << (i < 10 ? "000" : i < 100 ? "00" : i < 1000 ? "0" : "") << i;
        const std::string id = id_s.str();
        SimulatedConversation conv = mix_conversation(cs, id);

        const std::string wav_path = out_dir + "/" + id + ".wav";
        const std::string rttm_path = out_dir + "/" + id + ".rttm";
        write_wav(wav_path, conv.audio);
        write_rttm_file(rttm_path, conv.reference);
        manifest << id << '\t' << wav_path << '\t' << rttm_path << '\n';
        result.session_ids.push_back(id);
    }
    result.manifest_path = out_dir + "/manifest.tsv";
    std::ofstream mf(result.manifest_path);
    if (!mf) throw ContractError("dataset: cannot write " + result.manifest_path);
    mf << manifest.str();
    return result;
}

}  // namespace diarkit
