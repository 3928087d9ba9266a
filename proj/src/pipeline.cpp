#include "diarkit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

namespace diarkit {

namespace {

// Mean of rows [start, start+len) as a fresh leaf tensor [D].
Tensor mean_rows(const Tensor& x, int start, int len) {
    const int d = x.dim(1);
    std::vector<double> acc(static_cast<std::size_t>(d), 0.0);
    for (int t = start; t < start + len; ++t) {
        for (int j = 0; j < d; ++j) {
            acc[static_cast<std::size_t>(j)] += x.at2(t, j);
        }
    }
    for (double& v : acc) v /= static_cast<double>(len);
    return Tensor::from_data({d}, std::move(acc));
}

double cosine_distance(const Tensor& a, const Tensor& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        dot += a.at(i) * b.at(i);
        na += a.at(i) * a.at(i);
        nb += b.at(i) * b.at(i);
    }
    const double denom = std::max(std::sqrt(na) * std::sqrt(nb), 1e-12);
    return 1.0 - dot / denom;
}

template <typename Fn>
auto with_session_context(const std::string& session_id, Fn&& fn) {
    try {
        return fn();
    } catch (const ContractError& e) {
        throw ContractError("session " + session_id + ": " + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError("session " + session_id + ": " + e.what());
    }
}

std::vector<double> prepare_audio(const Wav& audio, int target_rate) {
    if (audio.sample_rate == target_rate) return audio.samples;
    return resample_nearest(audio.samples, audio.sample_rate, target_rate);
}

// Frames of `emb` whose centers fall inside [onset, offset).
std::pair<int, int> covered_rows(double onset, double offset, double frame_s, int t_max) {
    int first = static_cast<int>(std::ceil(onset / frame_s - 0.5));
    int last = static_cast<int>(std::floor(offset / frame_s - 0.5 - 1e-12));
    first = std::max(first, 0);
    last = std::min(last, t_max - 1);
    return {first, last};  // inclusive; empty when last < first
}

}  // namespace

std::vector<std::pair<int, int>> chunk_ranges(int length_frames, int chunk_frames) {
    if (chunk_frames < 1) throw ContractError("chunk: chunk_frames must be >= 1");
    if (length_frames < 0) throw ContractError("chunk: negative length");
    std::vector<std::pair<int, int>> out;
    for (int start = 0; start < length_frames; start += chunk_frames) {
        out.push_back({start, std::min(start + chunk_frames, length_frames)});
    }
    return out;
}

std::vector<char> energy_vad(const Tensor& features, int hangover) {
    if (features.rank() != 2) throw ContractError("vad: expected [T, D] features");
    if (hangover < 0) throw ContractError("vad: hangover must be non-negative");
    const int t_len = features.dim(0);
    const int d = features.dim(1);
    std::vector<double> energy(static_cast<std::size_t>(t_len));
    for (int t = 0; t < t_len; ++t) {
        double sum = 0.0;
        for (int j = 0; j < d; ++j) sum += features.at2(t, j);
        energy[static_cast<std::size_t>(t)] = sum / d;
    }
    const auto [lo_it, hi_it] = std::minmax_element(energy.begin(), energy.end());
    const double lo = *lo_it, hi = *hi_it;
    std::vector<char> out(static_cast<std::size_t>(t_len), 0);
    if (hi - lo < 1e-9) return out;  // flat signal: nothing to detect
    const double threshold = 0.5 * (lo + hi);
    int countdown = 0;
    for (int t = 0; t < t_len; ++t) {
        if (energy[static_cast<std::size_t>(t)] > threshold) {
            out[static_cast<std::size_t>(t)] = 1;
            countdown = hangover;
        } else if (countdown > 0) {
            out[static_cast<std::size_t>(t)] = 1;
            --countdown;
        }
    }
    return out;
}

std::vector<Interval> vad_to_intervals(const std::vector<char>& vad, double frame_s) {
    if (frame_s <= 0) throw ContractError("vad: frame duration must be positive");
    std::vector<Interval> out;
    const int n = static_cast<int>(vad.size());
    int t = 0;
    while (t < n) {
        if (!vad[static_cast<std::size_t>(t)]) {
            ++t;
            continue;
        }
        int end = t;
        while (end < n && vad[static_cast<std::size_t>(end)]) ++end;
        out.push_back({t * frame_s, end * frame_s});
        t = end;
    }
    return out;
}

FirstPassResult ahc_firstpass(const std::vector<SegmentEmbedding>& segments,
                              double threshold, const std::string& session) {
    FirstPassResult result;
    if (segments.empty()) return result;
    const std::size_t n = segments.size();
    for (const SegmentEmbedding& s : segments) {
        if (!s.embedding.defined() || s.embedding.rank() != 1 ||
            s.embedding.numel() != segments[0].embedding.numel()) {
            throw ContractError("ahc: segment embeddings must share one [E] shape");
        }
        if (s.duration <= 0) throw ContractError("ahc: segment durations must be positive");
    }

    // Pairwise cosine distances between segment embeddings.
    std::vector<std::vector<double>> dist(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            dist[i][j] = dist[j][i] =
                cosine_distance(segments[i].embedding, segments[j].embedding);
        }
    }

    // Average linkage: inter-cluster distance is the mean over member pairs.
    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < n; ++i) clusters.push_back({i});
    auto linkage = [&](const std::vector<std::size_t>& a,
                       const std::vector<std::size_t>& b) {
        double sum = 0.0;
        for (std::size_t i : a) {
            for (std::size_t j : b) sum += dist[i][j];
        }
        return sum / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
    };
    while (clusters.size() > 1) {
        double best = 1e300;
        std::size_t bi = 0, bj = 0;
        for (std::size_t i = 0; i < clusters.size(); ++i) {
            for (std::size_t j = i + 1; j < clusters.size(); ++j) {
                const double d = linkage(clusters[i], clusters[j]);
                if (d < best) {
                    best = d;
                    bi = i;
                    bj = j;
                }
            }
        }
        if (best > threshold) break;
        clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
        clusters.erase(clusters.begin() + static_cast<std::ptrdiff_t>(bj));
    }

    // Deterministic speaker order: earliest member onset first.
    std::sort(clusters.begin(), clusters.end(),
              [&](const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
                  double oa = 1e300, ob = 1e300;
                  for (std::size_t i : a) oa = std::min(oa, segments[i].onset);
                  for (std::size_t i : b) ob = std::min(ob, segments[i].onset);
                  return oa < ob;
              });
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        FirstPassSpeaker spk;
        spk.name = "fp" + std::to_string(c);
        std::vector<std::size_t> members = clusters[c];
        std::sort(members.begin(), members.end(),
                  [&](std::size_t a, std::size_t b) { return segments[a].onset < segments[b].onset; });
        for (std::size_t i : members) {
            RttmSegment seg;
            seg.session = session;
            seg.onset = segments[i].onset;
            seg.duration = segments[i].duration;
            seg.speaker = spk.name;
            spk.segments.push_back(seg);
            spk.total_speech += segments[i].duration;
        }
        result.speakers.push_back(std::move(spk));
    }
    return result;
}

ProfileSet profiles_from_firstpass(const Tensor& frame_embeddings, double frame_s,
                                   FirstPassResult& fp, double min_dur) {
    if (frame_embeddings.rank() != 2) {
        throw ContractError("profiles: expected [T, E] frame embeddings");
    }
    if (frame_s <= 0) throw ContractError("profiles: frame duration must be positive");
    const int t_len = frame_embeddings.dim(0);
    const int e = frame_embeddings.dim(1);
    ProfileSet out;
    std::vector<Tensor> rows;
    for (FirstPassSpeaker& spk : fp.speakers) {
        spk.has_profile = false;
        if (spk.total_speech < min_dur) {
            out.excluded.push_back(spk.name);
            continue;
        }
        std::vector<double> acc(static_cast<std::size_t>(e), 0.0);
        int covered = 0;
        for (const RttmSegment& seg : spk.segments) {
            const auto [first, last] = covered_rows(seg.onset, seg.offset(), frame_s, t_len);
            for (int t = first; t <= last; ++t) {
                for (int j = 0; j < e; ++j) acc[static_cast<std::size_t>(j)] += frame_embeddings.at2(t, j);
                ++covered;
            }
        }
        if (covered == 0) {
            out.excluded.push_back(spk.name);
            continue;
        }
        for (double& v : acc) v /= static_cast<double>(covered);
        spk.profile = Tensor::from_data({e}, acc);
        spk.has_profile = true;
        rows.push_back(spk.profile);
        out.kept.push_back(spk.name);
        out.kept_durations.push_back(spk.total_speech);
    }
    if (!rows.empty()) out.profiles = stack_axis0(rows);
    return out;
}

Tensor binarize(const Tensor& probs, double thr) {
    if (probs.rank() != 2) throw ContractError("binarize: expected [T, S]");
    std::vector<double> out(probs.numel());
    for (std::size_t i = 0; i < probs.numel(); ++i) {
        const double p = probs.at(i);
        if (p < 0.0 || p > 1.0) throw ContractError("binarize: probabilities must lie in [0, 1]");
        out[i] = p >= thr ? 1.0 : 0.0;
    }
    return Tensor::from_data(probs.shape, std::move(out));
}

Tensor median_filter(const Tensor& decisions, int taps) {
    if (decisions.rank() != 2) throw ContractError("median: expected [T, S]");
    if (taps < 1 || taps % 2 == 0) throw ContractError("median: taps must be odd");
    const int t_len = decisions.dim(0);
    const int s = decisions.dim(1);
    for (std::size_t i = 0; i < decisions.numel(); ++i) {
        const double v = decisions.at(i);
        if (v != 0.0 && v != 1.0) throw ContractError("median: decisions must be binary");
    }
    const int half = taps / 2;
    const int majority = half + 1;
    std::vector<double> out(decisions.numel());
    auto at_out = [&](int t, int col) -> double& {
        return out[static_cast<std::size_t>(t) * static_cast<std::size_t>(s) +
                   static_cast<std::size_t>(col)];
    };
    // Recursive sliding median: positions left of the window centre read the
    // already-filtered values. This is the median variant whose single pass is
    // a fixed point (a second application changes nothing), which plain
    // sliding medians do not guarantee (e.g. 0,1,0,1,0).
    for (int col = 0; col < s; ++col) {
        for (int t = 0; t < t_len; ++t) {
            int ones = 0;
            for (int j = -half; j <= half; ++j) {
                const int src = std::clamp(t + j, 0, t_len - 1);
                const double v = src < t ? at_out(src, col) : decisions.at2(src, col);
                if (v == 1.0) ++ones;
            }
            at_out(t, col) = ones >= majority ? 1.0 : 0.0;
        }
    }
    return Tensor::from_data(decisions.shape, std::move(out));
}

std::vector<RttmSegment> frames_to_segments(const Tensor& decisions, double frame_s,
                                            const std::vector<std::string>& speakers,
                                            const std::string& session) {
    if (decisions.rank() != 2) throw ContractError("frames_to_segments: expected [T, S]");
    if (static_cast<int>(speakers.size()) != decisions.dim(1)) {
        throw ContractError("frames_to_segments: one name per column required");
    }
    if (frame_s <= 0) throw ContractError("frames_to_segments: bad frame duration");
    std::vector<RttmSegment> out;
    const int t_len = decisions.dim(0);
    for (int col = 0; col < decisions.dim(1); ++col) {
        int t = 0;
        while (t < t_len) {
            if (decisions.at2(t, col) != 1.0) {
                ++t;
                continue;
            }
            int end = t;
            while (end < t_len && decisions.at2(end, col) == 1.0) ++end;
            RttmSegment seg;
            seg.session = session;
            seg.onset = t * frame_s;
            seg.duration = (end - t) * frame_s;
            seg.speaker = speakers[static_cast<std::size_t>(col)];
            out.push_back(seg);
            t = end;
        }
    }
    std::sort(out.begin(), out.end(), [](const RttmSegment& a, const RttmSegment& b) {
        return a.onset != b.onset ? a.onset < b.onset : a.speaker < b.speaker;
    });
    return out;
}

Tensor segments_to_frames(const std::vector<RttmSegment>& segments, double frame_s,
                          int n_frames, const std::vector<std::string>& speakers) {
    if (frame_s <= 0) throw ContractError("segments_to_frames: bad frame duration");
    if (n_frames < 0) throw ContractError("segments_to_frames: negative frame count");
    std::map<std::string, int> col_of;
    for (std::size_t i = 0; i < speakers.size(); ++i) {
        col_of[speakers[i]] = static_cast<int>(i);
    }
    const int s = static_cast<int>(speakers.size());
    std::vector<double> out(static_cast<std::size_t>(n_frames) * static_cast<std::size_t>(s), 0.0);
    for (const RttmSegment& seg : segments) {
        auto it = col_of.find(seg.speaker);
        if (it == col_of.end()) {
            throw ContractError("segments_to_frames: unknown speaker " + seg.speaker);
        }
        const auto [first, last] = covered_rows(seg.onset, seg.offset(), frame_s, n_frames);
        for (int t = first; t <= last; ++t) {
            out[static_cast<std::size_t>(t) * static_cast<std::size_t>(s) +
                static_cast<std::size_t>(it->second)] = 1.0;
        }
    }
    return Tensor::from_data({n_frames, s}, std::move(out));
}

std::vector<RttmSegment> stitch(const std::vector<RttmSegment>& primary,
                                const std::vector<RttmSegment>& copied) {
    std::set<std::string> primary_names, copied_names;
    for (const RttmSegment& s : primary) primary_names.insert(s.speaker);
    for (const RttmSegment& s : copied) copied_names.insert(s.speaker);
    for (const std::string& name : copied_names) {
        if (primary_names.count(name)) {
            throw ContractError("stitch: speaker label collision on " + name);
        }
    }
    std::map<std::pair<std::string, std::string>, std::vector<Interval>> by_key;
    std::map<std::pair<std::string, std::string>, bool> seen;
    std::vector<RttmSegment> all(primary);
    all.insert(all.end(), copied.begin(), copied.end());
    for (const RttmSegment& s : all) {
        by_key[{s.session, s.speaker}].push_back({s.onset, s.offset()});
    }
    std::vector<RttmSegment> out;
    for (auto& [key, ivs] : by_key) {
        for (const Interval& iv : merge_intervals(std::move(ivs))) {
            RttmSegment seg;
            seg.session = key.first;
            seg.onset = iv.first;
            seg.duration = iv.second - iv.first;
            seg.speaker = key.second;
            out.push_back(seg);
        }
    }
    std::sort(out.begin(), out.end(), [](const RttmSegment& a, const RttmSegment& b) {
        if (a.session != b.session) return a.session < b.session;
        return a.onset != b.onset ? a.onset < b.onset : a.speaker < b.speaker;
    });
    return out;
}

std::vector<RttmSegment> infer_session(const Wav& audio, const TsVadModel& model,
                                       const InferConfig& cfg,
                                       const std::string& session_id) {
    return with_session_context(session_id, [&]() -> std::vector<RttmSegment> {
        NoGradGuard guard;
        const std::vector<double> samples = prepare_audio(audio, cfg.features.sample_rate);
        const Tensor feats = logmel(samples, cfg.features);
        const double hop_s = cfg.features.hop_ms / 1000.0;

        const std::vector<char> vad = energy_vad(feats, cfg.vad_hangover);
        const std::vector<Interval> speech = vad_to_intervals(vad, hop_s);
        if (speech.empty()) return {};

        const Tensor emb = frontend_encode(feats, model.frontend);
        const double frame_s = hop_s * model.frontend.factor();
        const int t_emb = emb.dim(0);

        std::vector<SegmentEmbedding> seg_embs;
        for (const Interval& iv : speech) {
            const auto [first, last] = covered_rows(iv.first, iv.second, frame_s, t_emb);
            if (last < first) continue;
            SegmentEmbedding se;
            se.onset = iv.first;
            se.duration = iv.second - iv.first;
            se.embedding = mean_rows(emb, first, last - first + 1);
            seg_embs.push_back(std::move(se));
        }
        if (seg_embs.empty()) return {};

        FirstPassResult fp = ahc_firstpass(seg_embs, cfg.ahc_threshold, session_id);
        ProfileSet profiles =
            profiles_from_firstpass(emb, frame_s, fp, cfg.min_profile_dur);

        std::vector<RttmSegment> copied;
        std::set<std::string> copy_names(profiles.excluded.begin(), profiles.excluded.end());
        for (const FirstPassSpeaker& spk : fp.speakers) {
            if (!copy_names.count(spk.name)) continue;
            copied.insert(copied.end(), spk.segments.begin(), spk.segments.end());
        }
        if (profiles.kept.empty()) return stitch({}, copied);

        Tensor prof = profiles.profiles;
        std::vector<std::string> names = profiles.kept;
        if (model.jsd.kind == JsdKind::CONCAT) {
            // Fixed-capacity baseline: pad to the model width or keep the
            // longest speakers; the overflow keeps its first-pass activity.
            PaddedProfiles padded = pad_profiles_baseline(prof, profiles.kept_durations,
                                                          model.dims.max_speakers);
            std::vector<std::string> kept_names;
            std::set<int> kept_set(padded.kept.begin(), padded.kept.end());
            for (int idx : padded.kept) {
                kept_names.push_back(names[static_cast<std::size_t>(idx)]);
            }
            for (std::size_t i = 0; i < names.size(); ++i) {
                if (kept_set.count(static_cast<int>(i))) continue;
                for (const FirstPassSpeaker& spk : fp.speakers) {
                    if (spk.name != names[i]) continue;
                    copied.insert(copied.end(), spk.segments.begin(), spk.segments.end());
                }
            }
            prof = padded.profiles;
            names = std::move(kept_names);
        }

        std::vector<double> prob_data;
        prob_data.reserve(static_cast<std::size_t>(t_emb) * names.size());
        for (const auto& [start, end] : chunk_ranges(t_emb, cfg.chunk_frames)) {
            Tensor chunk = slice_axis0(emb, start, end - start);
            Tensor probs = tsvad_forward_embedded(chunk, prof, model);
            if (static_cast<std::size_t>(probs.dim(1)) < names.size()) {
                throw ContractError("inference produced fewer columns than speakers");
            }
            for (int t = 0; t < probs.dim(0); ++t) {
                for (std::size_t c = 0; c < names.size(); ++c) {
                    prob_data.push_back(probs.at2(t, static_cast<int>(c)));
                }
            }
        }
        Tensor activity = Tensor::from_data({t_emb, static_cast<int>(names.size())},
                                            std::move(prob_data));
        Tensor decisions = median_filter(binarize(activity, cfg.binarize_threshold),
                                         cfg.median_taps);
        std::vector<RttmSegment> primary =
            frames_to_segments(decisions, frame_s, names, session_id);
        return stitch(primary, copied);
    });
}

std::vector<RttmSegment> infer_session_with_profiles(
    const Wav& audio, const TsVadModel& model, const Tensor& profiles,
    const std::vector<std::string>& names, const InferConfig& cfg,
    const std::string& session_id) {
    return with_session_context(session_id, [&]() -> std::vector<RttmSegment> {
        NoGradGuard guard;
        if (profiles.rank() != 2) {
            throw ContractError("external profiles must be rank 2");
        }
        if (static_cast<std::size_t>(profiles.dim(0)) != names.size() || names.empty()) {
            throw ContractError("external profiles need one row per speaker name");
        }
        if (profiles.dim(1) != model.dims.profile_dim) {
            throw ContractError("external profile width " + std::to_string(profiles.dim(1)) +
                                " does not match model profile_dim " +
                                std::to_string(model.dims.profile_dim));
        }
        std::set<std::string> unique(names.begin(), names.end());
        if (unique.size() != names.size()) {
            throw ContractError("external profile names must be unique");
        }

        const std::vector<double> samples = prepare_audio(audio, cfg.features.sample_rate);
        const Tensor feats = logmel(samples, cfg.features);
        const std::vector<char> vad = energy_vad(feats, cfg.vad_hangover);
        if (vad_to_intervals(vad, cfg.features.hop_ms / 1000.0).empty()) return {};

        const Tensor emb = frontend_encode(feats, model.frontend);
        const double frame_s = cfg.features.hop_ms / 1000.0 * model.frontend.factor();
        const int t_emb = emb.dim(0);

        Tensor prof = profiles;
        if (model.jsd.kind == JsdKind::CONCAT) {
            if (static_cast<int>(names.size()) > model.dims.max_speakers) {
                throw ContractError("external profile count exceeds model capacity");
            }
            const std::vector<double> durations(names.size(), 1.0);
            prof = pad_profiles_baseline(prof, durations, model.dims.max_speakers).profiles;
        }

        std::vector<double> prob_data;
        prob_data.reserve(static_cast<std::size_t>(t_emb) * names.size());
        for (const auto& [start, end] : chunk_ranges(t_emb, cfg.chunk_frames)) {
            Tensor chunk = slice_axis0(emb, start, end - start);
            Tensor probs = tsvad_forward_embedded(chunk, prof, model);
            for (int t = 0; t < probs.dim(0); ++t) {
                for (std::size_t c = 0; c < names.size(); ++c) {
                    prob_data.push_back(probs.at2(t, static_cast<int>(c)));
                }
            }
        }
        Tensor activity = Tensor::from_data({t_emb, static_cast<int>(names.size())},
                                            std::move(prob_data));
        Tensor decisions = median_filter(binarize(activity, cfg.binarize_threshold),
                                         cfg.median_taps);
        return frames_to_segments(decisions, frame_s, names, session_id);
    });
}

std::vector<RttmSegment> infer_session_eda(const Wav& audio, const EdaTsVadModel& model,
                                           const EdaInferConfig& cfg,
                                           const std::string& session_id) {
    return with_session_context(session_id, [&]() -> std::vector<RttmSegment> {
        NoGradGuard guard;
        const std::vector<double> samples = prepare_audio(audio, cfg.features.sample_rate);
        const Tensor feats = logmel(samples, cfg.features);
        const std::vector<char> vad = energy_vad(feats);
        if (std::count(vad.begin(), vad.end(), 1) == 0) return {};
        const Tensor stacked = stack_subsample(feats, cfg.stack, cfg.subsample);
        const double frame_s = cfg.features.hop_ms / 1000.0 * cfg.subsample;

        EdaTsVadOutput out = cfg.use_dot_matcher ? eda_dot_forward(stacked, model)
                                                 : eda_tsvad_forward(stacked, model);
        const int s = out.activities.dim(1);
        if (s == 0) return {};
        std::vector<std::string> names;
        for (int i = 0; i < s; ++i) names.push_back("spk" + std::to_string(i));
        Tensor decisions = median_filter(binarize(out.activities, cfg.binarize_threshold),
                                         cfg.median_taps);
        return frames_to_segments(decisions, frame_s, names, session_id);
    });
}

}  // namespace diarkit
