#include "diarkit/score.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "diarkit/assignment.hpp"
#include "diarkit/tensor.hpp"  // error taxonomy

namespace diarkit {

// ---------------------------------------------------------------------------
// RTTM
// ---------------------------------------------------------------------------

std::vector<RttmSegment> parse_rttm(const std::string& text) {
    std::vector<RttmSegment> out;
    std::istringstream lines(text);
    std::string line;
    int line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::vector<std::string> tok;
        std::string t;
        while (fields >> t) tok.push_back(t);
        if (tok.empty() || tok[0] != "SPEAKER") continue;
        if (tok.size() < 8) {
            throw ContractError("rttm line " + std::to_string(line_no) +
                                ": expected at least 8 fields, got " +
                                std::to_string(tok.size()));
        }
        RttmSegment seg;
        seg.session = tok[1];
        try {
            std::size_t used = 0;
            seg.onset = std::stod(tok[3], &used);
            if (used != tok[3].size()) throw std::invalid_argument(tok[3]);
            seg.duration = std::stod(tok[4], &used);
            if (used != tok[4].size()) throw std::invalid_argument(tok[4]);
        } catch (const std::exception&) {
            throw ContractError("rttm line " + std::to_string(line_no) +
                                ": malformed numeric field ('" + tok[3] + "', '" + tok[4] +
                                "')");
        }
        if (!std::isfinite(seg.onset) || !std::isfinite(seg.duration) || seg.onset < 0.0 ||
            seg.duration <= 0.0) {
            throw ContractError("rttm line " + std::to_string(line_no) +
                                ": onset must be >= 0 and duration > 0");
        }
        seg.speaker = tok[7];
        out.push_back(std::move(seg));
    }
    return out;
}

std::string write_rttm(const std::vector<RttmSegment>& segments) {
    std::string out;
    char buf[512];
    for (const RttmSegment& seg : segments) {
        std::snprintf(buf, sizeof(buf), "SPEAKER %s 1 %.3f %.3f <NA> <NA> %s <NA> <NA>\n",
                      seg.session.c_str(), seg.onset, seg.duration, seg.speaker.c_str());
        out += buf;
    }
    return out;
}

std::vector<RttmSegment> read_rttm_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ContractError("cannot open rttm file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_rttm(buf.str());
}

void write_rttm_file(const std::string& path, const std::vector<RttmSegment>& segments) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ContractError("cannot write rttm file: " + path);
    out << write_rttm(segments);
}

// ---------------------------------------------------------------------------
// Intervals
// ---------------------------------------------------------------------------

namespace {

constexpr double kEdgeEps = 1e-12;

bool active_at(const std::vector<Interval>& merged, double t) {
    // Merged intervals are sorted and disjoint.
    auto it = std::upper_bound(merged.begin(), merged.end(), t,
                               [](double v, const Interval& iv) { return v < iv.first; });
    if (it == merged.begin()) return false;
    --it;
    return t < it->second;
}

}  // namespace

std::vector<Interval> merge_intervals(std::vector<Interval> intervals) {
    std::vector<Interval> out;
    std::sort(intervals.begin(), intervals.end());
    for (const Interval& iv : intervals) {
        if (iv.second <= iv.first) continue;
        if (!out.empty() && iv.first <= out.back().second + kEdgeEps) {
            out.back().second = std::max(out.back().second, iv.second);
        } else {
            out.push_back(iv);
        }
    }
    return out;
}

namespace {

// Per-speaker activity as merged intervals. Same-speaker overlaps and abutting
// sub-segments collapse here, which also keeps the collar placement invariant
// under segment splitting.
std::map<std::string, std::vector<Interval>> speaker_timelines(
    const std::vector<RttmSegment>& segments) {
    std::map<std::string, std::vector<Interval>> raw;
    for (const RttmSegment& seg : segments) {
        raw[seg.speaker].push_back({seg.onset, seg.offset()});
    }
    std::map<std::string, std::vector<Interval>> out;
    for (auto& [speaker, ivs] : raw) out[speaker] = merge_intervals(std::move(ivs));
    return out;
}

}  // namespace

std::vector<Interval> collar_exclusions(const std::vector<RttmSegment>& ref, double collar) {
    if (collar < 0.0) throw ContractError("collar must be >= 0");
    if (collar == 0.0) return {};
    std::vector<Interval> zones;
    for (const auto& [speaker, ivs] : speaker_timelines(ref)) {
        for (const Interval& iv : ivs) {
            zones.push_back({iv.first - collar, iv.first + collar});
            zones.push_back({iv.second - collar, iv.second + collar});
        }
    }
    return merge_intervals(std::move(zones));
}

std::vector<Interval> apply_collar(const std::vector<RttmSegment>& ref, double collar,
                                   double horizon) {
    std::vector<Interval> scored;
    double cursor = 0.0;
    for (const Interval& zone : collar_exclusions(ref, collar)) {
        if (zone.first > cursor) scored.push_back({cursor, std::min(zone.first, horizon)});
        cursor = std::max(cursor, zone.second);
        if (cursor >= horizon) break;
    }
    if (cursor < horizon) scored.push_back({cursor, horizon});
    std::vector<Interval> out;
    for (const Interval& iv : scored) {
        if (iv.second > iv.first) out.push_back(iv);
    }
    return out;
}

// ---------------------------------------------------------------------------
// DER
// ---------------------------------------------------------------------------

double DerComponents::der() const {
    if (scored_time <= 0.0) {
        throw ContractError("der: no scored reference speech (DER undefined)");
    }
    return error_time() / scored_time;
}

void DerComponents::accumulate(const DerComponents& other) {
    scored_time += other.scored_time;
    missed += other.missed;
    false_alarm += other.false_alarm;
    confusion += other.confusion;
}

namespace {

struct SessionScore {
    DerComponents components;
    std::map<std::string, std::string> mapping;
};

// Exact sweep over one session: every activity or exclusion boundary is an
// event; between events the active sets and scoring state are constant.
SessionScore score_session(const std::vector<RttmSegment>& ref,
                           const std::vector<RttmSegment>& hyp, double collar) {
    auto ref_spk = speaker_timelines(ref);
    auto hyp_spk = speaker_timelines(hyp);
    std::vector<Interval> exclusions = collar_exclusions(ref, collar);

    std::vector<double> edges;
    auto push_edges = [&](const auto& timelines) {
        for (const auto& [speaker, ivs] : timelines) {
            for (const Interval& iv : ivs) {
                edges.push_back(iv.first);
                edges.push_back(iv.second);
            }
        }
    };
    push_edges(ref_spk);
    push_edges(hyp_spk);
    for (const Interval& iv : exclusions) {
        edges.push_back(iv.first);
        edges.push_back(iv.second);
    }
    std::sort(edges.begin(), edges.end());
    edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

    std::vector<std::string> ref_names, hyp_names;
    for (const auto& [speaker, ivs] : ref_spk) ref_names.push_back(speaker);
    for (const auto& [speaker, ivs] : hyp_spk) hyp_names.push_back(speaker);

    // Pass 1: scored co-activity time for every (hyp, ref) pair.
    std::vector<std::vector<double>> overlap(hyp_names.size(),
                                             std::vector<double>(ref_names.size(), 0.0));
    const std::size_t pairs = hyp_names.size() * ref_names.size();
    for (std::size_t e = 0; e + 1 < edges.size() && pairs > 0; ++e) {
        const double dt = edges[e + 1] - edges[e];
        if (dt <= 0.0) continue;
        const double mid = edges[e] + dt / 2.0;
        if (active_at(exclusions, mid)) continue;
        for (std::size_t i = 0; i < hyp_names.size(); ++i) {
            if (!active_at(hyp_spk[hyp_names[i]], mid)) continue;
            for (std::size_t j = 0; j < ref_names.size(); ++j) {
                if (active_at(ref_spk[ref_names[j]], mid)) overlap[i][j] += dt;
            }
        }
    }

    SessionScore out;
    out.components.ref_speaker_count = static_cast<int>(ref_names.size());

    // Optimal assignment on the padded negated-overlap matrix.
    std::map<std::string, std::string> mapped;
    if (!hyp_names.empty() && !ref_names.empty()) {
        const std::size_t n = std::max(hyp_names.size(), ref_names.size());
        std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
        for (std::size_t i = 0; i < hyp_names.size(); ++i) {
            for (std::size_t j = 0; j < ref_names.size(); ++j) cost[i][j] = -overlap[i][j];
        }
        std::vector<int> perm = hungarian(cost);
        for (std::size_t i = 0; i < hyp_names.size(); ++i) {
            const std::size_t j = static_cast<std::size_t>(perm[i]);
            if (j < ref_names.size() && overlap[i][j] > 0.0) {
                mapped[hyp_names[i]] = ref_names[j];
            }
        }
    }
    out.mapping = mapped;

    // Pass 2: integrate miss / false alarm / confusion with the fixed mapping.
    for (std::size_t e = 0; e + 1 < edges.size(); ++e) {
        const double dt = edges[e + 1] - edges[e];
        if (dt <= 0.0) continue;
        const double mid = edges[e] + dt / 2.0;
        if (active_at(exclusions, mid)) continue;
        int n_ref = 0, n_hyp = 0, matched = 0;
        std::set<std::string> ref_active;
        for (const std::string& r : ref_names) {
            if (active_at(ref_spk[r], mid)) {
                ++n_ref;
                ref_active.insert(r);
            }
        }
        for (const std::string& h : hyp_names) {
            if (!active_at(hyp_spk[h], mid)) continue;
            ++n_hyp;
            auto it = mapped.find(h);
            if (it != mapped.end() && ref_active.count(it->second)) ++matched;
        }
        out.components.scored_time += n_ref * dt;
        out.components.missed += std::max(0, n_ref - n_hyp) * dt;
        out.components.false_alarm += std::max(0, n_hyp - n_ref) * dt;
        out.components.confusion += (std::min(n_ref, n_hyp) - matched) * dt;
    }
    return out;
}

std::map<std::string, std::vector<RttmSegment>> by_session(
    const std::vector<RttmSegment>& segments) {
    std::map<std::string, std::vector<RttmSegment>> out;
    for (const RttmSegment& seg : segments) out[seg.session].push_back(seg);
    return out;
}

}  // namespace

std::map<std::string, std::string> optimal_speaker_map(const std::vector<RttmSegment>& ref,
                                                       const std::vector<RttmSegment>& hyp,
                                                       double collar) {
    return score_session(ref, hyp, collar).mapping;
}

DerReport compute_der(const std::vector<RttmSegment>& ref,
                      const std::vector<RttmSegment>& hyp, double collar) {
    auto ref_sessions = by_session(ref);
    auto hyp_sessions = by_session(hyp);
    DerReport report;
    for (const auto& [session, ref_segs] : ref_sessions) {
        auto it = hyp_sessions.find(session);
        static const std::vector<RttmSegment> kEmpty;
        const std::vector<RttmSegment>& hyp_segs = (it == hyp_sessions.end()) ? kEmpty
                                                                              : it->second;
        SessionScore s = score_session(ref_segs, hyp_segs, collar);
        report.per_session[session] = s.components;
        report.mapping[session] = s.mapping;
        report.total.accumulate(s.components);
    }
    // Hypothesis-only sessions have no reference speech: everything they say
    // is false alarm.
    for (const auto& [session, hyp_segs] : hyp_sessions) {
        if (ref_sessions.count(session)) continue;
        SessionScore s = score_session({}, hyp_segs, collar);
        report.per_session[session] = s.components;
        report.mapping[session] = {};
        report.total.accumulate(s.components);
    }
    if (report.total.scored_time <= 0.0) {
        throw ContractError("compute_der: reference contains no speech (DER undefined)");
    }
    return report;
}

std::map<std::string, DerComponents> breakdown_by(
    const DerReport& report, const std::function<std::string(int)>& bucket_of) {
    std::map<std::string, DerComponents> buckets;
    for (const auto& [session, comp] : report.per_session) {
        DerComponents& bucket = buckets[bucket_of(comp.ref_speaker_count)];
        bucket.accumulate(comp);
        bucket.ref_speaker_count = comp.ref_speaker_count;  // last one wins; informational
    }
    return buckets;
}

std::string bucket_rule_wide(int n) { return n <= 10 ? "1-10" : "11+"; }

std::string bucket_rule_per_count(int n) { return std::to_string(n); }

namespace {

std::string components_line(const DerComponents& c) {
    char buf[256];
    if (c.scored_time > 0.0) {
        std::snprintf(buf, sizeof(buf),
                      "der_pct %.3f scored %.3f miss %.3f fa %.3f conf %.3f",
                      100.0 * c.der(), c.scored_time, c.missed, c.false_alarm, c.confusion);
    } else {
        std::snprintf(buf, sizeof(buf),
                      "der_pct undefined scored 0.000 miss %.3f fa %.3f conf %.3f", c.missed,
                      c.false_alarm, c.confusion);
    }
    return buf;
}

}  // namespace

std::string format_der_report(const DerReport& report,
                              const std::function<std::string(int)>& bucket_of) {
    std::string out = "total " + components_line(report.total) + "\n";
    for (const auto& [session, comp] : report.per_session) {
        out += "session " + session + " nspk " + std::to_string(comp.ref_speaker_count) +
               " " + components_line(comp) + "\n";
    }
    for (const auto& [label, comp] : breakdown_by(report, bucket_of)) {
        out += "bucket " + label + " " + components_line(comp) + "\n";
    }
    return out;
}

}  // namespace diarkit
