#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace diarkit {

// ---------------------------------------------------------------------------
// RTTM
// ---------------------------------------------------------------------------

struct RttmSegment {
    std::string session;
    double onset = 0.0;     // seconds, >= 0
    double duration = 0.0;  // seconds, > 0
    std::string speaker;

    double offset() const { return onset + duration; }
};

// Accepts `SPEAKER <file> <chan> <onset> <dur> <NA> <NA> <speaker> ...`;
// other record types are ignored. Malformed records raise with line numbers.
std::vector<RttmSegment> parse_rttm(const std::string& text);
std::string write_rttm(const std::vector<RttmSegment>& segments);  // 3-decimal fields

std::vector<RttmSegment> read_rttm_file(const std::string& path);
void write_rttm_file(const std::string& path, const std::vector<RttmSegment>& segments);

// ---------------------------------------------------------------------------
// Collar handling (single session)
// ---------------------------------------------------------------------------

using Interval = std::pair<double, double>;

// Merged union of intervals (overlapping or abutting inputs coalesce).
std::vector<Interval> merge_intervals(std::vector<Interval> intervals);

// Merged exclusion zones [b - collar, b + collar] around every boundary of
// the per-speaker-merged reference segments.
std::vector<Interval> collar_exclusions(const std::vector<RttmSegment>& ref, double collar);

// Scored complement of the exclusion zones within [0, horizon].
std::vector<Interval> apply_collar(const std::vector<RttmSegment>& ref, double collar,
                                   double horizon);

// ---------------------------------------------------------------------------
// DER
// ---------------------------------------------------------------------------

struct DerComponents {
    double scored_time = 0.0;  // integral of |active ref speakers| over scored regions
    double missed = 0.0;
    double false_alarm = 0.0;
    double confusion = 0.0;
    int ref_speaker_count = 0;

    double error_time() const { return missed + false_alarm + confusion; }
    double der() const;  // error_time / scored_time; no reference speech -> throws
    void accumulate(const DerComponents& other);
};

struct DerReport {
    DerComponents total;
    std::map<std::string, DerComponents> per_session;
    // hyp speaker -> ref speaker chosen by the optimal mapping, per session
    std::map<std::string, std::map<std::string, std::string>> mapping;
};

// Time-maximizing one-to-one speaker mapping for one session (scored regions
// only); exact via the assignment solver. Zero-overlap pairs are dropped.
std::map<std::string, std::string> optimal_speaker_map(const std::vector<RttmSegment>& ref,
                                                       const std::vector<RttmSegment>& hyp,
                                                       double collar);

// Exact event-sweep DER over all sessions present in the reference. Sessions
// missing from the hypothesis score as pure miss.
DerReport compute_der(const std::vector<RttmSegment>& ref,
                      const std::vector<RttmSegment>& hyp, double collar = 0.25);

// Pool session components into buckets keyed by the reference speaker count.
std::map<std::string, DerComponents> breakdown_by(
    const DerReport& report, const std::function<std::string(int)>& bucket_of);

std::string bucket_rule_wide(int n);       // "1-10" / "11+"
std::string bucket_rule_per_count(int n);  // "1", "2", ...

// Line-oriented report (documented keys: total, miss, fa, conf, per_session,
// buckets) suitable for files and stdout.
std::string format_der_report(const DerReport& report,
                              const std::function<std::string(int)>& bucket_of);

}  // namespace diarkit
