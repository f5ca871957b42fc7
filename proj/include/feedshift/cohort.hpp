#pragma once

// Treated/control identification, placebo anchors for controls, the two-sample
// Kolmogorov-Smirnov check on anchor distributions, and eligibility rules.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "feedshift/common.hpp"
#include "feedshift/corpus.hpp"
#include "feedshift/stats.hpp"

namespace feedshift::cohort {

using corpus::EventStore;
using corpus::UserTimeline;

enum class Arm { treated, control };

inline std::string_view arm_name(Arm a) { return a == Arm::treated ? "treated" : "control"; }

inline Arm parse_arm(std::string_view s) {
    if (s == "treated") return Arm::treated;
    if (s == "control") return Arm::control;
    throw ValidationError("unknown arm: " + std::string(s));
}

struct TreatedUser {
    std::string user_id;
    Timestamp anchor = 0;
};

struct CohortAssignment {
    std::string user_id;
    Arm arm = Arm::control;
    Timestamp anchor = 0;
    std::string feed_id;

    bool operator==(const CohortAssignment&) const = default;
};

/// Users with at least one engagement of any kind on `feed_id`; the anchor is
/// their earliest such engagement. Sorted by user_id.
inline std::vector<TreatedUser> find_treated(const EventStore& store, std::string_view feed_id) {
    std::map<std::string, Timestamp> first;
    for (const auto* e : store.engagements_on(feed_id)) {
        auto [it, inserted] = first.emplace(e->user_id, e->timestamp);
        if (!inserted) it->second = std::min(it->second, e->timestamp);
    }
    std::vector<TreatedUser> out;
    out.reserve(first.size());
    for (auto& [user, anchor] : first) out.push_back({user, anchor});
    return out;
}

/// Users with at least one post and no engagement on `feed_id`. Engagement
/// with other feeds is allowed. Sorted by user_id.
inline std::vector<std::string> find_controls(const EventStore& store, std::string_view feed_id) {
    std::vector<std::string> out;
    for (const auto& user : store.users()) {
        if (store.posts_of(user).empty()) continue;
        const auto eng = store.engagements_of(user);
        const bool touched = std::any_of(eng.begin(), eng.end(), [&](const auto& e) { return e.feed_id == feed_id; });
        if (!touched) out.push_back(user);
    }
    return out;
}

/// Gives every control a placebo anchor drawn uniformly with replacement from
/// the treated anchor multiset. Deterministic in (seed, sorted controls,
/// sorted anchors).
inline std::vector<CohortAssignment> sample_placebo(std::span<const Timestamp> anchors,
                                                    std::span<const std::string> controls, std::uint64_t seed,
                                                    std::string_view feed_id = "") {
    if (anchors.empty()) throw ValidationError("placebo sampling needs at least one treated anchor");
    std::vector<Timestamp> pool(anchors.begin(), anchors.end());
    std::sort(pool.begin(), pool.end());
    std::vector<std::string> users(controls.begin(), controls.end());
    std::sort(users.begin(), users.end());
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<CohortAssignment> out;
    out.reserve(users.size());
    for (auto& u : users) out.push_back({std::move(u), Arm::control, pool[pick(rng)], std::string(feed_id)});
    return out;
}

struct KsResult {
    double statistic = 0.0;  // D
    double p_value = 1.0;
    std::size_t n1 = 0;
    std::size_t n2 = 0;
};

/// Two-sample Kolmogorov-Smirnov test. D is the largest ECDF gap over the
/// pooled sample points; p uses the asymptotic Kolmogorov distribution with
/// effective size n1 n2 / (n1 + n2) and the Stephens correction.
inline KsResult ks_two_sample(std::span<const double> s1, std::span<const double> s2) {
    if (s1.empty() || s2.empty()) throw ValidationError("ks_two_sample: empty sample");
    std::vector<double> a(s1.begin(), s1.end());
    std::vector<double> b(s2.begin(), s2.end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double n1 = static_cast<double>(a.size());
    const double n2 = static_cast<double>(b.size());
    std::size_t i = 0;
    std::size_t j = 0;
    double d = 0.0;
    while (i < a.size() && j < b.size()) {
        const double x = std::min(a[i], b[j]);
        while (i < a.size() && a[i] == x) ++i;
        while (j < b.size() && b[j] == x) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / n1 - static_cast<double>(j) / n2));
    }
    KsResult r;
    r.statistic = d;
    r.n1 = a.size();
    r.n2 = b.size();
    const double ne = n1 * n2 / (n1 + n2);
    const double sqrt_ne = std::sqrt(ne);
    r.p_value = stats::kolmogorov_q((sqrt_ne + 0.12 + 0.11 / sqrt_ne) * d);
    return r;
}

enum class DropReason { none, short_baseline, empty_baseline, empty_post };

inline std::string_view drop_reason_name(DropReason r) {
    switch (r) {
        case DropReason::none: return "";
        case DropReason::short_baseline: return "short_baseline";
        case DropReason::empty_baseline: return "empty_baseline";
        case DropReason::empty_post: return "empty_post";
    }
    return "?";
}

inline DropReason parse_drop_reason(std::string_view s) {
    for (auto r : {DropReason::none, DropReason::short_baseline, DropReason::empty_baseline, DropReason::empty_post})
        if (drop_reason_name(r) == s) return r;
    throw ValidationError("unknown drop reason: " + std::string(s));
}

struct EligibilityResult {
    std::vector<CohortAssignment> kept;
    std::vector<std::pair<CohortAssignment, DropReason>> dropped;
    std::size_t short_baseline = 0;
    std::size_t empty_baseline = 0;
    std::size_t empty_post = 0;
};

/// Why a user with this (already language-filtered) timeline and anchor is
/// ineligible, or DropReason::none. The baseline runs from the user's first
/// observed event to the anchor.
inline DropReason eligibility(const UserTimeline& tl, Timestamp anchor, double min_baseline_days = 30.0) {
    const double span_days = to_days(anchor - tl.first_seen);
    if (span_days < min_baseline_days) return DropReason::short_baseline;
    const bool any_before =
        std::any_of(tl.posts.begin(), tl.posts.end(), [&](const auto& p) { return p.timestamp < anchor; });
    if (!any_before) return DropReason::empty_baseline;
    const bool any_after =
        std::any_of(tl.posts.begin(), tl.posts.end(), [&](const auto& p) { return p.timestamp >= anchor; });
    if (!any_after) return DropReason::empty_post;
    return DropReason::none;
}

/// Applies eligibility to every assignment. `timeline_of(user_id)` must return
/// the user's (language-filtered) timeline.
template <class TimelineLookup>
EligibilityResult apply_eligibility(std::span<const CohortAssignment> assignments, TimelineLookup&& timeline_of,
                                    double min_baseline_days = 30.0) {
    EligibilityResult r;
    for (const auto& a : assignments) {
        const UserTimeline& tl = timeline_of(a.user_id);
        const auto reason = eligibility(tl, a.anchor, min_baseline_days);
        switch (reason) {
            case DropReason::none: r.kept.push_back(a); continue;
            case DropReason::short_baseline: ++r.short_baseline; break;
            case DropReason::empty_baseline: ++r.empty_baseline; break;
            case DropReason::empty_post: ++r.empty_post; break;
        }
        r.dropped.emplace_back(a, reason);
    }
    return r;
}

}  // namespace feedshift::cohort
