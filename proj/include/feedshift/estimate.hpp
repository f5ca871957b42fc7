#pragma once

// Propensity stratification, covariate balance and treatment-effect estimates
// (ATE, ATE%, Cohen's d, Welch t).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "feedshift/common.hpp"
#include "feedshift/stats.hpp"

namespace feedshift::estimate {

inline constexpr int kDefaultStrata = 15;
inline constexpr std::size_t kDefaultMinPerArm = 10;
inline constexpr double kDefaultSmdThreshold = 0.15;
inline constexpr double kDegenerateMean = 1e-8;

inline int stratum_index(double score, int k = kDefaultStrata) {
    if (!(score >= 0.0 && score <= 1.0)) throw ValidationError("propensity score outside [0,1]");
    return std::min(static_cast<int>(std::floor(score * k)), k - 1);
}

inline std::vector<int> stratify(std::span<const double> scores, int k = kDefaultStrata) {
    if (k < 1) throw ValidationError("need at least one stratum");
    std::vector<int> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = stratum_index(scores[i], k);
    return out;
}

struct Stratum {
    int index = 0;
    double lo = 0.0;
    double hi = 0.0;  // exclusive except for the last stratum
    std::vector<std::size_t> treated;
    std::vector<std::size_t> control;
    bool retained = false;

    std::size_t size() const { return treated.size() + control.size(); }
};

/// Units are indices into the caller's arrays; `treated[i]` is the arm flag.
inline std::vector<Stratum> build_strata(std::span<const double> scores, std::span<const char> treated,
                                         int k = kDefaultStrata) {
    if (scores.size() != treated.size()) throw ValidationError("build_strata: size mismatch");
    std::vector<Stratum> strata(static_cast<std::size_t>(k));
    for (int s = 0; s < k; ++s) {
        strata[s].index = s;
        strata[s].lo = static_cast<double>(s) / k;
        strata[s].hi = static_cast<double>(s + 1) / k;
    }
    const auto idx = stratify(scores, k);
    for (std::size_t i = 0; i < scores.size(); ++i) (treated[i] ? strata[idx[i]].treated : strata[idx[i]].control).push_back(i);
    return strata;
}

struct PruneReport {
    std::size_t retained_strata = 0;
    std::size_t retained_treated = 0;
    std::size_t retained_control = 0;
    std::size_t dropped_treated = 0;
    std::size_t dropped_control = 0;
};

/// Marks strata with at least `min_per_arm` users in both arms as retained.
inline PruneReport prune(std::vector<Stratum>& strata, std::size_t min_per_arm = kDefaultMinPerArm) {
    PruneReport r;
    for (auto& s : strata) {
        s.retained = s.treated.size() >= min_per_arm && s.control.size() >= min_per_arm;
        if (s.retained) {
            ++r.retained_strata;
            r.retained_treated += s.treated.size();
            r.retained_control += s.control.size();
        } else {
            r.dropped_treated += s.treated.size();
            r.dropped_control += s.control.size();
        }
    }
    if (r.retained_strata == 0) throw NoOverlapError("no overlap: every propensity stratum has fewer than " +
                                                     std::to_string(min_per_arm) + " users in an arm");
    return r;
}

enum class Estimator { pooled, stratum_weighted };

inline Estimator parse_estimator(std::string_view s) {
    if (s == "pooled") return Estimator::pooled;
    if (s == "stratum-weighted") return Estimator::stratum_weighted;
    throw ValidationError("unknown estimator: " + std::string(s) + " (expected pooled|stratum-weighted)");
}

inline std::string_view estimator_name(Estimator e) { return e == Estimator::pooled ? "pooled" : "stratum-weighted"; }

/// Per-unit weights on the retained sample: 1 for the pooled estimator,
/// N_s / n_{s,arm} for the stratum-weighted one, 0 for pruned units.
inline std::vector<double> unit_weights(std::span<const Stratum> strata, std::size_t n_units, Estimator est) {
    std::vector<double> w(n_units, 0.0);
    for (const auto& s : strata) {
        if (!s.retained) continue;
        const double total = static_cast<double>(s.size());
        const double wt = est == Estimator::pooled ? 1.0 : total / static_cast<double>(s.treated.size());
        const double wc = est == Estimator::pooled ? 1.0 : total / static_cast<double>(s.control.size());
        for (auto i : s.treated) w[i] = wt;
        for (auto i : s.control) w[i] = wc;
    }
    return w;
}

/// Standardized mean difference with sample variances. Returns +-infinity
/// when both variances are zero but the means differ.
inline double smd(std::span<const double> t, std::span<const double> c) {
    if (t.empty() || c.empty()) throw ValidationError("smd: empty sample");
    const double mt = mean(t);
    const double mc = mean(c);
    const double vt = t.size() > 1 ? sample_variance(t) : 0.0;
    const double vc = c.size() > 1 ? sample_variance(c) : 0.0;
    const double denom = std::sqrt((vt + vc) / 2.0);
    if (denom == 0.0) {
        if (mt == mc) return 0.0;
        return mt > mc ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    }
    return (mt - mc) / denom;
}

struct WeightedMoments {
    double mean = 0.0;
    double variance = 0.0;  // reliability-weighted, unbiased
    double weight = 0.0;
};

inline WeightedMoments weighted_moments(std::span<const double> x, std::span<const double> w) {
    CompensatedSum sw, swx, sw2;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sw.add(w[i]);
        swx.add(w[i] * x[i]);
        sw2.add(w[i] * w[i]);
    }
    WeightedMoments m;
    m.weight = sw.value();
    if (m.weight <= 0.0) throw ValidationError("weighted_moments: zero total weight");
    m.mean = swx.value() / m.weight;
    CompensatedSum ss;
    for (std::size_t i = 0; i < x.size(); ++i) ss.add(w[i] * (x[i] - m.mean) * (x[i] - m.mean));
    const double denom = m.weight - sw2.value() / m.weight;
    m.variance = denom > 0.0 ? ss.value() / denom : 0.0;
    return m;
}

/// SMD under unit weights (all-equal weights reduce to smd()).
inline double weighted_smd(std::span<const double> t, std::span<const double> wt, std::span<const double> c,
                           std::span<const double> wc) {
    if (t.empty() || c.empty()) throw ValidationError("smd: empty sample");
    const auto a = weighted_moments(t, wt);
    const auto b = weighted_moments(c, wc);
    const double denom = std::sqrt((a.variance + b.variance) / 2.0);
    if (denom == 0.0) {
        if (a.mean == b.mean) return 0.0;
        return a.mean > b.mean ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
    }
    return (a.mean - b.mean) / denom;
}

struct BalanceRow {
    std::string covariate;
    double smd_pre = 0.0;
    double smd_post = 0.0;
};

struct BalanceSummary {
    std::size_t n_covariates = 0;
    double max_pre = 0.0;
    double max_post = 0.0;
    double mean_pre = 0.0;
    double mean_post = 0.0;
    std::size_t imbalanced_pre = 0;
    std::size_t imbalanced_post = 0;
    double threshold = kDefaultSmdThreshold;

    double fraction_pre() const { return n_covariates ? static_cast<double>(imbalanced_pre) / n_covariates : 0.0; }
    double fraction_post() const { return n_covariates ? static_cast<double>(imbalanced_post) / n_covariates : 0.0; }
};

inline std::string fixed(double x, int digits) {
    if (!std::isfinite(x)) return format_double(x);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, x);
    return buf;
}

/// "max 1.375 → 0.130, imbalanced 9 (1.7%) → 0 (0.0%)"
inline std::string format_summary(const BalanceSummary& s) {
    return "max " + fixed(s.max_pre, 3) + " → " + fixed(s.max_post, 3) + ", imbalanced " +
           std::to_string(s.imbalanced_pre) + " (" + fixed(100.0 * s.fraction_pre(), 1) + "%) → " +
           std::to_string(s.imbalanced_post) + " (" + fixed(100.0 * s.fraction_post(), 1) + "%)";
}

inline BalanceSummary summarize(std::span<const BalanceRow> rows, double threshold = kDefaultSmdThreshold) {
    BalanceSummary s;
    s.threshold = threshold;
    s.n_covariates = rows.size();
    CompensatedSum pre, post;
    for (const auto& r : rows) {
        const double a = std::abs(r.smd_pre);
        const double b = std::abs(r.smd_post);
        s.max_pre = std::max(s.max_pre, a);
        s.max_post = std::max(s.max_post, b);
        pre.add(a);
        post.add(b);
        if (!(a < threshold)) ++s.imbalanced_pre;
        if (!(b < threshold)) ++s.imbalanced_post;
    }
    if (!rows.empty()) {
        s.mean_pre = pre.value() / static_cast<double>(rows.size());
        s.mean_post = post.value() / static_cast<double>(rows.size());
    }
    return s;
}

/// SMDs per covariate: pre on the full cohort, post on the retained sample
/// weighted per the estimator. `column(j)` returns covariate j for every unit.
template <class ColumnFn>
std::vector<BalanceRow> balance_report(std::span<const std::string> names, ColumnFn&& column,
                                       std::span<const char> treated, std::span<const Stratum> strata,
                                       Estimator est, unsigned threads = 1) {
    const std::size_t n = treated.size();
    const auto w = unit_weights(strata, n, est);
    std::vector<BalanceRow> rows(names.size());
    parallel_for(names.size(), threads, [&](std::size_t j) {
        const std::span<const double> x = column(j);
        std::vector<double> t, c, tp, cp, wtp, wcp;
        for (std::size_t i = 0; i < n; ++i) {
            (treated[i] ? t : c).push_back(x[i]);
            if (w[i] > 0.0) {
                (treated[i] ? tp : cp).push_back(x[i]);
                (treated[i] ? wtp : wcp).push_back(w[i]);
            }
        }
        rows[j].covariate = names[j];
        rows[j].smd_pre = smd(t, c);
        rows[j].smd_post = weighted_smd(tp, wtp, cp, wcp);
    });
    return rows;
}

struct EffectRow {
    std::string metric;
    double ate = 0.0;
    std::optional<double> ate_pct;
    double cohens_d = 0.0;
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;
    double se = 0.0;
    double treated_mean = 0.0;
    double control_mean = 0.0;
    std::size_t n_treated = 0;
    std::size_t n_control = 0;
};

inline std::string_view stars(double p) {
    if (p < 0.001) return "***";
    if (p < 0.01) return "**";
    if (p < 0.05) return "*";
    return "";
}

inline double pooled_sd(double v1, double n1, double v2, double n2) {
    return std::sqrt(((n1 - 1.0) * v1 + (n2 - 1.0) * v2) / (n1 + n2 - 2.0));
}

inline double cohens_d(std::span<const double> t, std::span<const double> c) {
    if (t.size() < 2 || c.size() < 2) throw ValidationError("cohens_d: each arm needs at least 2 users");
    const double s = pooled_sd(sample_variance(t), static_cast<double>(t.size()), sample_variance(c),
                               static_cast<double>(c.size()));
    const double diff = mean(t) - mean(c);
    if (s == 0.0) return diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    return diff / s;
}

inline std::optional<double> ate_percent(double ate, double control_mean) {
    if (std::abs(control_mean) < kDegenerateMean) return std::nullopt;
    return 100.0 * ate / control_mean;
}

/// Difference of means over the pooled matched sample with Welch's test.
inline EffectRow effect_pooled(std::string metric, std::span<const double> t, std::span<const double> c) {
    if (t.size() < 2 || c.size() < 2) throw ValidationError("effect: each arm needs at least 2 users (" + metric + ")");
    EffectRow r;
    r.metric = std::move(metric);
    r.n_treated = t.size();
    r.n_control = c.size();
    r.treated_mean = mean(t);
    r.control_mean = mean(c);
    const double vt = sample_variance(t);
    const double vc = sample_variance(c);
    const auto w = stats::welch_from_moments(r.treated_mean, vt, static_cast<double>(t.size()), r.control_mean, vc,
                                             static_cast<double>(c.size()));
    r.ate = r.treated_mean - r.control_mean;
    r.ate_pct = ate_percent(r.ate, r.control_mean);
    r.cohens_d = cohens_d(t, c);
    r.t = w.t;
    r.df = w.df;
    r.p = w.p;
    r.se = std::sqrt(vt / static_cast<double>(t.size()) + vc / static_cast<double>(c.size()));
    return r;
}

/// Per-stratum outcome samples for one metric.
struct StratumSample {
    std::vector<double> treated;
    std::vector<double> control;
};

/// Size-weighted average of within-stratum differences (w_s = N_s / N) with
/// Satterthwaite degrees of freedom. Strata with fewer than two finite
/// outcomes in an arm are skipped and the weights renormalized.
inline EffectRow effect_stratified(std::string metric, std::span<const StratumSample> strata) {
    struct Part {
        double n_t, n_c, m_t, m_c, v_t, v_c;
    };
    std::vector<Part> parts;
    double total = 0.0;
    for (const auto& s : strata) {
        if (s.treated.size() < 2 || s.control.size() < 2) continue;
        Part p{static_cast<double>(s.treated.size()), static_cast<double>(s.control.size()), mean(s.treated),
               mean(s.control), sample_variance(s.treated), sample_variance(s.control)};
        parts.push_back(p);
        total += p.n_t + p.n_c;
    }
    if (parts.empty()) throw ValidationError("effect: no stratum with at least 2 users per arm (" + metric + ")");
    EffectRow r;
    r.metric = std::move(metric);
    CompensatedSum ate, mt, mc, var, dfd;
    CompensatedSum swt_x, swc_x, swt, swc;
    for (const auto& p : parts) {
        const double w = (p.n_t + p.n_c) / total;
        ate.add(w * (p.m_t - p.m_c));
        mt.add(w * p.m_t);
        mc.add(w * p.m_c);
        const double at = w * w * p.v_t / p.n_t;
        const double ac = w * w * p.v_c / p.n_c;
        var.add(at + ac);
        dfd.add(at * at / (p.n_t - 1.0) + ac * ac / (p.n_c - 1.0));
        r.n_treated += static_cast<std::size_t>(p.n_t);
        r.n_control += static_cast<std::size_t>(p.n_c);
    }
    r.ate = ate.value();
    r.treated_mean = mt.value();
    r.control_mean = mc.value();
    r.ate_pct = ate_percent(r.ate, r.control_mean);
    const double v = var.value();
    r.se = std::sqrt(v);
    if (v > 0.0) {
        r.t = r.ate / r.se;
        const double denom = dfd.value();
        r.df = denom > 0.0 ? v * v / denom : static_cast<double>(r.n_treated + r.n_control - 2);
        r.p = stats::student_t_two_sided_p(r.t, r.df);
    } else {
        r.df = static_cast<double>(r.n_treated + r.n_control - 2);
        r.t = r.ate == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.ate);
        r.p = r.ate == 0.0 ? 1.0 : 0.0;
    }
    // Effect size on the stratification-weighted arm distributions.
    double wvt = 0.0, wvc = 0.0;
    {
        std::vector<double> xt, wt, xc, wc;
        for (const auto& s : strata) {
            if (s.treated.size() < 2 || s.control.size() < 2) continue;
            const double ns = static_cast<double>(s.treated.size() + s.control.size());
            for (double x : s.treated) {
                xt.push_back(x);
                wt.push_back(ns / static_cast<double>(s.treated.size()));
            }
            for (double x : s.control) {
                xc.push_back(x);
                wc.push_back(ns / static_cast<double>(s.control.size()));
            }
        }
        wvt = weighted_moments(xt, wt).variance;
        wvc = weighted_moments(xc, wc).variance;
    }
    const double sd = pooled_sd(wvt, static_cast<double>(r.n_treated), wvc, static_cast<double>(r.n_control));
    r.cohens_d = sd > 0.0 ? r.ate / sd : (r.ate == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), r.ate));
    return r;
}

/// Effect of one metric on the retained sample. `values[i]` is unit i's
/// outcome; non-finite values (undefined metric) are excluded.
inline EffectRow estimate_effect(std::string metric, std::span<const double> values, std::span<const Stratum> strata,
                                 Estimator est) {
    if (est == Estimator::pooled) {
        std::vector<double> t, c;
        for (const auto& s : strata) {
            if (!s.retained) continue;
            for (auto i : s.treated)
                if (std::isfinite(values[i])) t.push_back(values[i]);
            for (auto i : s.control)
                if (std::isfinite(values[i])) c.push_back(values[i]);
        }
        return effect_pooled(std::move(metric), t, c);
    }
    std::vector<StratumSample> samples;
    for (const auto& s : strata) {
        if (!s.retained) continue;
        StratumSample ss;
        for (auto i : s.treated)
            if (std::isfinite(values[i])) ss.treated.push_back(values[i]);
        for (auto i : s.control)
            if (std::isfinite(values[i])) ss.control.push_back(values[i]);
        samples.push_back(std::move(ss));
    }
    return effect_stratified(std::move(metric), samples);
}

/// Unmatched difference of means over the whole cohort.
inline EffectRow naive_effect(std::string metric, std::span<const double> values, std::span<const char> treated) {
    std::vector<double> t, c;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (std::isfinite(values[i])) (treated[i] ? t : c).push_back(values[i]);
    return effect_pooled(std::move(metric), t, c);
}

using TopicMap = std::unordered_map<std::string, std::string>;

/// Reads "post_id,topic_id" lines (a header line starting with post_id is skipped).
inline TopicMap read_topic_map(const std::string& path) {
    TopicMap map;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.rfind("post_id", 0) == 0) continue;
        const auto parts = split_view(line, ',');
        if (parts.size() != 2) throw ValidationError("topic map line must be post_id,topic_id: " + line);
        map.emplace(std::string(parts[0]), std::string(parts[1]));
    }
    return map;
}

/// Share of a user's mapped posts assigned to `topic`; NaN when none are mapped.
inline double topic_share(std::span<const std::string> post_ids, const TopicMap& map, std::string_view topic) {
    std::size_t mapped = 0;
    std::size_t hits = 0;
    for (const auto& id : post_ids) {
        const auto it = map.find(id);
        if (it == map.end()) continue;
        ++mapped;
        hits += it->second == topic;
    }
    return mapped ? static_cast<double>(hits) / static_cast<double>(mapped) : std::nan("");
}

/// Effect of feed exposure on the post-period share of `topic`.
/// `post_ids_of(i)` yields unit i's post-period post ids.
template <class PostIds>
EffectRow topic_share_outcome(std::string_view topic, const TopicMap& map, std::size_t n_units, PostIds&& post_ids_of,
                              std::span<const Stratum> strata, Estimator est) {
    const bool known = std::any_of(map.begin(), map.end(), [&](const auto& kv) { return kv.second == topic; });
    if (!known) throw ValidationError("topic not present in topic map: " + std::string(topic));
    std::vector<double> values(n_units);
    for (std::size_t i = 0; i < n_units; ++i) values[i] = topic_share(post_ids_of(i), map, topic);
    return estimate_effect("topic:" + std::string(topic), values, strata, est);
}

}  // namespace feedshift::estimate
