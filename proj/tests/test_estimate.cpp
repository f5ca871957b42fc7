#include <gtest/gtest.h>

#include <random>

#include "feedshift/estimate.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace feedshift;
using namespace feedshift::estimate;

namespace {

using Vec = std::vector<double>;

std::vector<Stratum> retained_two_arm(const Vec& t, const Vec& c, Vec& values) {
    std::vector<double> scores;
    std::vector<char> arm;
    values.clear();
    for (double v : t) {
        values.push_back(v);
        scores.push_back(0.5);
        arm.push_back(1);
    }
    for (double v : c) {
        values.push_back(v);
        scores.push_back(0.5);
        arm.push_back(0);
    }
    auto strata = build_strata(scores, arm);
    prune(strata, 1);
    return strata;
}

}  // namespace

TEST(Stratify, Examples) {
    EXPECT_EQ(stratum_index(0.0), 0);
    EXPECT_EQ(stratum_index(1.0), 14);
    EXPECT_EQ(stratum_index(0.5), 7);
    EXPECT_EQ(stratum_index(1.0 / 15.0), 1);
    EXPECT_THROW(stratum_index(1.01), ValidationError);
    EXPECT_THROW(stratum_index(std::nan("")), ValidationError);

    std::mt19937_64 rng(15);
    std::uniform_real_distribution<> u(0, 1);
    Vec scores(15000);
    for (auto& s : scores) s = u(rng);
    std::vector<int> counts(15, 0);
    for (int s : stratify(scores)) ++counts[s];
    for (int c : counts) EXPECT_NEAR(c, 1000, 100);
}

TEST(Prune, Thresholds) {
    Vec scores;
    std::vector<char> arm;
    // Stratum 0: 9 treated and 20 controls; stratum 7: 10 and 10.
    for (int i = 0; i < 9; ++i) scores.push_back(0.01), arm.push_back(1);
    for (int i = 0; i < 20; ++i) scores.push_back(0.02), arm.push_back(0);
    for (int i = 0; i < 10; ++i) scores.push_back(0.5), arm.push_back(1);
    for (int i = 0; i < 10; ++i) scores.push_back(0.5), arm.push_back(0);
    auto strata = build_strata(scores, arm);
    const auto r = prune(strata);
    EXPECT_FALSE(strata[0].retained);
    EXPECT_TRUE(strata[7].retained);
    EXPECT_EQ(r.retained_strata, 1u);
    EXPECT_EQ(r.retained_treated, 10u);
    EXPECT_EQ(r.retained_control, 10u);
    EXPECT_EQ(r.dropped_treated, 9u);
    EXPECT_EQ(r.dropped_control, 20u);
    // Every unit lands in exactly one stratum.
    std::vector<int> seen(scores.size(), 0);
    for (const auto& s : strata) {
        for (auto i : s.treated) ++seen[i];
        for (auto i : s.control) ++seen[i];
    }
    for (int k : seen) EXPECT_EQ(k, 1);
}

TEST(Prune, DisjointSupportHasNoOverlap) {
    Vec scores;
    std::vector<char> arm;
    for (int i = 0; i < 50; ++i) scores.push_back(0.91 + i * 0.001), arm.push_back(1);
    for (int i = 0; i < 50; ++i) scores.push_back(0.01 + i * 0.001), arm.push_back(0);
    auto strata = build_strata(scores, arm);
    EXPECT_THROW(prune(strata), NoOverlapError);
}

TEST(Smd, Examples) {
    EXPECT_EQ(smd(Vec{1, 2, 3}, Vec{1, 2, 3}), 0.0);
    EXPECT_NEAR(smd(Vec{0, 2}, Vec{2, 4}), -std::sqrt(2.0), 1e-12);
    EXPECT_EQ(smd(Vec{5, 5}, Vec{5, 5, 5}), 0.0);
    EXPECT_TRUE(std::isinf(smd(Vec{5, 5}, Vec{4, 4})));
    EXPECT_THROW(smd(Vec{}, Vec{1}), ValidationError);
    const Vec a = {0.3, 1.7, 2.2, 9.0}, b = {1.0, 1.5, 4.0};
    EXPECT_EQ(smd(a, b), -smd(b, a));
    const double expect = (oracle::mean(a) - oracle::mean(b)) / std::sqrt((oracle::var(a) + oracle::var(b)) / 2);
    EXPECT_NEAR(smd(a, b), expect, 1e-12);
    EXPECT_NEAR(weighted_smd(a, Vec(4, 2.5), b, Vec(3, 2.5)), smd(a, b), 1e-12);
}

TEST(Balance, IdenticalArmsAndSummaryFormat) {
    Vec values;
    const Vec x = {1, 2, 3, 4, 5};
    const auto strata = retained_two_arm(x, x, values);
    std::vector<char> arm(10, 0);
    std::fill(arm.begin(), arm.begin() + 5, 1);
    const std::vector<std::string> names = {"a"};
    const auto rows = balance_report(names, [&](std::size_t) { return std::span<const double>(values); }, arm, strata,
                                     Estimator::pooled);
    EXPECT_EQ(rows[0].smd_pre, 0.0);
    EXPECT_EQ(rows[0].smd_post, 0.0);

    std::vector<BalanceRow> fixture;
    for (int i = 0; i < 520; ++i) fixture.push_back({"c" + std::to_string(i), 0.05, 0.01});
    fixture[0] = {"worst", 1.375, 0.130};
    for (int i = 1; i < 9; ++i) fixture[i].smd_pre = 0.2;
    EXPECT_EQ(format_summary(summarize(fixture)), "max 1.375 → 0.130, imbalanced 9 (1.7%) → 0 (0.0%)");
}

TEST(Effect, WelchFixture) {
    const auto r = effect_pooled("m", Vec{1, 2, 3, 4}, Vec{2, 3, 4, 5});
    EXPECT_NEAR(r.ate, -1.0, 1e-12);
    EXPECT_NEAR(pooled_sd(oracle::var({1, 2, 3, 4}), 4, oracle::var({2, 3, 4, 5}), 4), 1.2909944487358056, 1e-12);
    EXPECT_NEAR(r.cohens_d, -0.7745966692414834, 1e-12);
    EXPECT_NEAR(r.t, -1.0954451150103321, 1e-12);
    EXPECT_NEAR(r.df, 6.0, 1e-12);
    EXPECT_NEAR(*r.ate_pct, -100.0 / 3.5, 1e-12);
    EXPECT_NEAR(r.p, oracle::t_two_sided_p(r.t, r.df), 1e-9);
}

TEST(Effect, IdentityShiftAndDegenerate) {
    const auto same = effect_pooled("m", Vec{1, 4, 2, 8}, Vec{1, 4, 2, 8});
    EXPECT_EQ(same.ate, 0.0);
    EXPECT_EQ(same.cohens_d, 0.0);
    EXPECT_EQ(same.t, 0.0);
    EXPECT_EQ(same.p, 1.0);
    const auto shifted = effect_pooled("m", Vec{2, 5, 3, 9}, Vec{1, 4, 2, 8});
    EXPECT_EQ(shifted.ate, 1.0);
    const auto zero_control = effect_pooled("m", Vec{0.001, 0.002}, Vec{0.0, 0.0, 0.0});
    EXPECT_FALSE(zero_control.ate_pct.has_value());
    EXPECT_THROW(effect_pooled("m", Vec{1}, Vec{1, 2}), ValidationError);
    EXPECT_EQ(stars(0.0009), "***");
    EXPECT_EQ(stars(0.001), "**");
    EXPECT_EQ(stars(0.049), "*");
    EXPECT_EQ(stars(0.05), "");
}

TEST(Effect, ShiftAndScaleInvariance) {
    std::mt19937_64 rng(6);
    std::normal_distribution<> g(3.0, 1.0);
    Vec t(40), c(55);
    for (auto& v : t) v = g(rng) + 0.4;
    for (auto& v : c) v = g(rng);
    const auto base = effect_pooled("m", t, c);
    Vec ts = t, cs = c, tl = t, cl = c;
    for (auto& v : ts) v += 10;
    for (auto& v : cs) v += 10;
    for (auto& v : tl) v *= 2.5;
    for (auto& v : cl) v *= 2.5;
    const auto shifted = effect_pooled("m", ts, cs);
    EXPECT_NEAR(shifted.ate, base.ate, 1e-9);
    EXPECT_NEAR(shifted.cohens_d, base.cohens_d, 1e-9);
    EXPECT_NEAR(shifted.t, base.t, 1e-9);
    EXPECT_NEAR(shifted.control_mean, base.control_mean + 10, 1e-9);
    const auto scaled = effect_pooled("m", tl, cl);
    EXPECT_NEAR(scaled.ate, 2.5 * base.ate, 1e-9);
    EXPECT_NEAR(scaled.cohens_d, base.cohens_d, 1e-9);
    EXPECT_NEAR(scaled.t, base.t, 1e-9);
    EXPECT_NEAR(scaled.p, base.p, 1e-12);
    EXPECT_NEAR(*scaled.ate_pct, *base.ate_pct, 1e-9);
}

TEST(Effect, WelchPValuesMatchQuadrature) {
    std::mt19937_64 rng(100);
    for (int k = 0; k < 100; ++k) {
        const std::size_t n1 = 2 + rng() % 30, n2 = 2 + rng() % 30;
        std::normal_distribution<> ga(0.0, 0.5 + (rng() % 10) / 5.0), gb(0.3, 0.5 + (rng() % 10) / 5.0);
        Vec a(n1), b(n2);
        for (auto& v : a) v = ga(rng);
        for (auto& v : b) v = gb(rng);
        const auto r = effect_pooled("m", a, b);
        const auto w = oracle::welch(a, b);
        EXPECT_NEAR(r.t, w.t, 1e-9);
        EXPECT_NEAR(r.df, w.df, 1e-9);
        EXPECT_NEAR(r.p, w.p, 1e-6) << "fixture " << k;
    }
}

TEST(Effect, StratumWeightedMatchesHandComputation) {
    // Two strata with different sizes and different within-stratum effects.
    const std::vector<StratumSample> strata = {{{1, 2, 3}, {0, 1, 2, 3}}, {{10, 12}, {9, 9, 10, 11, 11, 12}}};
    const auto r = effect_stratified("m", strata);
    const double w0 = 7.0 / 15.0, w1 = 8.0 / 15.0;
    const double d0 = 2.0 - 1.5, d1 = 11.0 - 62.0 / 6.0;
    EXPECT_NEAR(r.ate, w0 * d0 + w1 * d1, 1e-12);
    const double v = w0 * w0 * (oracle::var({1, 2, 3}) / 3 + oracle::var({0, 1, 2, 3}) / 4) +
                     w1 * w1 * (oracle::var({10, 12}) / 2 + oracle::var({9, 9, 10, 11, 11, 12}) / 6);
    EXPECT_NEAR(r.se, std::sqrt(v), 1e-12);
    EXPECT_NEAR(r.t, r.ate / std::sqrt(v), 1e-9);
    EXPECT_EQ(r.n_treated, 5u);
    EXPECT_EQ(r.n_control, 10u);
    // A single stratum reduces to the pooled Welch test.
    const std::vector<StratumSample> one = {{{1, 2, 3, 4}, {2, 3, 4, 5}}};
    const auto s = effect_stratified("m", one);
    const auto p = effect_pooled("m", Vec{1, 2, 3, 4}, Vec{2, 3, 4, 5});
    EXPECT_NEAR(s.ate, p.ate, 1e-12);
    EXPECT_NEAR(s.t, p.t, 1e-12);
    EXPECT_NEAR(s.df, p.df, 1e-9);
}

TEST(Effect, EstimatorOnRetainedSampleOnly) {
    Vec scores, values;
    std::vector<char> arm;
    for (int i = 0; i < 12; ++i) scores.push_back(0.5), arm.push_back(i % 2), values.push_back(i % 2 ? 2.0 + i : 1.0 + i);
    // A pruned stratum with extreme outcomes that must not leak in.
    for (int i = 0; i < 3; ++i) scores.push_back(0.99), arm.push_back(1), values.push_back(1000.0);
    auto strata = build_strata(scores, arm);
    prune(strata, 5);
    const auto r = estimate_effect("m", values, strata, Estimator::pooled);
    EXPECT_EQ(r.n_treated, 6u);
    EXPECT_NEAR(r.ate, 2.0, 1e-12);
    values[0] = std::nan("");
    EXPECT_EQ(estimate_effect("m", values, strata, Estimator::pooled).n_control, 5u);
    EXPECT_EQ(parse_estimator("stratum-weighted"), Estimator::stratum_weighted);
    EXPECT_THROW(parse_estimator("meta"), ValidationError);
}

TEST(TopicShare, Examples) {
    fstest::TempDir dir("topics");
    write_file(dir / "map.csv", "post_id,topic_id\nt0a,sports\nt0b,news\nc0a,news\nt1a,sports\nc1a,news\n");
    const auto map = read_topic_map(dir / "map.csv");
    EXPECT_EQ(map.size(), 5u);
    const std::vector<std::vector<std::string>> posts = {{"t0a", "t0b"}, {"t1a", "zzz"}, {"c0a"}, {"c1a"}};
    Vec scores = {0.5, 0.5, 0.5, 0.5};
    std::vector<char> arm = {1, 1, 0, 0};
    auto strata = build_strata(scores, arm);
    prune(strata, 2);
    auto ids = [&](std::size_t i) { return std::span<const std::string>(posts[i]); };
    const auto r = topic_share_outcome("sports", map, 4, ids, strata, Estimator::pooled);
    EXPECT_NEAR(r.ate, 0.75, 1e-12);
    EXPECT_FALSE(r.ate_pct.has_value());
    const auto none = topic_share_outcome("news", map, 4, ids, strata, Estimator::pooled);
    EXPECT_NEAR(none.ate, 0.25 - 1.0, 1e-12);
    EXPECT_THROW(topic_share_outcome("weather", map, 4, ids, strata, Estimator::pooled), ValidationError);
    EXPECT_TRUE(std::isnan(topic_share(std::vector<std::string>{"zzz"}, map, "news")));
}
