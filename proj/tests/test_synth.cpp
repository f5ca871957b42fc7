#include <gtest/gtest.h>

#include "feedshift/cohort.hpp"
#include "feedshift/estimate.hpp"
#include "feedshift/synth.hpp"
#include "feedshift/textmetrics.hpp"
#include "helpers.hpp"

using namespace feedshift;
using namespace feedshift::synth;

namespace {

SynthConfig small_config() {
    SynthConfig c;
    c.seed = 3;
    c.n_treated = 60;
    c.n_control = 60;
    return c;
}

std::string log_text(const SynthOutput& out) {
    std::string s;
    for (const auto& p : out.posts) s += corpus::post_to_json_line(p) + "\n";
    for (const auto& e : out.engagements) s += corpus::engagement_to_json_line(e) + "\n";
    return s;
}

// Post-period metric per user measured straight from the generated text:
// treated users split at their anchor, controls at a placebo anchor.
struct ArmValues {
    std::vector<double> treated, control;
};

template <class Metric>
ArmValues post_period(const SynthOutput& out, const std::string& feed, Metric&& metric) {
    const auto store = to_store(out);
    const auto treated = cohort::find_treated(store, feed);
    std::vector<Timestamp> anchors;
    for (const auto& t : treated) anchors.push_back(t.anchor);
    const auto controls = cohort::sample_placebo(anchors, cohort::find_controls(store, feed), 99);
    ArmValues v;
    auto measure = [&](const std::string& user, Timestamp anchor, std::vector<double>& dst) {
        const auto split = corpus::split_periods(store.timeline(user), anchor);
        std::vector<std::string> toks;
        for (const auto& p : split.post_exposure) lexicon::tokenize_into(p.text, toks);
        if (!toks.empty()) dst.push_back(metric(toks));
    };
    for (const auto& t : treated)
        if (t.user_id != out.publisher_id) measure(t.user_id, t.anchor, v.treated);
    for (const auto& c : controls) measure(c.user_id, c.anchor, v.control);
    return v;
}

double mean_of(const std::vector<double>& x) { return mean(std::span<const double>(x)); }

}  // namespace

TEST(Synth, DeterministicAcrossRunsAndThreads) {
    const auto lex = builtin_lexicon();
    const auto a = generate(small_config(), lex, 1);
    const auto b = generate(small_config(), lex, 4);
    EXPECT_EQ(log_text(a), log_text(b));
    EXPECT_EQ(truth_to_json(a.truth), truth_to_json(b.truth));
    auto other = small_config();
    other.seed = 4;
    EXPECT_NE(log_text(a), log_text(generate(other, lex, 1)));
}

TEST(Synth, ArmsAndLogShape) {
    const auto lex = builtin_lexicon();
    const auto out = generate(small_config(), lex);
    std::size_t t = 0;
    for (const auto& u : out.users) t += u.treated;
    EXPECT_EQ(t, 60u);
    EXPECT_EQ(out.users.size(), 120u);
    // The log re-ingests cleanly and yields the planted arms.
    std::istringstream in(log_text(out));
    corpus::IngestReport rep;
    const auto store = corpus::ingest_events(in, rep, corpus::IngestMode::strict);
    EXPECT_EQ(rep.rejected, 0u);
    auto treated = cohort::find_treated(store, "study");
    std::erase_if(treated, [&](const auto& x) { return x.user_id == out.publisher_id; });
    EXPECT_EQ(treated.size(), 60u);
    EXPECT_EQ(cohort::find_controls(store, "study").size(), 60u);
}

TEST(Synth, ValidationRejectsInfeasibleConfigs) {
    const auto lex = builtin_lexicon();
    auto c = small_config();
    c.planted_effects["repeatability"] = 1.2;
    EXPECT_THROW(generate(c, lex), ValidationError);
    c = small_config();
    c.planted_effects["lsa"] = 0.1;
    EXPECT_THROW(generate(c, lex), ValidationError);
    c = small_config();
    c.base_post_rate = 0.0;
    EXPECT_THROW(generate(c, lex), ValidationError);
    c = small_config();
    c.planted_effects["complexity"] = 0.1;
    c.planted_effects["readability"] = 0.1;
    EXPECT_THROW(generate(c, lex), ValidationError);
    EXPECT_THROW(config_from_json(nlohmann::json{{"feed_alignment", {{"wave", 1.0}}}}), ValidationError);
}

TEST(Synth, ConfigJsonRoundTrip) {
    auto c = small_config();
    c.planted_effects["cdi"] = 0.5;
    c.feed_alignment[static_cast<std::size_t>(corpus::EngagementKind::like)] = 0.01;
    EXPECT_EQ(config_to_json(config_from_json(config_to_json(c))), config_to_json(c));
}

TEST(Synth, NullCaseHasZeroTruth) {
    const auto out = generate(small_config(), builtin_lexicon());
    for (const auto& [metric, ate] : out.truth.ate) EXPECT_NEAR(ate, 0.0, 1e-12) << metric;
    EXPECT_TRUE(out.truth.beta_sign.empty());
}

TEST(Synth, PlantedRepeatabilityAppearsInRawText) {
    auto c = small_config();
    c.n_treated = 1500;
    c.n_control = 1500;
    c.planted_effects["repeatability"] = 0.05;
    const auto out = generate(c, builtin_lexicon(), 2);
    EXPECT_EQ(out.truth.ate.at("repeatability"), 0.05);
    const auto v = post_period(out, c.feed_id, [](const std::vector<std::string>& t) { return textmetrics::repeatability(t); });
    EXPECT_NEAR(mean_of(v.treated) - mean_of(v.control), 0.05, 0.005);
}

TEST(Synth, PlantedComplexityMatchesTruth) {
    auto c = small_config();
    c.n_treated = 800;
    c.n_control = 800;
    c.planted_effects["complexity"] = 0.3;
    const auto out = generate(c, builtin_lexicon(), 2);
    const double truth = out.truth.ate.at("complexity");
    EXPECT_NEAR(truth, 0.3, 0.03);
    const auto v = post_period(out, c.feed_id, [](const std::vector<std::string>& t) { return textmetrics::complexity(t); });
    const auto r = estimate::effect_pooled("complexity", v.treated, v.control);
    EXPECT_LT(std::abs(r.ate - truth), 3 * r.se);
}

TEST(Synth, ConfoundingBiasesNaiveComparison) {
    auto c = small_config();
    c.n_treated = 1500;
    c.n_control = 1500;
    c.confounder_strength = 2.0;
    const auto out = generate(c, builtin_lexicon(), 2);
    EXPECT_GT(std::abs(out.truth.naive_bias.at("complexity")), 0.0);
    const auto v = post_period(out, c.feed_id, [](const std::vector<std::string>& t) { return textmetrics::complexity(t); });
    const auto r = estimate::effect_pooled("complexity", v.treated, v.control);
    EXPECT_GT(std::abs(r.t), 3.0);
    EXPECT_GT(r.ate * out.truth.naive_bias.at("complexity"), 0.0);
}

TEST(Verify, ChecksEffectsAndSigns) {
    GroundTruth t;
    t.ate = {{"cdi", 0.5}, {"lsa", 0.0}};
    t.beta_sign = {{"like", -1}};
    const std::map<std::string, std::pair<double, double>> good = {{"cdi", {0.55, 0.1}}, {"lsa", {0.01, 0.02}}};
    auto checks = verify(t, good, {{"like", -0.02}});
    ASSERT_EQ(checks.size(), 3u);
    for (const auto& c : checks) EXPECT_TRUE(c.ok) << c.name;
    checks = verify(t, {{"cdi", {1.0, 0.1}}}, {{"like", 0.02}});
    EXPECT_FALSE(checks[0].ok);
    EXPECT_FALSE(checks[1].ok);
    EXPECT_THROW(verify(t, good, {}), ValidationError);
}

TEST(Synth, WriteOutput) {
    fstest::TempDir dir("synth");
    const auto out = generate(small_config(), builtin_lexicon());
    write_output(out, dir.str());
    EXPECT_EQ(read_file(dir / "events.jsonl"), log_text(out));
    const auto back = truth_from_json(nlohmann::json::parse(read_file(dir / "truth.json")));
    EXPECT_EQ(back.ate, out.truth.ate);
}
