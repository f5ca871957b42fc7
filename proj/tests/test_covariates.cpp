#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "feedshift/covariates.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace feedshift;
using namespace feedshift::covariates;

namespace {

constexpr Timestamp kDay = kSecondsPerDay;

corpus::UserTimeline timeline(Timestamp first_seen, std::vector<Timestamp> times) {
    corpus::UserTimeline tl;
    tl.user_id = "u";
    tl.first_seen = first_seen;
    for (std::size_t i = 0; i < times.size(); ++i) tl.posts.push_back({"p" + std::to_string(i), "u", times[i], "x", "en"});
    return tl;
}

PostTokens split_posts(std::initializer_list<std::string> posts) {
    PostTokens out;
    for (const auto& p : posts) {
        std::istringstream in(p);
        std::vector<std::string> toks;
        for (std::string t; in >> t;) toks.push_back(t);
        out.push_back(toks);
    }
    return out;
}

lexicon::CategoryLexicon tiny_lexicon() {
    std::istringstream in("%category article noncontent\nthe\na\n%category animal\ncat\ndog\n");
    return lexicon::CategoryLexicon::parse(in, "tiny");
}

}  // namespace

TEST(ActivityCovariates, Examples) {
    const Timestamp anchor = 100 * kDay;
    std::vector<Timestamp> times;
    for (int d = 0; d < 30; ++d) times.push_back(anchor - 30 * kDay + d * kDay);
    times.push_back(anchor + kDay);
    auto a = activity_covariates(timeline(anchor - 30 * kDay, times), anchor);
    EXPECT_DOUBLE_EQ(a.posts_per_day, 1.0);
    EXPECT_DOUBLE_EQ(a.tenure_days, 30.0);

    a = activity_covariates(timeline(anchor - 45 * kDay, {}), anchor);
    EXPECT_EQ(a.posts_per_day, 0.0);
    EXPECT_DOUBLE_EQ(a.tenure_days, 45.0);
    EXPECT_THROW(activity_covariates(timeline(anchor, {}), anchor), ValidationError);
}

TEST(NGramVocabulary, Examples) {
    std::vector<PostTokens> corpora = {split_posts({"good morning all"}), split_posts({"well good morning"}),
                                       split_posts({"good morning to you"})};
    const auto v = ngram_vocabulary(corpora, {{2, 3, 4}, 500, false});
    ASSERT_FALSE(v.entries().empty());
    EXPECT_EQ(v.entries()[0].name, "good morning");
    EXPECT_EQ(v.entries()[0].df, 3u);
    // k beyond the distinct count returns everything.
    EXPECT_EQ(v.size(), oracle::ngram_ranking({corpora.begin(), corpora.end()}, {2, 3, 4}).size());

    std::vector<PostTokens> tie = {split_posts({"b c"}), split_posts({"a b"})};
    const auto t = ngram_vocabulary(tie, {{2}, 1, false});
    ASSERT_EQ(t.size(), 1u);
    EXPECT_EQ(t.entries()[0].name, "a b");
    EXPECT_THROW(ngram_vocabulary(std::vector<PostTokens>{}, {}), ValidationError);
}

TEST(NGramVocabulary, MatchesBruteForceRanking) {
    std::mt19937_64 rng(5);
    const std::vector<std::string> words = {"a", "b", "c", "d", "e", "f"};
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<std::vector<std::vector<std::string>>> users(2 + rng() % 40);
        for (auto& u : users) {
            const auto posts = rng() % 4;
            for (std::size_t p = 0; p < posts; ++p) {
                std::vector<std::string> post(rng() % 9);
                // Skewed draws so document frequencies tie often.
                for (auto& w : post) w = words[std::min(rng() % 8, rng() % 6)];
                u.push_back(post);
            }
        }
        for (std::size_t k : {1u, 5u, 20u, 200u})
            for (bool per_n : {false, true}) {
                const auto v = ngram_vocabulary(users, {{2, 3, 4}, k, per_n});
                std::vector<std::string> expect;
                if (per_n) {
                    for (int n : {2, 3, 4}) {
                        const auto r = oracle::ngram_ranking(users, {n});
                        for (std::size_t i = 0; i < std::min(k, r.size()); ++i) expect.push_back(r[i].name);
                    }
                } else {
                    const auto r = oracle::ngram_ranking(users, {2, 3, 4});
                    for (std::size_t i = 0; i < std::min(k, r.size()); ++i) expect.push_back(r[i].name);
                }
                EXPECT_EQ(v.names(), expect) << "trial " << trial << " k " << k << " per_n " << per_n;
            }
    }
}

TEST(NGramFeatures, Examples) {
    const NGramVocabulary v({{{"a", "b"}, "a b", 1, 1}, {{"x", "y"}, "x y", 1, 1}});
    const auto f = ngram_features(split_posts({"a b"}), v);
    EXPECT_EQ(f, (std::vector<double>{1.0, 0.0}));
    EXPECT_EQ(ngram_features(split_posts({"a"}), v), (std::vector<double>{0.0, 0.0}));
    // "a b c": bigrams ab, bc and one trigram, so ab is one of three.
    EXPECT_DOUBLE_EQ(ngram_features(split_posts({"a b c"}), v)[0], 1.0 / 3.0);
    // n-grams do not cross post boundaries.
    EXPECT_EQ(ngram_features(split_posts({"x", "y"}), v), (std::vector<double>{0.0, 0.0}));
    const auto once = ngram_features(split_posts({"a b q", "x y a b"}), v);
    const auto twice = ngram_features(split_posts({"a b q", "x y a b", "a b q", "x y a b"}), v);
    EXPECT_EQ(once, twice);
}

TEST(Assemble, SchemaOrderAndInvariance) {
    const auto lex = tiny_lexicon();
    const auto baseline = split_posts({"the cat sat", "a dog ran"});
    std::vector<PostTokens> corpora = {baseline};
    const auto schema = build_schema(ngram_vocabulary(corpora, {{2}, 2, false}), lex);
    ASSERT_EQ(schema.names, (std::vector<std::string>{"posts_per_day", "tenure_days", "ng:a dog", "ng:cat sat",
                                                      "lex:article", "lex:animal"}));
    const ActivityCovariates act{0.5, 40.0};
    const auto v = assemble("u", act, baseline, schema, lex);
    // Hand-assembled: 4 bigrams total, 6 tokens with 2 articles and 2 animals.
    const std::vector<double> golden = {0.5, 40.0, 0.25, 0.25, 100.0 * 2 / 6, 100.0 * 2 / 6};
    ASSERT_EQ(v.values.size(), golden.size());
    for (std::size_t i = 0; i < golden.size(); ++i) EXPECT_NEAR(v.values[i], golden[i], 1e-12) << schema.names[i];

    const auto swapped = assemble("u", act, split_posts({"a dog ran", "the cat sat"}), schema, lex);
    EXPECT_EQ(v.values, swapped.values);

    const auto empty = build_schema(NGramVocabulary{}, lex);
    EXPECT_EQ(empty.dimension(), 2 + lex.size());
    EXPECT_EQ(assemble("u", act, baseline, empty, lex).values.size(), 2 + lex.size());
    EXPECT_THROW(assemble("u", act, PostTokens{}, schema, lex), ValidationError);
}

TEST(Schema, HashTracksNames) {
    const auto lex = tiny_lexicon();
    std::vector<PostTokens> a = {split_posts({"a b"})}, b = {split_posts({"a c"})};
    const auto sa = build_schema(ngram_vocabulary(a, {{2}, 5, false}), lex);
    const auto sb = build_schema(ngram_vocabulary(b, {{2}, 5, false}), lex);
    EXPECT_NE(sa.hash(), sb.hash());
    EXPECT_EQ(sa.hash(), build_schema(ngram_vocabulary(a, {{2}, 5, false}), lex).hash());
}
