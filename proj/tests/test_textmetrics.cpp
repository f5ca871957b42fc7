#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "feedshift/textmetrics.hpp"
#include "helpers.hpp"

using namespace feedshift;
using namespace feedshift::textmetrics;

namespace {

using Tokens = std::vector<std::string>;

lexicon::CategoryLexicon mini() { return lexicon::CategoryLexicon::load(fstest::mini_lexicon_path()); }

lexicon::CategoryRates cdi_rates(std::map<std::string, double> values) {
    static const auto names = std::make_shared<const std::vector<std::string>>(
        std::vector<std::string>(lexicon::kCdiCategories.begin(), lexicon::kCdiCategories.end()));
    lexicon::CategoryRates r;
    r.names = names;
    r.total_words = 100;
    for (const auto& n : *names) r.rates.push_back(values.count(n) ? values.at(n) : 0.0);
    return r;
}

FeedCentroid centroid_with_style(std::vector<double> style) {
    FeedCentroid c;
    c.style_centroid = std::move(style);
    return c;
}

}  // namespace

TEST(Cdi, Examples) {
    EXPECT_NEAR(cdi(cdi_rates({})), 30.0, 1e-9);
    EXPECT_NEAR(cdi(cdi_rates({{"article", 10}, {"preposition", 5}})), 45.0, 1e-9);
    EXPECT_NEAR(cdi(cdi_rates({{"ppron", 12},
                               {"ipron", 8},
                               {"auxverb", 10},
                               {"conjunction", 5},
                               {"adverb", 5},
                               {"negation", 2},
                               {"article", 6},
                               {"preposition", 14}})),
                8.0, 1e-9);
    lexicon::CategoryRates missing;
    missing.names = std::make_shared<const std::vector<std::string>>(std::vector<std::string>{"article"});
    missing.rates = {1.0};
    EXPECT_THROW(cdi(missing), ValidationError);
}

TEST(Cdi, AffineInRates) {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 20.0);
    for (int k = 0; k < 20; ++k) {
        std::map<std::string, double> v;
        for (auto c : lexicon::kCdiCategories) v[std::string(c)] = u(rng);
        const double alpha = u(rng) / 4.0;
        auto scaled = v;
        for (auto& [_, x] : scaled) x *= alpha;
        EXPECT_NEAR(cdi(cdi_rates(scaled)) - 30.0, alpha * (cdi(cdi_rates(v)) - 30.0), 1e-9);
    }
}

TEST(ColemanLiau, FormulaExamples) {
    // L = 500, S = 5 per 100 words.
    EXPECT_NEAR(coleman_liau(TextStats{500, 100, 5}), 12.12, 1e-9);
    // "the cat sat": 9 letters, 3 words, 1 sentence; L = 300, S = 33.33...
    const auto s = text_stats("the cat sat");
    EXPECT_EQ(s.letters, 9u);
    EXPECT_EQ(s.words, 3u);
    EXPECT_EQ(s.sentences, 1u);
    EXPECT_NEAR(coleman_liau(s), 0.0588 * 300.0 - 0.296 * (100.0 / 3.0) - 15.8, 1e-9);
    EXPECT_NEAR(coleman_liau(s), -8.026666666666667, 1e-9);
    // "a": L = 100, S = 100.
    EXPECT_NEAR(coleman_liau(text_stats("a")), 5.88 - 29.6 - 15.8, 1e-9);
    EXPECT_THROW(coleman_liau(text_stats("")), ValidationError);
}

TEST(ColemanLiau, SentenceCounting) {
    EXPECT_EQ(count_sentences("One. Two! Three?"), 3u);
    EXPECT_EQ(count_sentences("Wait... what?! ok"), 3u);
    EXPECT_EQ(count_sentences("version 2.5 is out"), 1u);
    EXPECT_EQ(count_sentences("..."), 0u);
    EXPECT_EQ(text_stats("no terminal punctuation").sentences, 1u);
    EXPECT_EQ(text_stats("...").sentences, 0u);
    EXPECT_EQ(text_stats("can't stop").letters, 8u);
}

TEST(Repeatability, Examples) {
    EXPECT_NEAR(repeatability(Tokens{"a", "a", "b"}), 1.0 / 3.0, 1e-12);
    EXPECT_EQ(repeatability(Tokens{"a", "b", "c"}), 0.0);
    for (std::size_t n = 1; n < 8; ++n)
        EXPECT_NEAR(repeatability(Tokens(n, "x")), static_cast<double>(n - 1) / static_cast<double>(n), 1e-12);
    EXPECT_THROW(repeatability(Tokens{}), ValidationError);
}

TEST(Complexity, Examples) {
    EXPECT_NEAR(complexity(Tokens{"ab", "abcd"}), 3.0, 1e-12);
    EXPECT_EQ(complexity(Tokens{"x"}), 1.0);
    EXPECT_EQ(complexity(Tokens{"word", "word", "word"}), 4.0);
    EXPECT_EQ(complexity(Tokens{"caf\xC3\xA9"}), 4.0);
    EXPECT_THROW(complexity(Tokens{}), ValidationError);
}

TEST(Bounds, RepeatabilityAndComplexityRanges) {
    std::mt19937_64 rng(9);
    for (int k = 0; k < 50; ++k) {
        Tokens t;
        const std::size_t n = 1 + rng() % 30;
        for (std::size_t i = 0; i < n; ++i) t.push_back(std::string(1 + rng() % 5, static_cast<char>('a' + rng() % 3)));
        const double r = repeatability(t);
        EXPECT_GE(r, 0.0);
        EXPECT_LE(r, 1.0 - 1.0 / static_cast<double>(n) + 1e-15);
        EXPECT_GE(complexity(t), 1.0);
    }
}

TEST(StyleAccommodation, Examples) {
    const std::vector<double> c = {3.0, 1.0, 2.0};
    EXPECT_NEAR(style_accommodation(c, centroid_with_style(c)), 1.0, 1e-12);
    EXPECT_NEAR(style_accommodation(std::vector<double>{1, 0, 0}, centroid_with_style({0, 2, 5})), 0.0, 1e-12);
    EXPECT_NEAR(style_accommodation(std::vector<double>{1, 0}, centroid_with_style({0.3, 0.3})), 1.0 / std::sqrt(2.0),
                1e-12);
    EXPECT_THROW(style_accommodation(std::vector<double>{0, 0}, centroid_with_style({0, 0})), ValidationError);
    EXPECT_THROW(style_accommodation(std::vector<double>{1}, centroid_with_style({0, 0})), ValidationError);
}

TEST(Cosine, ScaleInvariant) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int k = 0; k < 50; ++k) {
        std::vector<double> a(8), b(8);
        for (auto& x : a) x = u(rng);
        for (auto& x : b) x = u(rng);
        const double base = cosine(a, b);
        const double lambda = 0.01 + 100.0 * std::abs(u(rng));
        auto sa = a;
        for (auto& x : sa) x *= lambda;
        EXPECT_NEAR(cosine(sa, b), base, 1e-12);
        EXPECT_NEAR(cosine(a, sa), 1.0, 1e-12);
    }
}

TEST(HashingEmbedder, DeterministicUnitNorm64) {
    auto e = make_embedder("builtin-test");
    EXPECT_EQ(e->dimension(), 64u);
    const auto a = e->embed("the quick brown fox");
    const auto b = e->embed("the quick brown fox");
    EXPECT_EQ(a.components, b.components);
    EXPECT_NEAR(a.norm(), 1.0, 1e-9);
    EXPECT_TRUE(e->embed("").is_zero());
    EXPECT_THROW(make_embedder("bogus"), ValidationError);
    EXPECT_EQ(make_embedder("hashing:16:3")->dimension(), 16u);
}

TEST(SemanticConvergence, Examples) {
    const auto lex = mini();
    HashingEmbedder emb(64);
    const std::vector<std::string> feed = {"breaking news about markets"};
    const auto c = feed_centroid("f", feed, lex, emb);
    EXPECT_NEAR(semantic_convergence(feed, c, emb), 1.0, 1e-12);

    // Find a word whose bucket is disjoint from every centroid bucket.
    std::set<std::size_t> used;
    for (const auto& t : lexicon::tokenize(feed[0]).tokens) used.insert(emb.bucket(t));
    std::string other;
    for (int i = 0; other.empty(); ++i) {
        const auto w = "zq" + std::to_string(i);
        if (!used.count(emb.bucket(w))) other = w;
    }
    const std::vector<std::string> user = {other + " " + other};
    EXPECT_NEAR(semantic_convergence(user, c, emb), 0.0, 1e-12);

    // Two posts with antipodal embeddings under the signed embedder cancel out.
    HashingEmbedder signed_emb(64, 0, true);
    std::string pos, neg;
    for (int i = 0; pos.empty() || neg.empty(); ++i) {
        const auto w = "w" + std::to_string(i);
        if (signed_emb.bucket(w) != 0) continue;
        (signed_emb.sign(w) > 0 ? pos : neg) = w;
    }
    const auto sc = feed_centroid("f", feed, lex, signed_emb);
    const std::vector<std::string> antipodal = {pos, neg};
    EXPECT_THROW(semantic_convergence(antipodal, sc, signed_emb), ValidationError);
}

TEST(FeedCentroid, Examples) {
    const auto lex = mini();
    HashingEmbedder emb(64);
    const std::vector<std::string> one = {"I will go to the park"};
    const auto c1 = feed_centroid("f", one, lex, emb);
    const auto toks = lexicon::tokenize(one[0]);
    EXPECT_EQ(c1.style_centroid, lexicon::noncontent_vector(lexicon::category_rates(toks, lex), lex));
    EXPECT_EQ(c1.embedding_centroid.components, emb.embed(one[0]).components);
    EXPECT_EQ(c1.n_posts, 1u);

    // Style vectors (2, 0) and (0, 2) over a two-category noncontent lexicon.
    std::istringstream in("%category a noncontent\nx\n%category b noncontent\ny\n");
    const auto lex2 = lexicon::CategoryLexicon::parse(in, "two");
    // 50 tokens each, one of them in the category: rate 2.
    auto fifty = [](const std::string& head, const std::string& filler) {
        std::string s = head;
        for (int i = 0; i < 49; ++i) s += " " + filler + std::to_string(i);
        return s;
    };
    const std::vector<std::string> posts = {fifty("x", "q"), fifty("y", "r")};
    const auto c2 = feed_centroid("f", posts, lex2, emb);
    EXPECT_NEAR(c2.style_centroid[0], 1.0, 1e-12);
    EXPECT_NEAR(c2.style_centroid[1], 1.0, 1e-12);

    const std::vector<std::string> with_empty = {"", "!!!", "I will go"};
    const auto c3 = feed_centroid("f", with_empty, lex, emb);
    EXPECT_EQ(c3.n_posts, 1u);
    EXPECT_EQ(c3.n_empty_excluded, 2u);
    const std::vector<std::string> all_empty = {"", "??"};
    EXPECT_THROW(feed_centroid("f", all_empty, lex, emb), ValidationError);
    EXPECT_THROW(feed_centroid("f", std::vector<std::string>{}, lex, emb), ValidationError);
}

TEST(FeedCentroid, PermutationInvariantAndMatchesTwoPassMean) {
    const auto lex = mini();
    HashingEmbedder emb(64);
    std::vector<std::string> posts = {"I think we should go", "they will not come to the party",
                                      "the news is very bad today", "you and I can do it", "a cat on a mat"};
    const auto ref = feed_centroid("f", posts, lex, emb);
    // Brute-force two-pass mean.
    const std::size_t d = lex.noncontent_indices().size();
    std::vector<double> sum(d, 0.0);
    for (const auto& p : posts) {
        const auto v = lexicon::noncontent_vector(lexicon::category_rates(lexicon::tokenize(p), lex), lex);
        for (std::size_t i = 0; i < d; ++i) sum[i] += v[i];
    }
    for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(ref.style_centroid[i], sum[i] / 5.0, 1e-12);
    std::mt19937_64 rng(1);
    for (int k = 0; k < 10; ++k) {
        std::shuffle(posts.begin(), posts.end(), rng);
        const auto c = feed_centroid("f", posts, lex, emb);
        for (std::size_t i = 0; i < d; ++i) EXPECT_NEAR(c.style_centroid[i], ref.style_centroid[i], 1e-12);
        for (std::size_t i = 0; i < 64; ++i)
            EXPECT_NEAR(c.embedding_centroid.components[i], ref.embedding_centroid.components[i], 1e-12);
    }
}

TEST(ProfilePeriod, PooledMatchesDirectMetrics) {
    const auto lex = mini();
    HashingEmbedder emb(64);
    const std::vector<std::string> feed = {"the news today is about the markets"};
    const auto c = feed_centroid("f", feed, lex, emb);
    const std::vector<std::string> posts = {"I can't believe the news. So sad!", "we will go to the beach tomorrow"};
    const auto p = profile_period(posts, lex, c, emb, Aggregation::pooled);
    Tokens pooled;
    for (const auto& t : posts) {
        const auto s = lexicon::tokenize(t).tokens;
        pooled.insert(pooled.end(), s.begin(), s.end());
    }
    const auto rates = lexicon::category_rates(lexicon::TokenSequence{pooled}, lex);
    EXPECT_EQ(p.n_tokens, pooled.size());
    EXPECT_NEAR(p.metric(Metric::complexity), complexity(pooled), 1e-12);
    EXPECT_NEAR(p.metric(Metric::repeatability), repeatability(pooled), 1e-12);
    EXPECT_NEAR(p.metric(Metric::cdi), cdi(rates), 1e-9);
    EXPECT_NEAR(p.metric(Metric::lsa), style_accommodation(lexicon::noncontent_vector(rates, lex), c), 1e-12);
    EXPECT_NEAR(p.metric(Metric::semconv), semantic_convergence(posts, c, emb), 1e-12);
    auto stats = text_stats(posts[0]);
    stats += text_stats(posts[1]);
    EXPECT_EQ(stats.sentences, 3u);
    EXPECT_NEAR(p.metric(Metric::readability), coleman_liau(stats), 1e-12);
    for (std::size_t i = 0; i < lex.size(); ++i) EXPECT_NEAR(p.category_rates[i], rates.rates[i], 1e-12);

    const auto per = profile_period(posts, lex, c, emb, Aggregation::per_post_mean);
    const double c0 = complexity(lexicon::tokenize(posts[0]));
    const double c1 = complexity(lexicon::tokenize(posts[1]));
    EXPECT_NEAR(per.metric(Metric::complexity), (c0 + c1) / 2.0, 1e-12);

    const auto empty = profile_period(std::vector<std::string>{}, lex, c, emb);
    for (double v : empty.metrics) EXPECT_TRUE(std::isnan(v));
}

TEST(LineProtocolEmbedder, ProcessRoundTrip) {
    fstest::TempDir dir("embed");
    write_file(dir / "enc.py",
               "import sys, json\n"
               "for line in sys.stdin:\n"
               "    q = json.loads(line)\n"
               "    print(json.dumps({'id': q['id'], 'vec': [len(q['text']), 1.0, 0.0]}), flush=True)\n");
    auto e = make_embedder("process:python3 " + (dir / "enc.py"));
    const std::vector<std::string> texts = {"abc", "", "abcdefg"};
    const auto v = e->embed_batch(texts);
    ASSERT_EQ(v.size(), 3u);
    EXPECT_EQ(e->dimension(), 3u);
    EXPECT_NEAR(v[0].components[0], 3.0 / std::sqrt(10.0), 1e-12);
    EXPECT_NEAR(v[1].components[1], 1.0, 1e-12);
    EXPECT_NEAR(v[2].components[0], 7.0 / std::sqrt(50.0), 1e-12);
    EXPECT_EQ(e->describe(), "process:python3 " + (dir / "enc.py"));
}
