#pragma once

// Outcome metrics over a user's posts: style accommodation, the
// categorical-dynamic index, semantic convergence, repeatability, complexity
// and Coleman-Liau readability. Plus feed centroids, their common target.

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "feedshift/common.hpp"
#include "feedshift/embedding.hpp"
#include "feedshift/lexicon.hpp"

namespace feedshift::textmetrics {

using lexicon::CategoryLexicon;
using lexicon::CategoryRates;
using lexicon::TokenSequence;

enum class Metric { lsa, cdi, semconv, repeatability, complexity, readability };

inline constexpr std::array<Metric, 6> kAllMetrics = {Metric::lsa,           Metric::cdi,
                                                      Metric::semconv,       Metric::repeatability,
                                                      Metric::complexity,    Metric::readability};

inline std::string_view metric_name(Metric m) {
    switch (m) {
        case Metric::lsa: return "lsa";
        case Metric::cdi: return "cdi";
        case Metric::semconv: return "semconv";
        case Metric::repeatability: return "repeatability";
        case Metric::complexity: return "complexity";
        case Metric::readability: return "readability";
    }
    return "?";
}

/// Human-readable row label used in reports.
inline std::string_view metric_label(Metric m) {
    switch (m) {
        case Metric::lsa: return "Ling. Accomm.";
        case Metric::cdi: return "CDI";
        case Metric::semconv: return "Sem. Convergence";
        case Metric::repeatability: return "Repeatability";
        case Metric::complexity: return "Complexity";
        case Metric::readability: return "Readability";
    }
    return "?";
}

enum class Period { baseline, post };

enum class Aggregation { pooled, per_post_mean };

inline Aggregation parse_aggregation(std::string_view s) {
    if (s == "pooled") return Aggregation::pooled;
    if (s == "per-post-mean") return Aggregation::per_post_mean;
    throw ValidationError("unknown aggregation: " + std::string(s));
}

inline std::string_view aggregation_name(Aggregation a) {
    return a == Aggregation::pooled ? "pooled" : "per-post-mean";
}

/// Cosine similarity. One zero vector gives 0; two zero vectors are an error.
inline double cosine(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size())
        throw ValidationError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    CompensatedSum dot, na, nb;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot.add(a[i] * b[i]);
        na.add(a[i] * a[i]);
        nb.add(b[i] * b[i]);
    }
    if (na.value() == 0.0 && nb.value() == 0.0) throw ValidationError("degenerate style vector");
    if (na.value() == 0.0 || nb.value() == 0.0) return 0.0;
    return std::clamp(dot.value() / (std::sqrt(na.value()) * std::sqrt(nb.value())), -1.0, 1.0);
}

/// 30 + article + preposition - ppron - ipron - auxverb - conjunction - adverb - negation.
inline double cdi(const CategoryRates& rates) {
    auto get = [&](std::string_view cat) {
        const auto r = rates.rate(cat);
        if (!r) throw ValidationError("cdi: missing category " + std::string(cat));
        return *r;
    };
    return 30.0 + get("article") + get("preposition") - get("ppron") - get("ipron") - get("auxverb") -
           get("conjunction") - get("adverb") - get("negation");
}

/// Counts of letters, words and sentences pooled over one or more posts.
struct TextStats {
    std::size_t letters = 0;
    std::size_t words = 0;
    std::size_t sentences = 0;

    TextStats& operator+=(const TextStats& o) {
        letters += o.letters;
        words += o.words;
        sentences += o.sentences;
        return *this;
    }
};

/// Number of code points in a UTF-8 token.
inline std::size_t codepoint_count(std::string_view token) {
    std::size_t n = 0;
    for (unsigned char c : token)
        if ((c & 0xC0) != 0x80) ++n;
    return n;
}

/// Alphabetic code points: everything in a token except digits and apostrophes.
inline std::size_t letter_count(std::string_view token) {
    std::size_t n = 0;
    for (unsigned char c : token) {
        if ((c & 0xC0) == 0x80) continue;
        if ((c >= '0' && c <= '9') || c == '\'') continue;
        ++n;
    }
    return n;
}

/// Sentences in one post: segments separated by runs of `.`, `!` or `?` that
/// are followed by whitespace or end of text, counting only segments that
/// contain a letter or digit. A post with any word counts at least 1.
inline std::size_t count_sentences(std::string_view text) {
    std::size_t sentences = 0;
    bool segment_has_word = false;
    std::size_t i = 0;
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (c == '.' || c == '!' || c == '?') {
            std::size_t j = i;
            while (j < text.size() && (text[j] == '.' || text[j] == '!' || text[j] == '?')) ++j;
            const bool boundary = j == text.size() || lexicon::detail::is_space(static_cast<unsigned char>(text[j]));
            if (boundary && segment_has_word) {
                ++sentences;
                segment_has_word = false;
            }
            i = j;
            continue;
        }
        if (lexicon::detail::is_ascii_alnum(c) || c >= 0x80) segment_has_word = true;
        ++i;
    }
    if (segment_has_word) ++sentences;
    return sentences;
}

/// Stats for one post given its raw text and tokens.
inline TextStats text_stats(std::string_view text, const std::vector<std::string>& tokens) {
    TextStats s;
    s.words = tokens.size();
    for (const auto& t : tokens) s.letters += letter_count(t);
    if (s.words > 0) s.sentences = std::max<std::size_t>(1, count_sentences(text));
    return s;
}

inline TextStats text_stats(std::string_view text) {
    std::vector<std::string> tokens;
    lexicon::tokenize_into(text, tokens);
    return text_stats(text, tokens);
}

/// Coleman-Liau index 0.0588 L - 0.296 S - 15.8, with L letters and S
/// sentences per 100 words.
inline double coleman_liau(const TextStats& stats) {
    if (stats.words == 0) throw ValidationError("empty document");
    const double words = static_cast<double>(stats.words);
    const double letters_per_100 = 100.0 * static_cast<double>(stats.letters) / words;
    const double sentences_per_100 = 100.0 * static_cast<double>(stats.sentences) / words;
    return 0.0588 * letters_per_100 - 0.296 * sentences_per_100 - 15.8;
}

/// Fraction of tokens that repeat an earlier token: (N_tokens - N_unique) / N_tokens.
inline double repeatability(std::span<const std::string> tokens) {
    if (tokens.empty()) throw ValidationError("empty document");
    std::unordered_set<std::string_view> unique(tokens.begin(), tokens.end());
    return static_cast<double>(tokens.size() - unique.size()) / static_cast<double>(tokens.size());
}

inline double repeatability(const TokenSequence& seq) { return repeatability(std::span(seq.tokens)); }

/// Mean characters (code points) per token.
inline double complexity(std::span<const std::string> tokens) {
    if (tokens.empty()) throw ValidationError("empty document");
    std::size_t chars = 0;
    for (const auto& t : tokens) chars += codepoint_count(t);
    return static_cast<double>(chars) / static_cast<double>(tokens.size());
}

inline double complexity(const TokenSequence& seq) { return complexity(std::span(seq.tokens)); }

struct FeedCentroid {
    std::string feed_id;
    std::vector<double> style_centroid;
    EmbeddingVector embedding_centroid;
    std::size_t n_posts = 0;
    std::size_t n_empty_excluded = 0;
};

/// Cosine between a user's noncontent rate vector and the feed style centroid.
inline double style_accommodation(std::span<const double> user_vec, const FeedCentroid& centroid) {
    return cosine(user_vec, centroid.style_centroid);
}

namespace detail {

inline EmbeddingVector embed_tokens_or_text(EmbeddingProvider& embedder, std::string_view text,
                                            const std::vector<std::string>& tokens) {
    if (auto* hashing = dynamic_cast<HashingEmbedder*>(&embedder)) return hashing->embed_tokens(tokens);
    return embedder.embed(text);
}

// Mean of nonzero embeddings, re-normalized. Empty optional if nothing to average
// or the mean cancels to zero.
inline std::optional<EmbeddingVector> mean_direction(std::span<const EmbeddingVector> vecs, std::size_t dim) {
    std::vector<CompensatedSum> sums(dim);
    std::size_t used = 0;
    for (const auto& v : vecs) {
        if (v.is_zero()) continue;
        if (v.dimension() != dim) throw ValidationError("embedding dimension mismatch");
        for (std::size_t i = 0; i < dim; ++i) sums[i].add(v.components[i]);
        ++used;
    }
    if (used == 0) return std::nullopt;
    EmbeddingVector mean;
    mean.components.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) mean.components[i] = sums[i].value() / static_cast<double>(used);
    if (mean.norm() < 1e-12) return std::nullopt;
    normalize(mean);
    return mean;
}

}  // namespace detail

/// Style and embedding centroid over the posts a feed surfaced. Callers pass
/// the texts in canonical (post_id) order; the sums are compensated, so the
/// result does not depend on that order beyond rounding of the last bit.
inline FeedCentroid feed_centroid(std::string feed_id, std::span<const std::string> feed_posts,
                                  const CategoryLexicon& lex, EmbeddingProvider& embedder) {
    if (feed_posts.empty()) throw ValidationError("feed centroid needs at least one post");
    FeedCentroid c;
    c.feed_id = std::move(feed_id);
    const std::size_t dim = lex.noncontent_indices().size();
    std::vector<CompensatedSum> style(dim);
    std::vector<EmbeddingVector> embeddings;
    embeddings.reserve(feed_posts.size());
    std::vector<std::string> tokens;
    for (const auto& text : feed_posts) {
        tokens.clear();
        lexicon::tokenize_into(text, tokens);
        if (tokens.empty()) {
            ++c.n_empty_excluded;
            continue;
        }
        lexicon::CategoryCounter counter(lex);
        for (const auto& t : tokens) counter.add(t);
        const auto vec = lexicon::noncontent_vector(counter.rates(), lex);
        for (std::size_t i = 0; i < dim; ++i) style[i].add(vec[i]);
        embeddings.push_back(detail::embed_tokens_or_text(embedder, text, tokens));
        ++c.n_posts;
    }
    if (c.n_posts == 0) throw ValidationError("all feed posts are empty");
    c.style_centroid.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) c.style_centroid[i] = style[i].value() / static_cast<double>(c.n_posts);
    auto mean = detail::mean_direction(embeddings, embedder.dimension() ? embedder.dimension()
                                                                        : embeddings.front().dimension());
    if (!mean) throw ValidationError("feed posts embed to a zero mean");
    c.embedding_centroid = std::move(*mean);
    return c;
}

/// Cosine between the re-normalized mean embedding of a user's posts and the
/// feed's embedding centroid.
inline double semantic_convergence(std::span<const std::string> user_posts, const FeedCentroid& centroid,
                                   EmbeddingProvider& embedder) {
    const auto vecs = embedder.embed_batch(user_posts);
    const auto mean = detail::mean_direction(vecs, centroid.embedding_centroid.dimension());
    if (!mean) throw ValidationError("user posts embed to a zero mean");
    return cosine(mean->components, centroid.embedding_centroid.components);
}

/// Everything measured for one user in one period.
struct PeriodProfile {
    std::array<double, kAllMetrics.size()> metrics;  // NaN where undefined
    std::vector<double> category_rates;              // NaN when the period has no tokens
    std::size_t n_posts = 0;
    std::size_t n_tokens = 0;

    double metric(Metric m) const { return metrics[static_cast<std::size_t>(m)]; }
};

/// Computes all six metrics plus every lexicon category rate for one period.
/// Pooled aggregation measures the concatenated token stream; per-post-mean
/// averages per-post values over posts with at least one token.
inline PeriodProfile profile_period(std::span<const std::string> posts, const CategoryLexicon& lex,
                                    const FeedCentroid& centroid, EmbeddingProvider& embedder,
                                    Aggregation aggregation = Aggregation::pooled) {
    constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
    PeriodProfile p;
    p.metrics.fill(kNaN);
    p.category_rates.assign(lex.size(), kNaN);
    p.n_posts = posts.size();

    std::vector<std::vector<std::string>> tokens(posts.size());
    for (std::size_t i = 0; i < posts.size(); ++i) lexicon::tokenize_into(posts[i], tokens[i]);

    std::vector<EmbeddingVector> embeddings;
    if (dynamic_cast<HashingEmbedder*>(&embedder) != nullptr) {
        embeddings.reserve(posts.size());
        for (std::size_t i = 0; i < posts.size(); ++i)
            embeddings.push_back(detail::embed_tokens_or_text(embedder, posts[i], tokens[i]));
    } else {
        embeddings = embedder.embed_batch(posts);
    }

    auto set = [&](Metric m, double v) { p.metrics[static_cast<std::size_t>(m)] = v; };

    if (aggregation == Aggregation::pooled) {
        lexicon::CategoryCounter counter(lex);
        TextStats stats;
        std::vector<std::string> pooled;
        for (std::size_t i = 0; i < posts.size(); ++i) {
            for (const auto& t : tokens[i]) counter.add(t);
            stats += text_stats(posts[i], tokens[i]);
            pooled.insert(pooled.end(), tokens[i].begin(), tokens[i].end());
        }
        p.n_tokens = pooled.size();
        if (pooled.empty()) return p;
        const auto rates = counter.rates();
        p.category_rates = rates.rates;
        const auto style = lexicon::noncontent_vector(rates, lex);
        try {
            set(Metric::lsa, style_accommodation(style, centroid));
        } catch (const ValidationError&) {
        }
        try {
            set(Metric::cdi, cdi(rates));
        } catch (const ValidationError&) {
        }
        if (const auto mean = detail::mean_direction(embeddings, centroid.embedding_centroid.dimension()))
            set(Metric::semconv, cosine(mean->components, centroid.embedding_centroid.components));
        set(Metric::repeatability, repeatability(pooled));
        set(Metric::complexity, complexity(pooled));
        set(Metric::readability, coleman_liau(stats));
        return p;
    }

    // per-post mean
    std::array<CompensatedSum, kAllMetrics.size()> sums;
    std::array<std::size_t, kAllMetrics.size()> counts{};
    std::vector<CompensatedSum> rate_sums(lex.size());
    std::size_t rated_posts = 0;
    auto add = [&](Metric m, double v) {
        sums[static_cast<std::size_t>(m)].add(v);
        ++counts[static_cast<std::size_t>(m)];
    };
    for (std::size_t i = 0; i < posts.size(); ++i) {
        const auto& toks = tokens[i];
        p.n_tokens += toks.size();
        if (toks.empty()) continue;
        lexicon::CategoryCounter counter(lex);
        for (const auto& t : toks) counter.add(t);
        const auto rates = counter.rates();
        for (std::size_t c = 0; c < lex.size(); ++c) rate_sums[c].add(rates.rates[c]);
        ++rated_posts;
        try {
            add(Metric::lsa, style_accommodation(lexicon::noncontent_vector(rates, lex), centroid));
        } catch (const ValidationError&) {
        }
        try {
            add(Metric::cdi, cdi(rates));
        } catch (const ValidationError&) {
        }
        if (!embeddings[i].is_zero())
            add(Metric::semconv, cosine(embeddings[i].components, centroid.embedding_centroid.components));
        add(Metric::repeatability, repeatability(toks));
        add(Metric::complexity, complexity(toks));
        add(Metric::readability, coleman_liau(text_stats(posts[i], toks)));
    }
    for (std::size_t m = 0; m < kAllMetrics.size(); ++m)
        if (counts[m] > 0) p.metrics[m] = sums[m].value() / static_cast<double>(counts[m]);
    if (rated_posts > 0)
        for (std::size_t c = 0; c < lex.size(); ++c)
            p.category_rates[c] = rate_sums[c].value() / static_cast<double>(rated_posts);
    return p;
}

}  // namespace feedshift::textmetrics
