#pragma once

// Synthetic event logs with planted confounding and treatment effects.
//
// Every user has a latent trait u ~ N(0, 1). Treatment is Bernoulli with
// probability logistic(confounder_strength * u) (drawn until both arm quotas
// are filled), the posting rate is base_post_rate * exp(rate_loading * u), and
// the share of long content words moves with tanh(u). Posts are token-pool
// mixtures, so the expected value of every linear text metric has a closed
// form; that is what GroundTruth records.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <nlohmann/json.hpp>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "feedshift/common.hpp"
#include "feedshift/corpus.hpp"
#include "feedshift/lexicon.hpp"
#include "feedshift/textmetrics.hpp"

namespace feedshift::synth {

using corpus::EngagementKind;
using corpus::EngagementRecord;
using corpus::PostRecord;

/// Built-in function-word lexicon used when a config names none.
inline constexpr std::string_view kBuiltinLexicon = R"(# function-word categories for synthetic studies
%category article noncontent
a
an
the
%category preposition noncontent
in
on
at
of
to
with
for
from
about
into
%category ppron noncontent
i
me
my
we
us
our
you
your
he
she
him
her
his
they
them
their
%category ipron noncontent
it
its
this
that
thing*
%category auxverb noncontent
am
is
are
was
were
be
been
have
has
had
do
does
did
will
would
can
could
should
%category conjunction noncontent
and
but
or
so
because
%category adverb noncontent
very
really
just
so
also
always
%category negation noncontent
no
not
never
nothing
can't
don't
won't
isn't
%category i noncontent
i
me
my
mine
%category we noncontent
we
us
our
%category you noncontent
you
your
yours
%category shehe noncontent
he
she
him
her
his
%category they noncontent
they
them
their
%category focusfuture noncontent
will
gonna
going
soon
tomorrow
)";

inline lexicon::CategoryLexicon builtin_lexicon() {
    std::istringstream in{std::string(kBuiltinLexicon)};
    return lexicon::CategoryLexicon::parse(in, "synth-builtin");
}

/// Metrics that can carry a planted shift.
inline constexpr std::array<std::string_view, 4> kPlantable = {"complexity", "readability", "cdi", "repeatability"};

struct SynthConfig {
    std::uint64_t seed = 1;
    std::size_t n_treated = 1000;
    std::size_t n_control = 1000;
    double days = 100.0;
    Timestamp start = 1'700'000'000;
    double base_post_rate = 0.3;       // posts per day at u = 0
    double rate_loading = 0.4;         // log-rate change per unit of u
    double confounder_strength = 0.0;  // treatment log-odds per unit of u
    double outcome_confounding = 0.1;  // long-word share change per unit of tanh(u)
    std::map<std::string, double> planted_effects;
    std::string feed_id = "study";
    std::size_t feed_post_pool = 400;
    std::size_t short_pool = 3000;
    std::size_t long_pool = 3000;
    std::size_t feed_word_pool = 300;
    // Engagement-driven feed-word share: share += gamma_k * log1p(count_k).
    std::array<double, 6> feed_alignment{};
    std::array<double, 6> engagement_rates = {0.5, 1.0, 0.3, 1.0, 3.0, 0.5};
    double other_feed_rate = 0.2;  // fraction of controls that engage another feed
    // Token mixture at baseline.
    double p_article = 0.06;
    double p_function = 0.30;
    double p_feed_word = 0.02;
    double long_share = 0.35;
    double min_baseline_days = 30.0;
    std::string lexicon_path;  // empty: built-in

    double planted(std::string_view metric) const {
        const auto it = planted_effects.find(std::string(metric));
        return it == planted_effects.end() ? 0.0 : it->second;
    }
};

inline SynthConfig config_from_json(const nlohmann::json& j) {
    SynthConfig c;
    c.seed = j.value("seed", c.seed);
    c.n_treated = j.value("n_treated", c.n_treated);
    c.n_control = j.value("n_control", c.n_control);
    c.days = j.value("days", c.days);
    c.start = j.value("start", c.start);
    c.base_post_rate = j.value("base_post_rate", c.base_post_rate);
    c.rate_loading = j.value("rate_loading", c.rate_loading);
    c.confounder_strength = j.value("confounder_strength", c.confounder_strength);
    c.outcome_confounding = j.value("outcome_confounding", c.outcome_confounding);
    c.planted_effects = j.value("planted_effects", c.planted_effects);
    c.feed_id = j.value("feed_id", c.feed_id);
    c.feed_post_pool = j.value("feed_post_pool", c.feed_post_pool);
    c.short_pool = j.value("short_pool", c.short_pool);
    c.long_pool = j.value("long_pool", c.long_pool);
    c.feed_word_pool = j.value("feed_word_pool", c.feed_word_pool);
    auto by_kind = [&](const char* key, std::array<double, 6>& out) {
        if (!j.contains(key)) return;
        for (const auto& [k, v] : j.at(key).items()) {
            const auto kind = corpus::parse_kind(k);
            if (!kind) throw ValidationError(std::string(key) + ": unknown engagement kind " + k);
            out[static_cast<std::size_t>(*kind)] = v.get<double>();
        }
    };
    by_kind("feed_alignment", c.feed_alignment);
    by_kind("engagement_rates", c.engagement_rates);
    c.other_feed_rate = j.value("other_feed_rate", c.other_feed_rate);
    c.p_article = j.value("p_article", c.p_article);
    c.p_function = j.value("p_function", c.p_function);
    c.p_feed_word = j.value("p_feed_word", c.p_feed_word);
    c.long_share = j.value("long_share", c.long_share);
    c.lexicon_path = j.value("lexicon", c.lexicon_path);
    return c;
}

inline nlohmann::json config_to_json(const SynthConfig& c) {
    nlohmann::json align, rates;
    for (auto k : corpus::kAllKinds) {
        align[std::string(corpus::kind_name(k))] = c.feed_alignment[static_cast<std::size_t>(k)];
        rates[std::string(corpus::kind_name(k))] = c.engagement_rates[static_cast<std::size_t>(k)];
    }
    return {{"seed", c.seed},
            {"n_treated", c.n_treated},
            {"n_control", c.n_control},
            {"days", c.days},
            {"start", c.start},
            {"base_post_rate", c.base_post_rate},
            {"rate_loading", c.rate_loading},
            {"confounder_strength", c.confounder_strength},
            {"outcome_confounding", c.outcome_confounding},
            {"planted_effects", c.planted_effects},
            {"feed_id", c.feed_id},
            {"feed_post_pool", c.feed_post_pool},
            {"short_pool", c.short_pool},
            {"long_pool", c.long_pool},
            {"feed_word_pool", c.feed_word_pool},
            {"feed_alignment", align},
            {"engagement_rates", rates},
            {"other_feed_rate", c.other_feed_rate},
            {"p_article", c.p_article},
            {"p_function", c.p_function},
            {"p_feed_word", c.p_feed_word},
            {"long_share", c.long_share},
            {"lexicon", c.lexicon_path}};
}

// Token pools, in mixture order.
enum Pool : std::size_t { kArticle, kFunction, kShort, kLong, kFeed, kPoolCount };

using Mixture = std::array<double, kPoolCount>;

struct PoolStats {
    std::vector<std::string> words;
    double mean_chars = 0.0;
    double mean_letters = 0.0;
    std::vector<double> category_share;  // fraction of pool words in each category
};

/// Word pools plus the lexicon they are classified by.
class Vocabulary {
public:
    Vocabulary(const lexicon::CategoryLexicon& lex, const SynthConfig& cfg) : lex_(lex) {
        std::set<std::string> article, function;
        const auto art = lex.index_of("article");
        for (std::size_t c = 0; c < lex.size(); ++c) {
            for (const auto& raw : lex.categories()[c].entries) {
                std::string w = raw.back() == '*' ? raw.substr(0, raw.size() - 1) : raw;
                if (art && c == *art)
                    article.insert(w);
                else
                    function.insert(w);
            }
        }
        for (const auto& w : article) function.erase(w);
        pools_[kArticle].words.assign(article.begin(), article.end());
        pools_[kFunction].words.assign(function.begin(), function.end());
        std::set<std::string> taken(article.begin(), article.end());
        taken.insert(function.begin(), function.end());
        pools_[kShort].words = make_words(cfg.short_pool, 3, 4, 0x51, taken);
        pools_[kLong].words = make_words(cfg.long_pool, 8, 10, 0x4c, taken);
        pools_[kFeed].words = make_words(cfg.feed_word_pool, 5, 7, 0xfe, taken);
        for (auto& p : pools_) describe(p);
    }

    const PoolStats& pool(std::size_t p) const { return pools_[p]; }
    const lexicon::CategoryLexicon& lexicon() const { return lex_; }

    /// Expected per-token characters, letters and per-100-word category rates
    /// under a mixture.
    struct Expectation {
        double chars = 0.0;
        double letters = 0.0;
        std::vector<double> rates;
    };

    Expectation expect(const Mixture& m) const {
        Expectation e;
        e.rates.assign(lex_.size(), 0.0);
        for (std::size_t p = 0; p < kPoolCount; ++p) {
            e.chars += m[p] * pools_[p].mean_chars;
            e.letters += m[p] * pools_[p].mean_letters;
            for (std::size_t c = 0; c < lex_.size(); ++c) e.rates[c] += 100.0 * m[p] * pools_[p].category_share[c];
        }
        return e;
    }

    /// Expected number of distinct tokens among f independent draws.
    double expected_unique(const Mixture& m, double f) const {
        double u = 0.0;
        for (std::size_t p = 0; p < kPoolCount; ++p) {
            const double size = static_cast<double>(pools_[p].words.size());
            if (m[p] <= 0.0 || size == 0.0) continue;
            u += size * -std::expm1(f * std::log1p(-m[p] / size));
        }
        return u;
    }

private:
    static std::vector<std::string> make_words(std::size_t n, int min_len, int max_len, std::uint64_t tag,
                                               std::set<std::string>& taken) {
        static constexpr std::string_view consonants = "bcdfghjklmnprstvwz";
        static constexpr std::string_view vowels = "aeiou";
        std::vector<std::string> out;
        out.reserve(n);
        std::uint64_t h = mix64(tag);
        const int span = max_len - min_len + 1;
        for (std::size_t i = 0; out.size() < n; ++i) {
            const int len = min_len + static_cast<int>(out.size() % static_cast<std::size_t>(span));
            std::string w;
            for (int k = 0; k < len; ++k) {
                h = mix64(h + 0x9e3779b97f4a7c15ULL);
                w.push_back(k % 2 == 0 ? consonants[h % consonants.size()] : vowels[h % vowels.size()]);
            }
            if (w.rfind("thing", 0) == 0) continue;
            if (taken.insert(w).second) out.push_back(std::move(w));
            if (i > n * 1000) throw ValidationError("synth: cannot build word pool");
        }
        return out;
    }

    void describe(PoolStats& p) const {
        p.category_share.assign(lex_.size(), 0.0);
        if (p.words.empty()) return;
        std::vector<std::uint32_t> cats;
        double chars = 0.0, letters = 0.0;
        for (const auto& w : p.words) {
            chars += static_cast<double>(textmetrics::codepoint_count(w));
            letters += static_cast<double>(textmetrics::letter_count(w));
            lex_.match(w, cats);
            for (auto c : cats) p.category_share[c] += 1.0;
        }
        const double n = static_cast<double>(p.words.size());
        p.mean_chars = chars / n;
        p.mean_letters = letters / n;
        for (auto& s : p.category_share) s /= n;
    }

    const lexicon::CategoryLexicon& lex_;
    std::array<PoolStats, kPoolCount> pools_;
};

struct LatentUser {
    std::string user_id;
    double u = 0.0;
    bool treated = false;
    Timestamp first_seen = 0;
    Timestamp anchor = 0;  // treated only
    double post_rate = 0.0;
    std::array<double, 6> feed_counts{};  // engagements on the study feed by kind
    double copy_rate = 0.0;               // post-period copy probability
};

struct GroundTruth {
    std::map<std::string, double> ate;         // expected effect on the treated
    std::map<std::string, double> naive_bias;  // expected unmatched difference without the planted shift
    std::map<std::string, int> beta_sign;      // expected sign of regression coefficients
};

inline nlohmann::json truth_to_json(const GroundTruth& t) {
    return {{"ate", t.ate}, {"naive_bias", t.naive_bias}, {"beta_sign", t.beta_sign}};
}

inline GroundTruth truth_from_json(const nlohmann::json& j) {
    GroundTruth t;
    t.ate = j.at("ate").get<std::map<std::string, double>>();
    t.naive_bias = j.value("naive_bias", std::map<std::string, double>{});
    t.beta_sign = j.value("beta_sign", std::map<std::string, int>{});
    return t;
}

struct SynthOutput {
    std::vector<PostRecord> posts;
    std::vector<EngagementRecord> engagements;
    std::vector<LatentUser> users;
    GroundTruth truth;
    std::string publisher_id;
};

inline std::string category_metric(std::string_view category) { return "lex:" + std::string(category); }

inline void validate(const SynthConfig& c) {
    if (c.n_treated < 2 || c.n_control < 2) throw ValidationError("synth: need at least 2 users per arm");
    if (!(c.days > c.min_baseline_days + 30.0)) throw ValidationError("synth: window too short");
    if (!(c.base_post_rate > 0.0) || !std::isfinite(c.base_post_rate)) throw ValidationError("synth: rate must be > 0");
    for (double r : c.engagement_rates)
        if (!(r >= 0.0)) throw ValidationError("synth: engagement rates must be >= 0");
    for (double g : c.feed_alignment)
        if (!std::isfinite(g)) throw ValidationError("synth: feed alignment must be finite");
    if (c.short_pool == 0 || c.long_pool == 0 || c.feed_word_pool == 0 || c.feed_post_pool == 0)
        throw ValidationError("synth: pools must be nonempty");
    for (const auto& [metric, delta] : c.planted_effects) {
        if (!std::isfinite(delta)) throw ValidationError("synth: planted effect must be finite: " + metric);
        if (std::find(kPlantable.begin(), kPlantable.end(), metric) == kPlantable.end())
            throw ValidationError("synth: cannot plant an effect on " + metric);
    }
    if (c.planted("complexity") != 0.0 && c.planted("readability") != 0.0)
        throw ValidationError("synth: complexity and readability shifts share one mechanism; plant only one");
    const double rep = c.planted("repeatability");
    if (rep < 0.0 || rep >= 1.0) throw ValidationError("synth: repeatability shift must lie in [0, 1)");
    const double content = 1.0 - c.p_article - c.p_function - c.p_feed_word;
    if (c.p_article < 0 || c.p_function < 0 || c.p_feed_word < 0 || content <= 0.0)
        throw ValidationError("synth: token mixture shares must be non-negative and leave room for content");
    if (c.long_share - std::abs(c.outcome_confounding) < 0.0 || c.long_share + std::abs(c.outcome_confounding) > 1.0)
        throw ValidationError("synth: long-word share leaves [0, 1]");
}

namespace detail {

inline Mixture baseline_mixture(const SynthConfig& c, double u) {
    const double content = 1.0 - c.p_article - c.p_function - c.p_feed_word;
    const double long_share = c.long_share + c.outcome_confounding * std::tanh(u);
    Mixture m{};
    m[kArticle] = c.p_article;
    m[kFunction] = c.p_function;
    m[kFeed] = c.p_feed_word;
    m[kLong] = content * long_share;
    m[kShort] = content * (1.0 - long_share);
    return m;
}

// Treated post-exposure mixture: planted shifts plus engagement-driven feed words.
inline Mixture treated_mixture(const SynthConfig& c, const Vocabulary& vocab, const Mixture& base,
                               const std::array<double, 6>& counts) {
    Mixture m = base;
    double feed_shift = 0.0;
    for (std::size_t k = 0; k < 6; ++k) feed_shift += c.feed_alignment[k] * std::log1p(counts[k]);
    if (feed_shift != 0.0) {
        const double content = m[kShort] + m[kLong];
        const double take = std::clamp(feed_shift, -m[kFeed], 0.5 * content);
        m[kFeed] += take;
        m[kShort] -= take * base[kShort] / content;
        m[kLong] -= take * base[kLong] / content;
    }
    const double gap_chars = vocab.pool(kLong).mean_chars - vocab.pool(kShort).mean_chars;
    const double gap_letters = vocab.pool(kLong).mean_letters - vocab.pool(kShort).mean_letters;
    double move = 0.0;  // probability moved from short to long content
    if (const double d = c.planted("complexity"); d != 0.0) move = d / gap_chars;
    if (const double d = c.planted("readability"); d != 0.0) move = d / (5.88 * gap_letters);
    if (move != 0.0) {
        if (m[kShort] - move < 0.0 || m[kLong] + move < 0.0)
            throw ValidationError("synth: planted length shift is infeasible for the configured mixture");
        m[kShort] -= move;
        m[kLong] += move;
    }
    if (const double d = c.planted("cdi"); d != 0.0) {
        // Articles add one CDI point per percentage point of tokens.
        const auto& share = vocab.pool(kArticle).category_share;
        const auto art = vocab.lexicon().index_of("article");
        const double per = art ? share[*art] : 0.0;
        if (per <= 0.0) throw ValidationError("synth: lexicon has no article words for a CDI shift");
        const double add = d / (100.0 * per);
        if (m[kShort] - add < 0.0 || m[kArticle] + add < 0.0)
            throw ValidationError("synth: planted CDI shift is infeasible for the configured mixture");
        m[kShort] -= add;
        m[kArticle] += add;
    }
    return m;
}

// Copy probability that raises expected repeatability of n tokens by delta.
inline double solve_copy_rate(const Vocabulary& vocab, const Mixture& m, double n, double delta) {
    if (delta == 0.0 || n < 2.0) return 0.0;
    auto rep = [&](double rho) { return 1.0 - vocab.expected_unique(m, 1.0 + (n - 1.0) * (1.0 - rho)) / n; };
    const double target = rep(0.0) + delta;
    if (target >= rep(1.0)) throw ValidationError("synth: repeatability shift is infeasible for a short timeline");
    double lo = 0.0, hi = 1.0;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (rep(mid) < target ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Poisson draw through an explicit inversion so results do not depend on the
// standard library's distribution implementation.
inline int poisson(std::mt19937_64& rng, double lambda) {
    if (lambda <= 0.0) return 0;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double limit = std::exp(-lambda);
    double p = unif(rng);
    int k = 0;
    while (p > limit) {
        p *= unif(rng);
        ++k;
    }
    return k;
}

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

// Box-Muller; again independent of the library's normal distribution.
inline double normal(std::mt19937_64& rng) {
    constexpr double kTwoPi = 6.283185307179586;
    const double a = uniform(rng, 0.0, 1.0);
    const double b = uniform(rng, 0.0, 1.0);
    return std::sqrt(-2.0 * std::log1p(-a)) * std::cos(kTwoPi * b);
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t n) {
    return static_cast<std::size_t>(uniform(rng, 0.0, static_cast<double>(n))) % n;
}

inline std::size_t draw_pool(std::mt19937_64& rng, const Mixture& m) {
    double r = uniform(rng, 0.0, 1.0);
    for (std::size_t p = 0; p < kPoolCount; ++p) {
        if (r < m[p]) return p;
        r -= m[p];
    }
    for (std::size_t p = kPoolCount; p-- > 0;)
        if (m[p] > 0.0) return p;
    return kShort;
}

// Post shapes: one or two sentences of five to nine words.
inline std::vector<std::vector<int>> draw_shapes(std::mt19937_64& rng, std::size_t n_posts) {
    std::vector<std::vector<int>> shapes(n_posts);
    for (auto& s : shapes) {
        const int sentences = 1 + static_cast<int>(pick(rng, 2));
        for (int k = 0; k < sentences; ++k) s.push_back(5 + static_cast<int>(pick(rng, 5)));
    }
    return shapes;
}

inline std::string render(const std::vector<std::vector<std::string>>& sentences) {
    std::string text;
    for (const auto& s : sentences) {
        if (!text.empty()) text.push_back(' ');
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i) text.push_back(' ');
            text += s[i];
        }
        text.push_back('.');
    }
    return text;
}

// Writes the posts of one period. Copies draw a uniformly random earlier token
// of the same period, which keeps the expected token mix unchanged.
inline void write_period(std::mt19937_64& rng, const Vocabulary& vocab, const Mixture& m, double copy_rate,
                         const std::vector<std::vector<int>>& shapes, std::vector<std::string>& texts) {
    std::vector<const std::string*> stream;
    for (const auto& shape : shapes) {
        std::vector<std::vector<std::string>> sentences;
        for (int len : shape) {
            std::vector<std::string> words;
            for (int k = 0; k < len; ++k) {
                const std::string* w = nullptr;
                if (copy_rate > 0.0 && !stream.empty() && uniform(rng, 0.0, 1.0) < copy_rate) {
                    w = stream[pick(rng, stream.size())];
                } else {
                    const auto& pool = vocab.pool(draw_pool(rng, m)).words;
                    w = &pool[pick(rng, pool.size())];
                }
                stream.push_back(w);
                words.push_back(*w);
            }
            sentences.push_back(std::move(words));
        }
        texts.push_back(render(sentences));
    }
}

inline std::string user_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "u%06zu", i);
    return buf;
}

}  // namespace detail

/// Generates the log. Output is sorted canonically and depends only on cfg.
inline SynthOutput generate(const SynthConfig& cfg, const lexicon::CategoryLexicon& lex, unsigned threads = 1) {
    validate(cfg);
    lexicon::require_cdi_categories(lex);
    const Vocabulary vocab(lex, cfg);
    const Timestamp end = cfg.start + static_cast<Timestamp>(cfg.days * kSecondsPerDay);
    const double day = static_cast<double>(kSecondsPerDay);

    SynthOutput out;
    out.publisher_id = "pub_" + cfg.feed_id;

    // Arm quotas: draw (u, T) pairs until both arms are full.
    {
        std::mt19937_64 rng(mix64(cfg.seed));
        std::size_t nt = 0, nc = 0;
        while (nt < cfg.n_treated || nc < cfg.n_control) {
            const double u = detail::normal(rng);
            const bool t = detail::uniform(rng, 0.0, 1.0) < detail::logistic(cfg.confounder_strength * u);
            if (t ? nt >= cfg.n_treated : nc >= cfg.n_control) continue;
            (t ? nt : nc) += 1;
            LatentUser lu;
            lu.user_id = detail::user_id(out.users.size());
            lu.u = u;
            lu.treated = t;
            out.users.push_back(std::move(lu));
        }
    }

    // The feed's own posts, from a publisher whose feed engagement at the window
    // start keeps it out of both arms (its baseline is empty).
    std::vector<PostRecord> feed_posts;
    {
        std::mt19937_64 rng(mix64(cfg.seed ^ 0xfeedULL));
        Mixture fm{};
        fm[kArticle] = cfg.p_article;
        fm[kFunction] = cfg.p_function;
        fm[kFeed] = 1.0 - cfg.p_article - cfg.p_function;
        std::vector<Timestamp> times(cfg.feed_post_pool);
        for (std::size_t i = 0; i < times.size(); ++i)
            times[i] = i == 0 ? cfg.start : cfg.start + static_cast<Timestamp>(detail::uniform(rng, 0.0, cfg.days * day));
        std::sort(times.begin(), times.end());
        const auto shapes = detail::draw_shapes(rng, times.size());
        std::vector<std::string> texts;
        for (std::size_t i = 0; i < times.size(); ++i) {
            std::vector<std::vector<int>> one = {shapes[i]};
            detail::write_period(rng, vocab, fm, 0.0, one, texts);
        }
        for (std::size_t i = 0; i < times.size(); ++i) {
            char id[48];
            std::snprintf(id, sizeof id, "f%05zu", i);
            feed_posts.push_back({id, out.publisher_id, times[i], texts[i], std::string("en")});
        }
        out.engagements.push_back({out.publisher_id, cfg.feed_id, EngagementKind::post, cfg.start, feed_posts[0].post_id});
    }

    const std::size_t n = out.users.size();
    std::vector<std::vector<PostRecord>> user_posts(n);
    std::vector<std::vector<EngagementRecord>> user_eng(n);
    std::vector<Mixture> base_mix(n), post_mix(n);
    parallel_for(n, threads, [&](std::size_t i) {
        auto& lu = out.users[i];
        std::mt19937_64 rng(mix64(cfg.seed ^ mix64(i + 1)));
        lu.first_seen = cfg.start + static_cast<Timestamp>(detail::uniform(rng, 0.0, 20.0 * day));
        lu.post_rate = cfg.base_post_rate * std::exp(cfg.rate_loading * lu.u);
        if (lu.treated)
            lu.anchor = cfg.start + static_cast<Timestamp>(detail::uniform(rng, 50.0 * day, cfg.days * day - 30.0 * day));

        // Regular cadence with jitter; the first post marks the start of the timeline.
        std::vector<Timestamp> times;
        const double interval = day / lu.post_rate;
        for (double t = static_cast<double>(lu.first_seen); t < static_cast<double>(end);
             t += interval * detail::uniform(rng, 0.7, 1.3))
            times.push_back(static_cast<Timestamp>(t));

        auto& eng = user_eng[i];
        if (lu.treated) {
            lu.feed_counts[static_cast<std::size_t>(EngagementKind::like)] = 1.0;
            auto target = [&](Timestamp ts) {
                const auto last = std::upper_bound(feed_posts.begin(), feed_posts.end(), ts,
                                                   [](Timestamp v, const PostRecord& p) { return v < p.timestamp; });
                const auto avail = static_cast<std::size_t>(last - feed_posts.begin());
                return feed_posts[detail::pick(rng, std::max<std::size_t>(avail, 1))].post_id;
            };
            eng.push_back({lu.user_id, cfg.feed_id, EngagementKind::like, lu.anchor, target(lu.anchor)});
            for (auto kind : corpus::kAllKinds) {
                const int extra = detail::poisson(rng, cfg.engagement_rates[static_cast<std::size_t>(kind)]);
                for (int e = 0; e < extra; ++e) {
                    const auto ts = static_cast<Timestamp>(detail::uniform(rng, static_cast<double>(lu.anchor),
                                                                           static_cast<double>(end)));
                    eng.push_back({lu.user_id, cfg.feed_id, kind, ts, target(ts)});
                }
                lu.feed_counts[static_cast<std::size_t>(kind)] += extra;
            }
        } else if (detail::uniform(rng, 0.0, 1.0) < cfg.other_feed_rate) {
            const int k = 1 + static_cast<int>(detail::pick(rng, 3));
            for (int e = 0; e < k; ++e) {
                const auto ts = static_cast<Timestamp>(
                    detail::uniform(rng, static_cast<double>(lu.first_seen), static_cast<double>(end)));
                eng.push_back({lu.user_id, "other_" + cfg.feed_id, EngagementKind::like, ts, std::nullopt});
            }
        }

        const auto shapes = detail::draw_shapes(rng, times.size());
        std::size_t split = times.size();
        if (lu.treated)
            split = static_cast<std::size_t>(std::lower_bound(times.begin(), times.end(), lu.anchor) - times.begin());
        base_mix[i] = detail::baseline_mixture(cfg, lu.u);
        post_mix[i] = lu.treated ? detail::treated_mixture(cfg, vocab, base_mix[i], lu.feed_counts) : base_mix[i];

        std::vector<std::vector<int>> before(shapes.begin(), shapes.begin() + static_cast<std::ptrdiff_t>(split));
        std::vector<std::vector<int>> after(shapes.begin() + static_cast<std::ptrdiff_t>(split), shapes.end());
        if (lu.treated) {
            double tokens = 0.0;
            for (const auto& s : after)
                for (int len : s) tokens += len;
            lu.copy_rate = detail::solve_copy_rate(vocab, post_mix[i], tokens, cfg.planted("repeatability"));
        }
        std::vector<std::string> texts;
        detail::write_period(rng, vocab, base_mix[i], 0.0, before, texts);
        detail::write_period(rng, vocab, post_mix[i], lu.copy_rate, after, texts);
        for (std::size_t k = 0; k < times.size(); ++k)
            user_posts[i].push_back({lu.user_id + "-p" + std::to_string(k), lu.user_id, times[k], texts[k],
                                     std::string("en")});
    });

    out.posts = std::move(feed_posts);
    for (auto& v : user_posts) out.posts.insert(out.posts.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
    for (auto& v : user_eng) out.engagements.insert(out.engagements.end(), v.begin(), v.end());
    std::sort(out.posts.begin(), out.posts.end(), corpus::detail::post_less);
    std::sort(out.engagements.begin(), out.engagements.end(), corpus::detail::engagement_less);

    // Ground truth: expected effect on the treated for metrics that are linear
    // in the token mixture, and the expected unmatched gap without treatment.
    auto linear_metrics = [&](const Mixture& m) {
        const auto e = vocab.expect(m);
        std::map<std::string, double> v;
        v["complexity"] = e.chars;
        // Sentences per word do not depend on the mixture, so they cancel in differences.
        v["readability"] = 5.88 * e.letters;
        lexicon::CategoryRates rates;
        rates.names = lex.shared_names();
        rates.rates = e.rates;
        v["cdi"] = textmetrics::cdi(rates);
        for (std::size_t c = 0; c < lex.size(); ++c) v[category_metric(lex.category_names()[c])] = e.rates[c];
        return v;
    };
    std::map<std::string, CompensatedSum> effect, mean_t, mean_c;
    std::size_t nt = 0, nc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto base = linear_metrics(base_mix[i]);
        if (out.users[i].treated) {
            const auto post = linear_metrics(post_mix[i]);
            for (const auto& [k, v] : base) {
                effect[k].add(post.at(k) - v);
                mean_t[k].add(v);
            }
            ++nt;
        } else {
            for (const auto& [k, v] : base) mean_c[k].add(v);
            ++nc;
        }
    }
    for (const auto& [k, s] : effect) {
        out.truth.ate[k] = s.value() / static_cast<double>(nt);
        out.truth.naive_bias[k] = mean_t[k].value() / static_cast<double>(nt) - mean_c[k].value() / static_cast<double>(nc);
    }
    out.truth.ate["repeatability"] = cfg.planted("repeatability");
    const bool aligned = std::any_of(cfg.feed_alignment.begin(), cfg.feed_alignment.end(), [](double g) { return g != 0.0; });
    if (!aligned) {
        out.truth.ate["lsa"] = 0.0;
        out.truth.ate["semconv"] = 0.0;
    }
    for (auto kind : corpus::kAllKinds) {
        const double g = cfg.feed_alignment[static_cast<std::size_t>(kind)];
        if (g != 0.0) out.truth.beta_sign[std::string(corpus::kind_name(kind))] = g > 0.0 ? -1 : 1;
    }
    return out;
}

inline corpus::EventStore to_store(const SynthOutput& out) {
    return corpus::EventStore(out.posts, out.engagements);
}

/// Writes events.jsonl and truth.json into `dir`.
inline void write_output(const SynthOutput& out, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::string log;
    for (const auto& p : out.posts) {
        log += corpus::post_to_json_line(p);
        log.push_back('\n');
    }
    for (const auto& e : out.engagements) {
        log += corpus::engagement_to_json_line(e);
        log.push_back('\n');
    }
    write_file(dir + "/events.jsonl", log);
    write_file(dir + "/truth.json", truth_to_json(out.truth).dump(2) + "\n");
}

struct VerifyCheck {
    std::string name;
    double truth = 0.0;
    double estimate = 0.0;
    double se = 0.0;
    bool ok = false;
};

struct VerifyOptions {
    double se_multiple = 3.0;
    double abs_tolerance = 0.0;
};

/// Compares estimates against ground truth. `effects` maps metric -> (ate, se);
/// `betas` maps regression term -> beta.
inline std::vector<VerifyCheck> verify(const GroundTruth& truth,
                                       const std::map<std::string, std::pair<double, double>>& effects,
                                       const std::map<std::string, double>& betas, const VerifyOptions& opts = {}) {
    std::vector<VerifyCheck> checks;
    for (const auto& [metric, expected] : truth.ate) {
        const auto it = effects.find(metric);
        if (it == effects.end()) continue;
        VerifyCheck c;
        c.name = metric;
        c.truth = expected;
        c.estimate = it->second.first;
        c.se = it->second.second;
        c.ok = std::abs(c.estimate - c.truth) <= opts.se_multiple * c.se + opts.abs_tolerance;
        checks.push_back(c);
    }
    for (const auto& [term, sign] : truth.beta_sign) {
        VerifyCheck c;
        c.name = "beta:" + term;
        c.truth = sign;
        const auto it = betas.find(term);
        if (it == betas.end()) throw ValidationError("verify: regression term missing: " + term);
        c.estimate = it->second;
        c.ok = (sign < 0 && c.estimate < 0.0) || (sign > 0 && c.estimate > 0.0);
        checks.push_back(c);
    }
    return checks;
}

}  // namespace feedshift::synth
