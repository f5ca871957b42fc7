#pragma once

// Pre-treatment covariates: activity metrics, top-k token n-grams and lexicon
// category rates, all measured on baseline posts only.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "feedshift/common.hpp"
#include "feedshift/corpus.hpp"
#include "feedshift/lexicon.hpp"

namespace feedshift::covariates {

struct ActivityCovariates {
    double posts_per_day = 0.0;
    double tenure_days = 0.0;
};

/// Baseline posting rate and account tenure at the anchor. The timeline should
/// already be language-filtered.
inline ActivityCovariates activity_covariates(const corpus::UserTimeline& tl, Timestamp anchor) {
    const Timestamp span = anchor - tl.first_seen;
    if (span <= 0) throw ValidationError("activity_covariates: empty baseline span for " + tl.user_id);
    const auto baseline = static_cast<double>(
        std::count_if(tl.posts.begin(), tl.posts.end(), [&](const auto& p) { return p.timestamp < anchor; }));
    ActivityCovariates a;
    a.tenure_days = to_days(span);
    a.posts_per_day = baseline / a.tenure_days;
    return a;
}

/// One user's baseline as tokenized posts. n-grams never cross posts.
using PostTokens = std::vector<std::vector<std::string>>;

struct NGramOptions {
    std::vector<int> orders = {2, 3, 4};
    std::size_t top_k = 500;
    bool per_n = false;  // top_k per order instead of pooled across orders
};

namespace detail {

struct NGramKey {
    std::array<std::uint32_t, 4> ids{};
    std::uint8_t n = 0;

    bool operator==(const NGramKey&) const = default;
};

struct NGramKeyHash {
    std::size_t operator()(const NGramKey& k) const {
        std::uint64_t h = k.n;
        for (int i = 0; i < k.n; ++i) h = mix64(h ^ (static_cast<std::uint64_t>(k.ids[i]) + 0x9e37ULL * (i + 1)));
        return static_cast<std::size_t>(h);
    }
};

struct NGramStats {
    std::size_t df = 0;
    std::size_t tf = 0;
};

inline NGramKey make_key(std::span<const std::uint32_t> ids, std::size_t start, int n) {
    NGramKey k;
    k.n = static_cast<std::uint8_t>(n);
    for (int i = 0; i < n; ++i) k.ids[i] = ids[start + i];
    return k;
}

inline NGramKey sub_key(const NGramKey& k, int offset, int n) {
    NGramKey s;
    s.n = static_cast<std::uint8_t>(n);
    for (int i = 0; i < n; ++i) s.ids[i] = k.ids[offset + i];
    return s;
}

}  // namespace detail

struct NGramEntry {
    std::vector<std::string> tokens;
    std::string name;  // tokens joined by single spaces
    std::size_t df = 0;
    std::size_t tf = 0;
};

/// Ordered n-gram vocabulary with fast per-user feature extraction.
class NGramVocabulary {
public:
    NGramVocabulary() = default;

    explicit NGramVocabulary(std::vector<NGramEntry> entries, std::vector<int> orders = {2, 3, 4})
        : entries_(std::move(entries)), orders_(std::move(orders)) {
        std::sort(orders_.begin(), orders_.end());
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            detail::NGramKey key;
            key.n = static_cast<std::uint8_t>(entries_[i].tokens.size());
            for (std::size_t t = 0; t < entries_[i].tokens.size(); ++t) {
                auto [it, _] = token_ids_.emplace(entries_[i].tokens[t], static_cast<std::uint32_t>(token_ids_.size()));
                key.ids[t] = it->second;
            }
            index_.emplace(key, i);
        }
    }

    std::size_t size() const { return entries_.size(); }
    const std::vector<NGramEntry>& entries() const { return entries_; }
    const std::vector<int>& orders() const { return orders_; }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.name);
        return out;
    }

    /// Provenance hash over names and frequencies.
    std::string hash() const {
        std::uint64_t h = kFnvOffset;
        for (const auto& e : entries_) {
            h = fnv1a64(e.name, h);
            h = fnv1a64("|" + std::to_string(e.df) + "|" + std::to_string(e.tf) + "\n", h);
        }
        return hex64(h);
    }

    /// Relative frequency of each vocabulary n-gram among all of the user's
    /// n-grams of the configured orders; all zeros if the user has none.
    std::vector<double> features(const PostTokens& posts) const {
        std::vector<double> out(entries_.size(), 0.0);
        std::vector<std::size_t> counts(entries_.size(), 0);
        std::size_t total = 0;
        constexpr std::uint32_t kUnknown = 0xFFFFFFFFu;
        std::vector<std::uint32_t> ids;
        for (const auto& post : posts) {
            ids.clear();
            for (const auto& t : post) {
                const auto it = token_ids_.find(t);
                ids.push_back(it == token_ids_.end() ? kUnknown : it->second);
            }
            for (int n : orders_) {
                if (post.size() < static_cast<std::size_t>(n)) continue;
                const std::size_t count = post.size() - static_cast<std::size_t>(n) + 1;
                total += count;
                for (std::size_t s = 0; s < count; ++s) {
                    bool known = true;
                    for (int k = 0; k < n; ++k) known = known && ids[s + k] != kUnknown;
                    if (!known) continue;
                    const auto it = index_.find(detail::make_key(ids, s, n));
                    if (it != index_.end()) ++counts[it->second];
                }
            }
        }
        if (total == 0) return out;
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
        return out;
    }

private:
    std::vector<NGramEntry> entries_;
    std::vector<int> orders_;
    std::unordered_map<std::string, std::uint32_t> token_ids_;
    std::unordered_map<detail::NGramKey, std::size_t, detail::NGramKeyHash> index_;
};

/// Top-k n-grams ranked by document frequency (number of users whose baseline
/// contains them), then total frequency, then lexicographic name.
///
/// In pooled mode an n-gram can only make the cut if both of its (n-1)-gram
/// parts do at least as well on document frequency, so each order only counts
/// candidates whose parts clear the running k-th best df. This gives exactly
/// the brute-force ranking with far less memory.
inline NGramVocabulary ngram_vocabulary(std::span<const PostTokens> corpora, const NGramOptions& opts = {}) {
    if (corpora.empty()) throw ValidationError("ngram_vocabulary: empty corpus");
    std::vector<int> orders = opts.orders;
    std::sort(orders.begin(), orders.end());
    orders.erase(std::unique(orders.begin(), orders.end()), orders.end());
    for (int n : orders)
        if (n < 1 || n > 4) throw ValidationError("n-gram order must be in 1..4");

    // Intern tokens; ids follow first appearance, which only affects hashing.
    std::unordered_map<std::string, std::uint32_t> interner;
    std::vector<std::string> id_to_token;
    std::vector<std::vector<std::vector<std::uint32_t>>> docs(corpora.size());
    for (std::size_t u = 0; u < corpora.size(); ++u) {
        docs[u].reserve(corpora[u].size());
        for (const auto& post : corpora[u]) {
            std::vector<std::uint32_t> ids;
            ids.reserve(post.size());
            for (const auto& t : post) {
                auto [it, inserted] = interner.emplace(t, static_cast<std::uint32_t>(id_to_token.size()));
                if (inserted) id_to_token.push_back(t);
                ids.push_back(it->second);
            }
            docs[u].push_back(std::move(ids));
        }
    }

    using Table = std::unordered_map<detail::NGramKey, detail::NGramStats, detail::NGramKeyHash>;
    auto count_order = [&](int n, auto&& admit) {
        Table table;
        std::vector<detail::NGramKey> seen;
        for (const auto& doc : docs) {
            seen.clear();
            for (const auto& ids : doc) {
                if (ids.size() < static_cast<std::size_t>(n)) continue;
                for (std::size_t s = 0; s + n <= ids.size(); ++s) {
                    const auto key = detail::make_key(ids, s, n);
                    if (!admit(key)) continue;
                    ++table[key].tf;
                    seen.push_back(key);
                }
            }
            std::sort(seen.begin(), seen.end(), [](const auto& a, const auto& b) {
                return std::lexicographical_compare(a.ids.begin(), a.ids.begin() + a.n, b.ids.begin(), b.ids.begin() + b.n);
            });
            seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
            for (const auto& k : seen) ++table[k].df;
        }
        return table;
    };

    auto name_of = [&](const detail::NGramKey& k) {
        std::string s;
        for (int i = 0; i < k.n; ++i) {
            if (i) s.push_back(' ');
            s += id_to_token[k.ids[i]];
        }
        return s;
    };

    struct Candidate {
        std::size_t df, tf;
        detail::NGramKey key;
    };
    auto collect = [](const Table& table, std::vector<Candidate>& out) {
        for (const auto& [key, st] : table) out.push_back({st.df, st.tf, key});
    };
    // Keeps every candidate that ranks level with or above the k-th on
    // (df, tf); only those can need the name tie-break.
    auto shortlist = [](std::vector<Candidate>& c, std::size_t k) {
        if (c.size() <= k) return;
        if (k == 0) {
            c.clear();
            return;
        }
        auto better = [](const Candidate& a, const Candidate& b) { return a.df != b.df ? a.df > b.df : a.tf > b.tf; };
        std::nth_element(c.begin(), c.begin() + static_cast<std::ptrdiff_t>(k - 1), c.end(), better);
        const Candidate kth = c[k - 1];
        std::erase_if(c, [&](const Candidate& x) { return better(kth, x); });
    };
    auto materialize = [&](const std::vector<Candidate>& c, std::vector<NGramEntry>& out) {
        for (const auto& x : c) {
            NGramEntry e;
            e.df = x.df;
            e.tf = x.tf;
            for (int i = 0; i < x.key.n; ++i) e.tokens.push_back(id_to_token[x.key.ids[i]]);
            e.name = name_of(x.key);
            out.push_back(std::move(e));
        }
    };

    auto by_rank = [](const NGramEntry& a, const NGramEntry& b) {
        if (a.df != b.df) return a.df > b.df;
        if (a.tf != b.tf) return a.tf > b.tf;
        return a.name < b.name;
    };
    auto top = [&](std::vector<Candidate>& c, std::vector<NGramEntry>& out) {
        shortlist(c, opts.top_k);
        std::vector<NGramEntry> level;
        materialize(c, level);
        const std::size_t keep = std::min(opts.top_k, level.size());
        std::partial_sort(level.begin(), level.begin() + static_cast<std::ptrdiff_t>(keep), level.end(), by_rank);
        level.resize(keep);
        out.insert(out.end(), std::make_move_iterator(level.begin()), std::make_move_iterator(level.end()));
    };

    std::vector<NGramEntry> ranked;
    if (opts.per_n) {
        for (int n : orders) {
            std::vector<Candidate> level;
            collect(count_order(n, [](const auto&) { return true; }), level);
            top(level, ranked);
        }
    } else {
        std::vector<std::size_t> all_df;
        std::size_t threshold = 1;
        Table previous;
        int previous_n = -1;
        std::vector<Candidate> pool;
        for (int n : orders) {
            Table table;
            if (previous_n == n - 1 && threshold > 1) {
                table = count_order(n, [&](const detail::NGramKey& k) {
                    const auto a = previous.find(detail::sub_key(k, 0, n - 1));
                    if (a == previous.end() || a->second.df < threshold) return false;
                    const auto b = previous.find(detail::sub_key(k, 1, n - 1));
                    return b != previous.end() && b->second.df >= threshold;
                });
            } else {
                table = count_order(n, [](const auto&) { return true; });
            }
            for (const auto& [_, st] : table) all_df.push_back(st.df);
            if (all_df.size() >= opts.top_k && opts.top_k > 0) {
                std::nth_element(all_df.begin(), all_df.begin() + static_cast<std::ptrdiff_t>(opts.top_k - 1),
                                 all_df.end(), std::greater<>());
                threshold = std::max(threshold, all_df[opts.top_k - 1]);
            }
            collect(table, pool);
            shortlist(pool, opts.top_k);
            previous = std::move(table);
            previous_n = n;
        }
        top(pool, ranked);
    }
    return NGramVocabulary(std::move(ranked), orders);
}

inline std::vector<double> ngram_features(const PostTokens& baseline, const NGramVocabulary& vocab) {
    return vocab.features(baseline);
}

/// Ordered covariate names: activity block, n-gram block, lexicon block.
struct CovariateSchema {
    std::vector<std::string> names;
    NGramVocabulary vocabulary;
    std::size_t n_ngrams = 0;
    std::size_t n_categories = 0;
    std::string lexicon_name;

    std::size_t dimension() const { return names.size(); }
    std::string hash() const {
        std::uint64_t h = kFnvOffset;
        for (const auto& n : names) h = fnv1a64(n + "\n", h);
        return hex64(h);
    }
};

inline constexpr std::string_view kNGramPrefix = "ng:";
inline constexpr std::string_view kLexiconPrefix = "lex:";

inline CovariateSchema build_schema(NGramVocabulary vocab, const lexicon::CategoryLexicon& lex) {
    CovariateSchema s;
    s.names = {"posts_per_day", "tenure_days"};
    for (const auto& e : vocab.entries()) s.names.push_back(std::string(kNGramPrefix) + e.name);
    for (const auto& c : lex.category_names()) s.names.push_back(std::string(kLexiconPrefix) + c);
    s.n_ngrams = vocab.size();
    s.n_categories = lex.size();
    s.lexicon_name = lex.name();
    s.vocabulary = std::move(vocab);
    return s;
}

struct CovariateVector {
    std::string user_id;
    std::vector<double> values;
};

/// Concatenates activity, n-gram and category-rate blocks in schema order.
inline CovariateVector assemble(std::string user_id, const ActivityCovariates& activity, const PostTokens& baseline,
                                const CovariateSchema& schema, const lexicon::CategoryLexicon& lex) {
    if (lex.size() != schema.n_categories) throw ValidationError("lexicon does not match covariate schema");
    lexicon::CategoryCounter counter(lex);
    for (const auto& post : baseline)
        for (const auto& t : post) counter.add(t);
    if (counter.total_words() == 0) throw ValidationError("no baseline text for user " + user_id);
    CovariateVector v;
    v.user_id = std::move(user_id);
    v.values.reserve(schema.dimension());
    v.values.push_back(activity.posts_per_day);
    v.values.push_back(activity.tenure_days);
    const auto ng = schema.vocabulary.features(baseline);
    v.values.insert(v.values.end(), ng.begin(), ng.end());
    const auto rates = counter.rates();
    v.values.insert(v.values.end(), rates.rates.begin(), rates.rates.end());
    for (double x : v.values)
        if (!std::isfinite(x)) throw ValidationError("non-finite covariate for user " + v.user_id);
    return v;
}

}  // namespace feedshift::covariates
