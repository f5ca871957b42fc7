#pragma once

// Tokenization and LIWC-style category lexicons.
//
// A lexicon file is UTF-8 text made of category blocks:
//
//     %category article noncontent
//     a
//     an
//     the
//     %category negation noncontent
//     no
//     not
//     never
//
// Entries ending in `*` match any token with that prefix. Blank lines and
// lines starting with `#` are ignored.

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "feedshift/common.hpp"

namespace feedshift::lexicon {

struct TokenSequence {
    std::vector<std::string> tokens;

    std::size_t n_tokens() const { return tokens.size(); }
    bool empty() const { return tokens.empty(); }
};

namespace detail {

inline bool is_ascii_alnum(unsigned char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9');
}

inline bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

// Length of the UTF-8 sequence starting with lead byte c (1 for ASCII or invalid).
inline std::size_t utf8_length(unsigned char c) {
    if (c < 0x80) return 1;
    if ((c & 0xE0) == 0xC0) return 2;
    if ((c & 0xF0) == 0xE0) return 3;
    if ((c & 0xF8) == 0xF0) return 4;
    return 1;
}

// U+2019 RIGHT SINGLE QUOTATION MARK, treated as an apostrophe.
inline bool is_curly_apostrophe(std::string_view s, std::size_t i) {
    return i + 2 < s.size() && static_cast<unsigned char>(s[i]) == 0xE2 &&
           static_cast<unsigned char>(s[i + 1]) == 0x80 && static_cast<unsigned char>(s[i + 2]) == 0x99;
}

// Word characters: ASCII letters/digits and any non-ASCII code point other
// than common Unicode punctuation and spaces in the U+2000 block.
inline bool is_word_codepoint(std::string_view s, std::size_t i, std::size_t len) {
    const auto c = static_cast<unsigned char>(s[i]);
    if (len == 1) return c < 0x80 && is_ascii_alnum(c);
    if (len == 2 && c == 0xC2) {
        // U+0080..U+00BF: Latin-1 punctuation, symbols and NBSP.
        return false;
    }
    if (len == 3 && c == 0xE2 && i + 1 < s.size()) {
        const auto c1 = static_cast<unsigned char>(s[i + 1]);
        // U+2000..U+2BFF: general punctuation, symbols, arrows.
        if (c1 >= 0x80 && c1 <= 0xAF) return false;
    }
    if (len == 3 && c == 0xE3 && i + 2 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x80) {
        return false;  // CJK punctuation
    }
    if (len == 4 && c == 0xF0 && i + 1 < s.size() && static_cast<unsigned char>(s[i + 1]) == 0x9F) {
        return false;  // emoji planes
    }
    return true;
}

inline void lowercase_ascii(std::string& s) {
    for (char& ch : s)
        if (ch >= 'A' && ch <= 'Z') ch = static_cast<char>(ch - 'A' + 'a');
}

// Splits one whitespace-free chunk into word tokens.
inline void split_chunk(std::string_view chunk, std::vector<std::string>& out) {
    std::string current;
    bool pending_apostrophe = false;
    std::size_t i = 0;
    auto flush = [&] {
        if (!current.empty()) {
            lowercase_ascii(current);
            out.push_back(std::move(current));
            current.clear();
        }
        pending_apostrophe = false;
    };
    while (i < chunk.size()) {
        const auto c = static_cast<unsigned char>(chunk[i]);
        if (c == '\'' || is_curly_apostrophe(chunk, i)) {
            const std::size_t len = c == '\'' ? 1 : 3;
            if (!current.empty() && !pending_apostrophe) {
                pending_apostrophe = true;
            } else {
                flush();
            }
            i += len;
            continue;
        }
        const std::size_t len = std::min(utf8_length(c), chunk.size() - i);
        if (is_word_codepoint(chunk, i, len)) {
            if (pending_apostrophe) {
                current.push_back('\'');
                pending_apostrophe = false;
            }
            current.append(chunk.substr(i, len));
        } else {
            flush();
        }
        i += len;
    }
    flush();
}

}  // namespace detail

/// Appends the word tokens of `text` to `out`.
///
/// Whitespace-delimited chunks containing "://" are URLs and dropped whole.
/// An `@` starts a mention that runs to the end of the handle and is dropped.
/// `#` is a separator, so hashtags keep their bare word. Everything else splits
/// on characters that are not letters, digits or an intra-word apostrophe.
inline void tokenize_into(std::string_view text, std::vector<std::string>& out) {
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && detail::is_space(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !detail::is_space(static_cast<unsigned char>(text[j]))) ++j;
        if (j == i) break;
        std::string_view chunk = text.substr(i, j - i);
        i = j;
        if (chunk.find("://") != std::string_view::npos) continue;
        // Remove @handles inside the chunk.
        std::size_t at = chunk.find('@');
        while (at != std::string_view::npos) {
            detail::split_chunk(chunk.substr(0, at), out);
            std::size_t k = at + 1;
            while (k < chunk.size()) {
                const auto c = static_cast<unsigned char>(chunk[k]);
                const bool handle_char = detail::is_ascii_alnum(c) || c == '_' || c == '-' || c >= 0x80 ||
                                         (c == '.' && k + 1 < chunk.size() &&
                                          detail::is_ascii_alnum(static_cast<unsigned char>(chunk[k + 1])));
                if (!handle_char) break;
                ++k;
            }
            chunk = chunk.substr(k);
            at = chunk.find('@');
        }
        detail::split_chunk(chunk, out);
    }
}

inline TokenSequence tokenize(std::string_view text) {
    TokenSequence seq;
    tokenize_into(text, seq.tokens);
    return seq;
}

/// Pluggable word-category dictionary. Immutable once built.
class CategoryLexicon {
public:
    struct Category {
        std::string name;
        std::vector<std::string> entries;
        bool noncontent = false;
    };

    CategoryLexicon() = default;

    CategoryLexicon(std::string name, std::vector<Category> categories) : name_(std::move(name)) {
        auto names = std::make_shared<std::vector<std::string>>();
        for (std::size_t c = 0; c < categories.size(); ++c) {
            const auto& cat = categories[c];
            if (cat.name.empty()) throw ValidationError("lexicon: empty category name");
            if (std::find(names->begin(), names->end(), cat.name) != names->end())
                throw ValidationError("lexicon: duplicate category: " + cat.name);
            names->push_back(cat.name);
            if (cat.noncontent) noncontent_.push_back(c);
            for (const auto& raw : cat.entries) {
                if (raw.empty() || raw == "*") throw ValidationError("lexicon: empty entry in " + cat.name);
                for (char ch : raw)
                    if (ch >= 'A' && ch <= 'Z') throw ValidationError("lexicon: entry not lowercase: " + raw);
                const auto cat_id = static_cast<std::uint32_t>(c);
                if (raw.back() == '*') {
                    const std::string stem = raw.substr(0, raw.size() - 1);
                    add_unique(prefixes_[stem], cat_id);
                    max_prefix_ = std::max(max_prefix_, stem.size());
                } else {
                    add_unique(literals_[raw], cat_id);
                }
            }
        }
        names_ = std::move(names);
        categories_ = std::move(categories);
    }

    static CategoryLexicon parse(std::istream& in, std::string name) {
        std::vector<Category> cats;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto first = line.find_first_not_of(" \t");
            if (first == std::string::npos) continue;
            std::string_view body(line);
            body.remove_prefix(first);
            while (!body.empty() && (body.back() == ' ' || body.back() == '\t')) body.remove_suffix(1);
            if (body.front() == '#') continue;
            if (body.front() == '%') {
                std::istringstream hs{std::string(body)};
                std::string tag, cat_name, flag;
                hs >> tag >> cat_name;
                if (tag != "%category" || cat_name.empty())
                    throw ValidationError("lexicon " + name + " line " + std::to_string(lineno) +
                                          ": expected '%category <name> [noncontent]'");
                Category cat;
                cat.name = cat_name;
                while (hs >> flag) {
                    if (flag == "noncontent")
                        cat.noncontent = true;
                    else
                        throw ValidationError("lexicon " + name + " line " + std::to_string(lineno) +
                                              ": unknown flag '" + flag + "'");
                }
                cats.push_back(std::move(cat));
                continue;
            }
            if (cats.empty())
                throw ValidationError("lexicon " + name + " line " + std::to_string(lineno) +
                                      ": entry before any %category header");
            cats.back().entries.emplace_back(body);
        }
        return CategoryLexicon(std::move(name), std::move(cats));
    }

    static CategoryLexicon load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open lexicon: " + path);
        auto stem = path.substr(path.find_last_of('/') == std::string::npos ? 0 : path.find_last_of('/') + 1);
        if (const auto dot = stem.find('.'); dot != std::string::npos) stem.resize(dot);
        return parse(in, stem);
    }

    const std::string& name() const { return name_; }
    std::size_t size() const { return categories_.size(); }
    const std::vector<Category>& categories() const { return categories_; }
    const std::vector<std::string>& category_names() const { return *names_; }
    std::shared_ptr<const std::vector<std::string>> shared_names() const { return names_; }
    const std::vector<std::size_t>& noncontent_indices() const { return noncontent_; }

    std::optional<std::size_t> index_of(std::string_view category) const {
        for (std::size_t i = 0; i < names_->size(); ++i)
            if ((*names_)[i] == category) return i;
        return std::nullopt;
    }

    /// Categories matched by `token`, deduplicated, in ascending index order.
    void match(std::string_view token, std::vector<std::uint32_t>& out) const {
        out.clear();
        if (const auto it = literals_.find(std::string(token)); it != literals_.end())
            out.insert(out.end(), it->second.begin(), it->second.end());
        if (!prefixes_.empty()) {
            std::string key;
            const std::size_t limit = std::min(token.size(), max_prefix_);
            for (std::size_t len = 0; len <= limit; ++len) {
                key.assign(token.substr(0, len));
                if (const auto it = prefixes_.find(key); it != prefixes_.end())
                    out.insert(out.end(), it->second.begin(), it->second.end());
            }
        }
        std::sort(out.begin(), out.end());
        out.erase(std::unique(out.begin(), out.end()), out.end());
    }

    bool matches_any(std::string_view token) const {
        std::vector<std::uint32_t> tmp;
        match(token, tmp);
        return !tmp.empty();
    }

private:
    static void add_unique(std::vector<std::uint32_t>& v, std::uint32_t c) {
        if (std::find(v.begin(), v.end(), c) == v.end()) v.push_back(c);
    }

    std::string name_;
    std::vector<Category> categories_;
    std::shared_ptr<const std::vector<std::string>> names_ = std::make_shared<std::vector<std::string>>();
    std::vector<std::size_t> noncontent_;
    std::unordered_map<std::string, std::vector<std::uint32_t>> literals_;
    std::unordered_map<std::string, std::vector<std::uint32_t>> prefixes_;
    std::size_t max_prefix_ = 0;
};

/// The categories the categorical-dynamic index needs.
inline const std::array<std::string_view, 8> kCdiCategories = {
    "article", "preposition", "ppron", "ipron", "auxverb", "conjunction", "adverb", "negation"};

inline void require_cdi_categories(const CategoryLexicon& lex) {
    for (auto cat : kCdiCategories)
        if (!lex.index_of(cat))
            throw ValidationError("lexicon " + lex.name() + " lacks CDI category: " + std::string(cat));
}

/// Per-100-word category rates over a token pool.
struct CategoryRates {
    std::shared_ptr<const std::vector<std::string>> names;
    std::vector<double> rates;
    std::size_t total_words = 0;

    std::optional<double> rate(std::string_view category) const {
        if (!names) return std::nullopt;
        for (std::size_t i = 0; i < names->size(); ++i)
            if ((*names)[i] == category) return rates[i];
        return std::nullopt;
    }
};

/// Streaming category counter; pools tokens from many posts before rating.
class CategoryCounter {
public:
    explicit CategoryCounter(const CategoryLexicon& lex) : lex_(&lex), counts_(lex.size(), 0) {}

    void add(std::string_view token) {
        lex_->match(token, scratch_);
        for (auto c : scratch_) ++counts_[c];
        ++total_;
    }
    void add(const TokenSequence& seq) {
        for (const auto& t : seq.tokens) add(t);
    }

    std::size_t total_words() const { return total_; }
    const std::vector<std::size_t>& counts() const { return counts_; }

    CategoryRates rates() const {
        if (total_ == 0) throw ValidationError("empty document");
        CategoryRates r;
        r.names = lex_->shared_names();
        r.total_words = total_;
        r.rates.resize(counts_.size());
        for (std::size_t i = 0; i < counts_.size(); ++i)
            r.rates[i] = 100.0 * static_cast<double>(counts_[i]) / static_cast<double>(total_);
        return r;
    }

private:
    const CategoryLexicon* lex_;
    std::vector<std::size_t> counts_;
    std::size_t total_ = 0;
    std::vector<std::uint32_t> scratch_;
};

inline CategoryRates category_rates(const TokenSequence& tokens, const CategoryLexicon& lex) {
    if (tokens.empty()) throw ValidationError("empty document");
    CategoryCounter counter(lex);
    counter.add(tokens);
    return counter.rates();
}

/// Rates projected onto the lexicon's noncontent categories, in declared order.
inline std::vector<double> noncontent_vector(const CategoryRates& rates, const CategoryLexicon& lex) {
    if (rates.rates.size() != lex.size())
        throw ValidationError("category rates do not belong to lexicon " + lex.name());
    std::vector<double> v;
    v.reserve(lex.noncontent_indices().size());
    for (auto idx : lex.noncontent_indices()) v.push_back(rates.rates[idx]);
    return v;
}

}  // namespace feedshift::lexicon
