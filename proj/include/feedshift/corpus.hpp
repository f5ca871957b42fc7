#pragma once

// Event-log data model: posts, feed engagements, per-user timelines and the
// baseline / post-exposure split around an anchor.
//
// Input is JSON Lines with a "type" discriminator:
//
//   {"type":"post","post_id":"p1","author_id":"u1","timestamp":1700000000,
//    "text":"...","language_tag":"en"}
//   {"type":"engagement","user_id":"u1","feed_id":"news","kind":"like",
//    "timestamp":1700000100,"target_post_id":"p9"}
//
// Only original PostRecords form a user's timeline; reposts are engagements.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "feedshift/common.hpp"

namespace feedshift::corpus {

enum class EngagementKind : std::uint8_t { post, comment, quote, repost, like, bookmark };

inline constexpr std::array<EngagementKind, 6> kAllKinds = {EngagementKind::post,   EngagementKind::comment,
                                                            EngagementKind::quote,  EngagementKind::repost,
                                                            EngagementKind::like,   EngagementKind::bookmark};

inline std::string_view kind_name(EngagementKind k) {
    static constexpr std::array<std::string_view, 6> names = {"post", "comment", "quote",
                                                               "repost", "like", "bookmark"};
    return names[static_cast<std::size_t>(k)];
}

inline std::optional<EngagementKind> parse_kind(std::string_view s) {
    for (auto k : kAllKinds)
        if (kind_name(k) == s) return k;
    return std::nullopt;
}

struct PostRecord {
    std::string post_id;
    std::string author_id;
    Timestamp timestamp = 0;
    std::string text;
    std::optional<std::string> language_tag;

    bool operator==(const PostRecord&) const = default;
};

struct EngagementRecord {
    std::string user_id;
    std::string feed_id;
    EngagementKind kind = EngagementKind::like;
    Timestamp timestamp = 0;
    std::optional<std::string> target_post_id;

    bool operator==(const EngagementRecord&) const = default;
};

struct UserTimeline {
    std::string user_id;
    std::vector<PostRecord> posts;  // ascending (timestamp, post_id)
    Timestamp first_seen = 0;       // earliest post or engagement
    Timestamp last_seen = 0;
};

struct PeriodSplit {
    Timestamp anchor = 0;
    std::vector<PostRecord> baseline;       // timestamp < anchor
    std::vector<PostRecord> post_exposure;  // timestamp >= anchor
};

/// Inclusive time window; absent bounds are open.
struct TimeWindow {
    std::optional<Timestamp> start;
    std::optional<Timestamp> end;

    bool contains(Timestamp t) const { return (!start || t >= *start) && (!end || t <= *end); }
    bool unbounded() const { return !start && !end; }
};

inline TimeWindow parse_window(std::string_view spec) {
    const auto parts = split_view(spec, ',');
    if (parts.size() != 2) throw ValidationError("window must be 'start,end': " + std::string(spec));
    TimeWindow w;
    if (!parts[0].empty()) w.start = std::stoll(std::string(parts[0]));
    if (!parts[1].empty()) w.end = std::stoll(std::string(parts[1]));
    if (w.start && w.end && *w.start > *w.end) throw ValidationError("window start after end");
    return w;
}

namespace detail {

inline bool post_less(const PostRecord& a, const PostRecord& b) {
    return std::tie(a.author_id, a.timestamp, a.post_id) < std::tie(b.author_id, b.timestamp, b.post_id);
}

inline auto engagement_key(const EngagementRecord& e) {
    return std::make_tuple(std::cref(e.user_id), e.timestamp, e.kind, std::cref(e.feed_id),
                           e.target_post_id.has_value(), std::cref(e.target_post_id ? *e.target_post_id : e.feed_id));
}

inline bool engagement_less(const EngagementRecord& a, const EngagementRecord& b) {
    return engagement_key(a) < engagement_key(b);
}

// Full-content ordering used to pick deterministically among duplicate post ids.
inline bool post_content_less(const PostRecord& a, const PostRecord& b) {
    return std::tie(a.post_id, a.author_id, a.timestamp, a.text, a.language_tag) <
           std::tie(b.post_id, b.author_id, b.timestamp, b.text, b.language_tag);
}

}  // namespace detail

/// Canonically ordered, indexed, immutable event store.
class EventStore {
public:
    EventStore() = default;

    /// Builds a store. Post ids must be unique.
    EventStore(std::vector<PostRecord> posts, std::vector<EngagementRecord> engagements)
        : posts_(std::move(posts)), engagements_(std::move(engagements)) {
        std::sort(posts_.begin(), posts_.end(), detail::post_less);
        std::sort(engagements_.begin(), engagements_.end(), detail::engagement_less);
        post_index_.reserve(posts_.size());
        for (std::size_t i = 0; i < posts_.size(); ++i)
            if (!post_index_.emplace(posts_[i].post_id, i).second)
                throw ValidationError("duplicate post_id: " + posts_[i].post_id);
        for (std::size_t i = 0; i < posts_.size();) {
            std::size_t j = i;
            while (j < posts_.size() && posts_[j].author_id == posts_[i].author_id) ++j;
            post_ranges_.emplace(posts_[i].author_id, std::make_pair(i, j));
            users_.push_back(posts_[i].author_id);
            i = j;
        }
        for (std::size_t i = 0; i < engagements_.size();) {
            std::size_t j = i;
            while (j < engagements_.size() && engagements_[j].user_id == engagements_[i].user_id) ++j;
            engagement_ranges_.emplace(engagements_[i].user_id, std::make_pair(i, j));
            users_.push_back(engagements_[i].user_id);
            i = j;
        }
        for (std::size_t i = 0; i < engagements_.size(); ++i) feed_index_[engagements_[i].feed_id].push_back(i);
        std::sort(users_.begin(), users_.end());
        users_.erase(std::unique(users_.begin(), users_.end()), users_.end());
    }

    std::size_t user_count() const { return users_.size(); }
    std::size_t post_count() const { return posts_.size(); }
    std::size_t engagement_count() const { return engagements_.size(); }

    /// All user ids (post authors and engaging users), sorted.
    const std::vector<std::string>& users() const { return users_; }
    std::span<const PostRecord> posts() const { return posts_; }
    std::span<const EngagementRecord> engagements() const { return engagements_; }

    std::span<const PostRecord> posts_of(std::string_view user) const {
        const auto it = post_ranges_.find(std::string(user));
        if (it == post_ranges_.end()) return {};
        return std::span(posts_).subspan(it->second.first, it->second.second - it->second.first);
    }

    std::span<const EngagementRecord> engagements_of(std::string_view user) const {
        const auto it = engagement_ranges_.find(std::string(user));
        if (it == engagement_ranges_.end()) return {};
        return std::span(engagements_).subspan(it->second.first, it->second.second - it->second.first);
    }

    /// Engagements on a feed, in canonical order.
    std::vector<const EngagementRecord*> engagements_on(std::string_view feed) const {
        std::vector<const EngagementRecord*> out;
        if (const auto it = feed_index_.find(std::string(feed)); it != feed_index_.end())
            for (auto i : it->second) out.push_back(&engagements_[i]);
        return out;
    }

    const PostRecord* find_post(std::string_view post_id) const {
        const auto it = post_index_.find(std::string(post_id));
        return it == post_index_.end() ? nullptr : &posts_[it->second];
    }

    bool has_user(std::string_view user) const {
        return std::binary_search(users_.begin(), users_.end(), user);
    }

    /// Earliest post or engagement of a user.
    std::optional<Timestamp> first_seen(std::string_view user) const {
        std::optional<Timestamp> t;
        const auto p = posts_of(user);
        const auto e = engagements_of(user);
        if (!p.empty()) t = p.front().timestamp;
        for (const auto& rec : p) t = std::min(*t, rec.timestamp);
        if (!e.empty()) t = t ? std::min(*t, e.front().timestamp) : e.front().timestamp;
        return t;
    }

    UserTimeline timeline(std::string_view user) const {
        UserTimeline tl;
        tl.user_id = std::string(user);
        const auto p = posts_of(user);
        tl.posts.assign(p.begin(), p.end());
        const auto e = engagements_of(user);
        bool any = false;
        auto see = [&](Timestamp t) {
            if (!any) {
                tl.first_seen = tl.last_seen = t;
                any = true;
            } else {
                tl.first_seen = std::min(tl.first_seen, t);
                tl.last_seen = std::max(tl.last_seen, t);
            }
        };
        for (const auto& rec : p) see(rec.timestamp);
        for (const auto& rec : e) see(rec.timestamp);
        return tl;
    }

    /// A new store holding only the records inside `window`.
    EventStore restricted(const TimeWindow& window) const {
        if (window.unbounded()) return *this;
        std::vector<PostRecord> posts;
        std::vector<EngagementRecord> engagements;
        for (const auto& p : posts_)
            if (window.contains(p.timestamp)) posts.push_back(p);
        for (const auto& e : engagements_)
            if (window.contains(e.timestamp)) engagements.push_back(e);
        return EventStore(std::move(posts), std::move(engagements));
    }

    /// Time span covered by all records.
    std::optional<std::pair<Timestamp, Timestamp>> span() const {
        std::optional<std::pair<Timestamp, Timestamp>> s;
        auto see = [&](Timestamp t) {
            if (!s)
                s = std::make_pair(t, t);
            else
                s = std::make_pair(std::min(s->first, t), std::max(s->second, t));
        };
        for (const auto& p : posts_) see(p.timestamp);
        for (const auto& e : engagements_) see(e.timestamp);
        return s;
    }

    bool operator==(const EventStore& o) const { return posts_ == o.posts_ && engagements_ == o.engagements_; }

private:
    std::vector<PostRecord> posts_;
    std::vector<EngagementRecord> engagements_;
    std::vector<std::string> users_;
    std::unordered_map<std::string, std::size_t> post_index_;
    std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> post_ranges_;
    std::unordered_map<std::string, std::pair<std::size_t, std::size_t>> engagement_ranges_;
    std::unordered_map<std::string, std::vector<std::size_t>> feed_index_;
};

enum class IngestMode { lenient, strict };

struct Reject {
    std::string source;
    std::size_t line = 0;
    std::string reason;
};

struct IngestReport {
    std::size_t accepted = 0;
    std::size_t rejected = 0;
    std::vector<Reject> rejects;
};

/// Incremental JSON-lines ingester. Feed it lines from any number of sources
/// (shards), then call finish() for a canonical store. The result does not
/// depend on the order lines were fed in.
class Ingester {
public:
    explicit Ingester(IngestMode mode = IngestMode::lenient) : mode_(mode) {}

    void add_line(std::string_view line, std::size_t lineno, std::string_view source = "<stream>") {
        if (line.find_first_not_of(" \t\r\n") == std::string_view::npos) return;
        try {
            parse_line(line, lineno, source);
        } catch (const RejectLine& r) {
            reject(source, lineno, r.reason);
        }
    }

    void add_stream(std::istream& in, std::string_view source = "<stream>") {
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) add_line(line, ++lineno, source);
    }

    /// Reads a .jsonl file, transparently gunzipping files ending in ".gz".
    void add_file(const std::string& path) {
        if (path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0) {
            gzFile gz = gzopen(path.c_str(), "rb");
            if (gz == nullptr) throw ValidationError("cannot open event log: " + path);
            std::string pending;
            std::size_t lineno = 0;
            char buf[1 << 16];
            int got = 0;
            while ((got = gzread(gz, buf, sizeof buf)) > 0) {
                pending.append(buf, static_cast<std::size_t>(got));
                std::size_t start = 0;
                for (auto nl = pending.find('\n'); nl != std::string::npos; nl = pending.find('\n', start)) {
                    add_line(std::string_view(pending).substr(start, nl - start), ++lineno, path);
                    start = nl + 1;
                }
                pending.erase(0, start);
            }
            const bool failed = got < 0;
            gzclose(gz);
            if (failed) throw ValidationError("corrupt gzip event log: " + path);
            if (!pending.empty()) add_line(pending, ++lineno, path);
            return;
        }
        std::ifstream in(path);
        if (!in) throw ValidationError("cannot open event log: " + path);
        add_stream(in, path);
    }

    EventStore finish(IngestReport& report) {
        // Duplicate post ids: keep the smallest record by content, reject the rest.
        std::vector<std::size_t> order(posts_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (detail::post_content_less(posts_[a].first, posts_[b].first)) return true;
            if (detail::post_content_less(posts_[b].first, posts_[a].first)) return false;
            return std::tie(posts_[a].second.source, posts_[a].second.line) <
                   std::tie(posts_[b].second.source, posts_[b].second.line);
        });
        std::vector<PostRecord> kept;
        kept.reserve(posts_.size());
        for (std::size_t k = 0; k < order.size(); ++k) {
            auto& [rec, where] = posts_[order[k]];
            if (!kept.empty() && kept.back().post_id == rec.post_id) {
                reject(where.source, where.line, "duplicate post_id: " + rec.post_id);
                continue;
            }
            kept.push_back(std::move(rec));
        }
        std::vector<EngagementRecord> engagements;
        engagements.reserve(engagements_.size());
        for (auto& e : engagements_) engagements.push_back(std::move(e));
        posts_.clear();
        engagements_.clear();
        report.accepted = kept.size() + engagements.size();
        report.rejected = rejects_.size();
        std::sort(rejects_.begin(), rejects_.end(), [](const Reject& a, const Reject& b) {
            return std::tie(a.source, a.line, a.reason) < std::tie(b.source, b.line, b.reason);
        });
        report.rejects = std::move(rejects_);
        rejects_.clear();
        return EventStore(std::move(kept), std::move(engagements));
    }

private:
    struct RejectLine {
        std::string reason;
    };
    struct Where {
        std::string source;
        std::size_t line;
    };

    void reject(std::string_view source, std::size_t lineno, std::string reason) {
        if (mode_ == IngestMode::strict)
            throw ValidationError(std::string(source) + ":" + std::to_string(lineno) + ": " + reason);
        rejects_.push_back({std::string(source), lineno, std::move(reason)});
    }

    static const nlohmann::json& require(const nlohmann::json& obj, const char* field) {
        const auto it = obj.find(field);
        if (it == obj.end()) throw RejectLine{std::string("missing field: ") + field};
        return *it;
    }

    static std::string require_string(const nlohmann::json& obj, const char* field) {
        const auto& v = require(obj, field);
        if (!v.is_string()) throw RejectLine{std::string("invalid field: ") + field};
        return v.get<std::string>();
    }

    static std::optional<std::string> optional_string(const nlohmann::json& obj, const char* field) {
        const auto it = obj.find(field);
        if (it == obj.end() || it->is_null()) return std::nullopt;
        if (!it->is_string()) throw RejectLine{std::string("invalid field: ") + field};
        return it->get<std::string>();
    }

    static Timestamp require_timestamp(const nlohmann::json& obj) {
        const auto& v = require(obj, "timestamp");
        if (!v.is_number()) throw RejectLine{"invalid field: timestamp"};
        const double t = v.get<double>();
        if (!std::isfinite(t) || t < 0) throw RejectLine{"invalid field: timestamp"};
        if (v.is_number_integer()) return v.get<Timestamp>();
        return static_cast<Timestamp>(std::trunc(t));
    }

    void parse_line(std::string_view line, std::size_t lineno, std::string_view source) {
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw RejectLine{"malformed JSON"};
        }
        if (!obj.is_object()) throw RejectLine{"not a JSON object"};
        const auto type = require_string(obj, "type");
        if (type == "post") {
            PostRecord p;
            p.post_id = require_string(obj, "post_id");
            p.author_id = require_string(obj, "author_id");
            p.timestamp = require_timestamp(obj);
            p.text = require_string(obj, "text");
            p.language_tag = optional_string(obj, "language_tag");
            if (p.post_id.empty()) throw RejectLine{"invalid field: post_id"};
            if (p.author_id.empty()) throw RejectLine{"invalid field: author_id"};
            posts_.emplace_back(std::move(p), Where{std::string(source), lineno});
        } else if (type == "engagement") {
            EngagementRecord e;
            e.user_id = require_string(obj, "user_id");
            e.feed_id = require_string(obj, "feed_id");
            const auto kind = parse_kind(require_string(obj, "kind"));
            if (!kind) throw RejectLine{"invalid field: kind"};
            e.kind = *kind;
            e.timestamp = require_timestamp(obj);
            e.target_post_id = optional_string(obj, "target_post_id");
            if (e.user_id.empty()) throw RejectLine{"invalid field: user_id"};
            if (e.feed_id.empty()) throw RejectLine{"invalid field: feed_id"};
            engagements_.push_back(std::move(e));
        } else {
            throw RejectLine{"unknown record type: " + type};
        }
    }

    IngestMode mode_;
    std::vector<std::pair<PostRecord, Where>> posts_;
    std::vector<EngagementRecord> engagements_;
    std::vector<Reject> rejects_;
};

/// Ingests a JSON-lines stream.
inline EventStore ingest_events(std::istream& lines, IngestReport& report, IngestMode mode = IngestMode::lenient) {
    Ingester ing(mode);
    ing.add_stream(lines);
    return ing.finish(report);
}

inline EventStore ingest_files(std::span<const std::string> paths, IngestReport& report,
                               IngestMode mode = IngestMode::lenient) {
    Ingester ing(mode);
    for (const auto& p : paths) ing.add_file(p);
    return ing.finish(report);
}

inline std::string post_to_json_line(const PostRecord& p) {
    nlohmann::ordered_json j;
    j["type"] = "post";
    j["post_id"] = p.post_id;
    j["author_id"] = p.author_id;
    j["timestamp"] = p.timestamp;
    j["text"] = p.text;
    if (p.language_tag) j["language_tag"] = *p.language_tag;
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

inline std::string engagement_to_json_line(const EngagementRecord& e) {
    nlohmann::ordered_json j;
    j["type"] = "engagement";
    j["user_id"] = e.user_id;
    j["feed_id"] = e.feed_id;
    j["kind"] = kind_name(e.kind);
    j["timestamp"] = e.timestamp;
    if (e.target_post_id) j["target_post_id"] = *e.target_post_id;
    return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
}

/// Serializes a store into `dir`: posts.jsonl, engagements.jsonl and
/// manifest.json (record counts plus a content hash).
inline void write_store(const EventStore& store, const std::string& dir) {
    std::filesystem::create_directories(dir);
    std::string posts;
    for (const auto& p : store.posts()) {
        posts += post_to_json_line(p);
        posts += '\n';
    }
    std::string engagements;
    for (const auto& e : store.engagements()) {
        engagements += engagement_to_json_line(e);
        engagements += '\n';
    }
    write_file(dir + "/posts.jsonl", posts);
    write_file(dir + "/engagements.jsonl", engagements);
    nlohmann::ordered_json m;
    m["format"] = "feedshift-store/1";
    m["users"] = store.user_count();
    m["posts"] = store.post_count();
    m["engagements"] = store.engagement_count();
    m["content_hash"] = hex64(fnv1a64(engagements, fnv1a64(posts)));
    write_file(dir + "/manifest.json", m.dump(2) + "\n");
}

/// Loads a store written by write_store(), verifying the manifest hash.
inline EventStore read_store(const std::string& dir) {
    const auto manifest = nlohmann::json::parse(read_file(dir + "/manifest.json"));
    const std::string posts = read_file(dir + "/posts.jsonl");
    const std::string engagements = read_file(dir + "/engagements.jsonl");
    if (manifest.value("content_hash", "") != hex64(fnv1a64(engagements, fnv1a64(posts))))
        throw StaleInputError("store content hash mismatch in " + dir);
    Ingester ing(IngestMode::strict);
    std::istringstream ps(posts);
    ing.add_stream(ps, dir + "/posts.jsonl");
    std::istringstream es(engagements);
    ing.add_stream(es, dir + "/engagements.jsonl");
    IngestReport report;
    return ing.finish(report);
}

/// Partitions a timeline around `anchor`: posts strictly before go to the
/// baseline, posts at or after the anchor to the post-exposure period.
inline PeriodSplit split_periods(const UserTimeline& timeline, Timestamp anchor) {
    PeriodSplit split;
    split.anchor = anchor;
    for (const auto& p : timeline.posts) (p.timestamp < anchor ? split.baseline : split.post_exposure).push_back(p);
    return split;
}

/// Optional fallback for posts without a language tag.
class LanguageDetector {
public:
    virtual ~LanguageDetector() = default;
    virtual std::optional<std::string> detect(std::string_view text) const = 0;
};

struct LanguageFilterResult {
    std::vector<PostRecord> posts;
    std::size_t dropped_untagged = 0;
    std::size_t dropped_other = 0;
};

inline LanguageFilterResult filter_language(std::span<const PostRecord> posts, std::string_view tag,
                                            const LanguageDetector* detector = nullptr) {
    if (tag.empty()) throw ValidationError("language tag must be non-empty");
    LanguageFilterResult r;
    for (const auto& p : posts) {
        std::optional<std::string> lang = p.language_tag;
        if (!lang && detector != nullptr) lang = detector->detect(p.text);
        if (!lang) {
            ++r.dropped_untagged;
            continue;
        }
        if (*lang == tag)
            r.posts.push_back(p);
        else
            ++r.dropped_other;
    }
    return r;
}

}  // namespace feedshift::corpus
