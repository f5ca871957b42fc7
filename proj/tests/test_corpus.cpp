#include <gtest/gtest.h>
#include <zlib.h>

#include <algorithm>
#include <random>
#include <sstream>

#include "feedshift/corpus.hpp"
#include "helpers.hpp"

using namespace feedshift;
using namespace feedshift::corpus;

namespace {

EventStore ingest_text(const std::string& text, IngestReport& rep, IngestMode mode = IngestMode::lenient) {
    std::istringstream in(text);
    return ingest_events(in, rep, mode);
}

PostRecord post(std::string id, std::string author, Timestamp t, std::string lang = "en") {
    return {std::move(id), std::move(author), t, "text " + std::to_string(t), std::move(lang)};
}

std::string sample_log() {
    return R"({"type":"post","post_id":"p1","author_id":"alice","timestamp":100,"text":"hello there","language_tag":"en"}
{"type":"engagement","user_id":"alice","feed_id":"news","kind":"like","timestamp":150,"target_post_id":"p9"}
{"type":"post","post_id":"p2","author_id":"bob","timestamp":90.7,"text":"olá","language_tag":"pt"}
{"type":"engagement","user_id":"bob","feed_id":"art","kind":"repost","timestamp":40}
{"type":"post","post_id":"p3","author_id":"alice","timestamp":100,"text":"same second"}
)";
}

}  // namespace

TEST(Ingest, EmptyStream) {
    IngestReport rep;
    const auto s = ingest_text("", rep);
    EXPECT_EQ(s.user_count(), 0u);
    EXPECT_EQ(s.post_count(), 0u);
    EXPECT_EQ(s.engagement_count(), 0u);
    EXPECT_EQ(rep.accepted, 0u);
    EXPECT_EQ(rep.rejected, 0u);
}

TEST(Ingest, OnePostOneLike) {
    IngestReport rep;
    const auto s = ingest_text(
        R"({"type":"post","post_id":"p","author_id":"u","timestamp":1,"text":"hi"}
{"type":"engagement","user_id":"u","feed_id":"f","kind":"like","timestamp":2})",
        rep);
    EXPECT_EQ(s.user_count(), 1u);
    EXPECT_EQ(s.post_count(), 1u);
    EXPECT_EQ(s.engagement_count(), 1u);
    EXPECT_EQ(rep.accepted, 2u);
}

TEST(Ingest, MissingTimestampRejectedWithLineNumber) {
    IngestReport rep;
    const auto s = ingest_text(
        R"({"type":"post","post_id":"p","author_id":"u","timestamp":1,"text":"hi"}
{"type":"post","post_id":"q","author_id":"u","text":"no time"})",
        rep);
    EXPECT_EQ(s.post_count(), 1u);
    ASSERT_EQ(rep.rejects.size(), 1u);
    EXPECT_EQ(rep.rejects[0].line, 2u);
    EXPECT_EQ(rep.rejects[0].reason, "missing field: timestamp");
}

TEST(Ingest, MalformedLinesAndStrictMode) {
    const std::string text = "not json\n{\"type\":\"engagement\",\"user_id\":\"u\",\"feed_id\":\"f\",\"kind\":\"wave\",\"timestamp\":1}\n"
                             "{\"type\":\"post\",\"post_id\":\"p\",\"author_id\":\"u\",\"timestamp\":-5,\"text\":\"x\"}\n";
    IngestReport rep;
    const auto s = ingest_text(text, rep);
    EXPECT_EQ(s.post_count() + s.engagement_count(), 0u);
    ASSERT_EQ(rep.rejects.size(), 3u);
    EXPECT_EQ(rep.rejects[0].reason, "malformed JSON");
    EXPECT_EQ(rep.rejects[1].reason, "invalid field: kind");
    EXPECT_EQ(rep.rejects[2].reason, "invalid field: timestamp");
    IngestReport rep2;
    EXPECT_THROW(ingest_text(text, rep2, IngestMode::strict), ValidationError);
}

TEST(Ingest, FractionalTimestampsTruncate) {
    IngestReport rep;
    const auto s = ingest_text(sample_log(), rep);
    ASSERT_NE(s.find_post("p2"), nullptr);
    EXPECT_EQ(s.find_post("p2")->timestamp, 90);
}

TEST(Ingest, DuplicatePostIdKeepsOneAndRejectsRest) {
    IngestReport rep;
    const auto s = ingest_text(
        R"({"type":"post","post_id":"p","author_id":"u","timestamp":5,"text":"b"}
{"type":"post","post_id":"p","author_id":"u","timestamp":5,"text":"a"})",
        rep);
    ASSERT_EQ(s.post_count(), 1u);
    EXPECT_EQ(s.find_post("p")->text, "a");
    ASSERT_EQ(rep.rejects.size(), 1u);
    EXPECT_EQ(rep.rejects[0].line, 1u);
}

TEST(Ingest, OrderInsensitive) {
    std::vector<std::string> lines;
    std::istringstream in(sample_log());
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    IngestReport rep;
    const auto ref = ingest_text(sample_log(), rep);
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        std::shuffle(lines.begin(), lines.end(), rng);
        std::string text;
        for (const auto& l : lines) text += l + "\n";
        IngestReport r;
        EXPECT_TRUE(ingest_text(text, r) == ref);
    }
}

TEST(Ingest, SerializeRoundTrip) {
    IngestReport rep;
    const auto s = ingest_text(sample_log(), rep);
    std::string text;
    for (const auto& p : s.posts()) text += post_to_json_line(p) + "\n";
    for (const auto& e : s.engagements()) text += engagement_to_json_line(e) + "\n";
    IngestReport r2;
    EXPECT_TRUE(ingest_text(text, r2) == s);

    fstest::TempDir dir("store");
    write_store(s, dir / "store");
    EXPECT_TRUE(read_store(dir / "store") == s);
    write_file(dir / "store/posts.jsonl", read_file(dir / "store/posts.jsonl") + "\n ");
    EXPECT_THROW(read_store(dir / "store"), StaleInputError);
}

TEST(Ingest, GzipInput) {
    fstest::TempDir dir("gz");
    const auto path = dir / "events.jsonl.gz";
    gzFile gz = gzopen(path.c_str(), "wb");
    const auto text = sample_log();
    gzwrite(gz, text.data(), static_cast<unsigned>(text.size()));
    gzclose(gz);
    Ingester ing;
    ing.add_file(path);
    IngestReport rep;
    const auto s = ing.finish(rep);
    IngestReport r2;
    EXPECT_TRUE(s == ingest_text(text, r2));
}

TEST(Store, QueriesAndTimeline) {
    IngestReport rep;
    const auto s = ingest_text(sample_log(), rep);
    EXPECT_EQ(s.users(), (std::vector<std::string>{"alice", "bob"}));
    const auto tl = s.timeline("alice");
    ASSERT_EQ(tl.posts.size(), 2u);
    EXPECT_EQ(tl.posts[0].post_id, "p1");  // equal timestamps: post_id order
    EXPECT_EQ(tl.posts[1].post_id, "p3");
    EXPECT_EQ(tl.first_seen, 100);
    EXPECT_EQ(tl.last_seen, 150);
    EXPECT_EQ(s.timeline("bob").first_seen, 40);
    EXPECT_EQ(s.engagements_on("news").size(), 1u);
    EXPECT_TRUE(s.engagements_on("none").empty());
    const auto r = s.restricted(parse_window("95,"));
    EXPECT_EQ(r.post_count(), 2u);
    EXPECT_EQ(r.engagement_count(), 1u);
    EXPECT_THROW(parse_window("5"), ValidationError);
    EXPECT_THROW(parse_window("9,1"), ValidationError);
}

TEST(SplitPeriods, StrictBeforeRule) {
    UserTimeline tl;
    tl.posts = {post("a", "u", 10), post("b", "u", 20), post("c", "u", 30)};
    const auto s = split_periods(tl, 20);
    ASSERT_EQ(s.baseline.size(), 1u);
    EXPECT_EQ(s.baseline[0].timestamp, 10);
    ASSERT_EQ(s.post_exposure.size(), 2u);
    EXPECT_EQ(s.post_exposure[0].timestamp, 20);
    EXPECT_EQ(s.post_exposure[1].timestamp, 30);
    EXPECT_TRUE(split_periods(tl, 5).baseline.empty());
    EXPECT_TRUE(split_periods(tl, 31).post_exposure.empty());
}

TEST(SplitPeriods, AlwaysAPartition) {
    UserTimeline tl;
    std::mt19937_64 rng(3);
    for (int i = 0; i < 50; ++i) tl.posts.push_back(post("p" + std::to_string(i), "u", static_cast<Timestamp>(rng() % 100)));
    std::sort(tl.posts.begin(), tl.posts.end(), detail::post_less);
    for (Timestamp a = -1; a <= 101; ++a) {
        const auto s = split_periods(tl, a);
        EXPECT_EQ(s.baseline.size() + s.post_exposure.size(), tl.posts.size());
        for (const auto& p : s.baseline) EXPECT_LT(p.timestamp, a);
        for (const auto& p : s.post_exposure) EXPECT_GE(p.timestamp, a);
    }
}

TEST(FilterLanguage, Examples) {
    std::vector<PostRecord> posts = {post("1", "u", 1, "en"), post("2", "u", 2, "pt"), post("3", "u", 3, "en")};
    auto r = filter_language(posts, "en");
    EXPECT_EQ(r.posts.size(), 2u);
    EXPECT_EQ(r.dropped_other, 1u);

    std::vector<PostRecord> all_en = {post("1", "u", 1), post("2", "u", 2)};
    EXPECT_EQ(filter_language(all_en, "en").posts, all_en);

    std::vector<PostRecord> untagged = {post("1", "u", 1), post("2", "u", 2)};
    for (auto& p : untagged) p.language_tag.reset();
    r = filter_language(untagged, "en");
    EXPECT_TRUE(r.posts.empty());
    EXPECT_EQ(r.dropped_untagged, 2u);

    struct AlwaysEn : LanguageDetector {
        std::optional<std::string> detect(std::string_view) const override { return "en"; }
    } det;
    EXPECT_EQ(filter_language(untagged, "en", &det).posts.size(), 2u);
    EXPECT_THROW(filter_language(posts, ""), ValidationError);
}
