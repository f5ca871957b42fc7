#pragma once

// Study configuration, stage orchestration over a hash-chained manifest, and
// the Markdown report.
//
// Stages hand off through files in the output directory:
//
//   ingest      store/{posts,engagements}.jsonl, store/manifest.json, ingest_report.json
//   cohort      cohort.csv, cohort_summary.json
//   covariates  covariates.csv, schema.json
//   score       model.json, scores.csv
//   match       strata.csv, balance.csv, balance_summary.json
//   effects     outcomes.csv, effects.csv, naive_effects.csv, centroid.json
//   regress     regression.csv
//   report      report.md

#include <filesystem>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "feedshift/cohort.hpp"
#include "feedshift/common.hpp"
#include "feedshift/corpus.hpp"
#include "feedshift/covariates.hpp"
#include "feedshift/csv.hpp"
#include "feedshift/embedding.hpp"
#include "feedshift/estimate.hpp"
#include "feedshift/lexicon.hpp"
#include "feedshift/propensity.hpp"
#include "feedshift/regress.hpp"
#include "feedshift/textmetrics.hpp"

namespace feedshift::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr std::string_view kToolVersion = "feedshift 0.1.0";

struct StudyConfig {
    std::string feed_id;
    std::vector<std::string> event_logs;
    std::string lexicon;
    std::string embedder = "builtin-test";
    std::string language = "en";
    std::uint64_t seed = 0;
    int k_strata = estimate::kDefaultStrata;
    std::size_t min_per_arm = estimate::kDefaultMinPerArm;
    double smd_threshold = estimate::kDefaultSmdThreshold;
    double min_baseline_days = 30.0;
    std::size_t ngram_top_k = 500;
    bool ngram_per_n = false;
    std::size_t n_estimators = 500;
    double learning_rate = 0.05;
    int max_depth = 3;
    estimate::Estimator estimator = estimate::Estimator::pooled;
    textmetrics::Aggregation aggregation = textmetrics::Aggregation::pooled;
    std::string window;           // "start,end" in epoch seconds, either side optional
    std::string centroid_window;  // restricts the feed posts that form the centroid
    std::string model;            // reuse a fitted propensity model
    std::string topic_map;
    std::string topic;
    bool strict_ingest = false;
    std::string output_dir = "out";
    unsigned threads = 1;
};

/// Config as JSON. Output directory and thread count are left out of the
/// hashed form because they do not change results.
inline json config_to_json(const StudyConfig& c, bool for_hash = false) {
    json j = {{"feed_id", c.feed_id},
              {"event_logs", c.event_logs},
              {"lexicon", c.lexicon},
              {"embedder", c.embedder},
              {"language", c.language},
              {"seed", c.seed},
              {"k_strata", c.k_strata},
              {"min_per_arm", c.min_per_arm},
              {"smd_threshold", c.smd_threshold},
              {"min_baseline_days", c.min_baseline_days},
              {"ngram_top_k", c.ngram_top_k},
              {"ngram_per_n", c.ngram_per_n},
              {"n_estimators", c.n_estimators},
              {"learning_rate", c.learning_rate},
              {"max_depth", c.max_depth},
              {"estimator", estimate::estimator_name(c.estimator)},
              {"aggregation", textmetrics::aggregation_name(c.aggregation)},
              {"window", c.window},
              {"centroid_window", c.centroid_window},
              {"model", c.model},
              {"topic_map", c.topic_map},
              {"topic", c.topic},
              {"strict_ingest", c.strict_ingest}};
    if (!for_hash) {
        j["output_dir"] = c.output_dir;
        j["threads"] = c.threads;
    }
    return j;
}

inline std::string config_hash(const StudyConfig& c) { return hex64(fnv1a64(config_to_json(c, true).dump())); }

/// Parses a config object. Relative paths resolve against `base_dir`.
inline StudyConfig config_from_json(const json& j, const fs::path& base_dir = ".") {
    static const std::vector<std::string> known = {
        "feed_id",     "event_logs",   "lexicon",       "embedder",    "language",          "seed",
        "k_strata",    "min_per_arm",  "smd_threshold", "min_baseline_days", "ngram_top_k", "ngram_per_n",
        "n_estimators", "learning_rate", "max_depth",   "estimator",   "aggregation",       "window",
        "centroid_window", "model",    "topic_map",     "topic",       "strict_ingest",     "output_dir",
        "threads"};
    if (!j.is_object()) throw ValidationError("study config must be a JSON object");
    for (const auto& [k, _] : j.items())
        if (std::find(known.begin(), known.end(), k) == known.end()) throw ValidationError("unknown config key: " + k);
    auto resolve = [&](const std::string& p) -> std::string {
        if (p.empty()) return p;
        const fs::path path(p);
        return path.is_absolute() ? p : (base_dir / path).lexically_normal().string();
    };
    StudyConfig c;
    try {
        c.feed_id = j.value("feed_id", c.feed_id);
        if (j.contains("event_logs")) {
            if (j.at("event_logs").is_string())
                c.event_logs = {j.at("event_logs").get<std::string>()};
            else
                c.event_logs = j.at("event_logs").get<std::vector<std::string>>();
        }
        for (auto& p : c.event_logs) p = resolve(p);
        c.lexicon = resolve(j.value("lexicon", c.lexicon));
        c.embedder = j.value("embedder", c.embedder);
        c.language = j.value("language", c.language);
        c.seed = j.value("seed", c.seed);
        c.k_strata = j.value("k_strata", c.k_strata);
        c.min_per_arm = j.value("min_per_arm", c.min_per_arm);
        c.smd_threshold = j.value("smd_threshold", c.smd_threshold);
        c.min_baseline_days = j.value("min_baseline_days", c.min_baseline_days);
        c.ngram_top_k = j.value("ngram_top_k", c.ngram_top_k);
        c.ngram_per_n = j.value("ngram_per_n", c.ngram_per_n);
        c.n_estimators = j.value("n_estimators", c.n_estimators);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.max_depth = j.value("max_depth", c.max_depth);
        if (j.contains("estimator")) c.estimator = estimate::parse_estimator(j.at("estimator").get<std::string>());
        if (j.contains("aggregation"))
            c.aggregation = textmetrics::parse_aggregation(j.at("aggregation").get<std::string>());
        c.window = j.value("window", c.window);
        c.centroid_window = j.value("centroid_window", c.centroid_window);
        c.model = resolve(j.value("model", c.model));
        c.topic_map = resolve(j.value("topic_map", c.topic_map));
        c.topic = j.value("topic", c.topic);
        c.strict_ingest = j.value("strict_ingest", c.strict_ingest);
        c.output_dir = resolve(j.value("output_dir", c.output_dir));
        c.threads = j.value("threads", c.threads);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("invalid study config: ") + e.what());
    }
    return c;
}

inline StudyConfig load_config(const std::string& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ValidationError("cannot parse study config " + path + ": " + e.what());
    }
    return config_from_json(j, fs::path(path).parent_path());
}

/// Checks everything that can be checked before any compute.
inline void validate_config(const StudyConfig& c, bool require_logs = true) {
    if (c.feed_id.empty()) throw ValidationError("config: feed_id is required");
    if (require_logs && c.event_logs.empty()) throw ValidationError("config: at least one event log is required");
    for (const auto& p : c.event_logs)
        if (!fs::is_regular_file(p)) throw ValidationError("config: event log not found: " + p);
    if (c.lexicon.empty()) throw ValidationError("config: lexicon path is required");
    if (!fs::is_regular_file(c.lexicon)) throw ValidationError("config: lexicon not found: " + c.lexicon);
    if (!c.model.empty() && !fs::is_regular_file(c.model)) throw ValidationError("config: model not found: " + c.model);
    if (!c.topic_map.empty() && !fs::is_regular_file(c.topic_map))
        throw ValidationError("config: topic map not found: " + c.topic_map);
    if (c.topic_map.empty() != c.topic.empty()) throw ValidationError("config: topic_map and topic go together");
    if (c.k_strata < 1) throw ValidationError("config: k_strata must be >= 1");
    if (c.min_per_arm < 2) throw ValidationError("config: min_per_arm must be >= 2");
    if (!(c.smd_threshold > 0.0)) throw ValidationError("config: smd_threshold must be > 0");
    if (!(c.min_baseline_days >= 0.0)) throw ValidationError("config: min_baseline_days must be >= 0");
    if (c.n_estimators < 1) throw ValidationError("config: n_estimators must be >= 1");
    if (!(c.learning_rate > 0.0)) throw ValidationError("config: learning_rate must be > 0");
    if (c.max_depth < 1) throw ValidationError("config: max_depth must be >= 1");
    if (c.threads < 1) throw ValidationError("config: threads must be >= 1");
    if (!c.window.empty()) corpus::parse_window(c.window);
    if (!c.centroid_window.empty()) corpus::parse_window(c.centroid_window);
    const auto& e = c.embedder;
    const bool known = e == "builtin-test" || e.rfind("hashing:", 0) == 0 || e.rfind("hashing-signed:", 0) == 0 ||
                       e.rfind("process:", 0) == 0 || e.rfind("tcp:", 0) == 0;
    if (!known) throw ValidationError("config: unknown embedder spec: " + e);
}

enum class Stage { ingest, cohort, covariates, score, match, effects, regress, report };

inline constexpr std::array<Stage, 8> kAllStages = {Stage::ingest, Stage::cohort,  Stage::covariates, Stage::score,
                                                    Stage::match,  Stage::effects, Stage::regress,    Stage::report};

inline std::string_view stage_name(Stage s) {
    static constexpr std::array<std::string_view, 8> names = {"ingest", "cohort",  "covariates", "score",
                                                              "match",  "effects", "regress",    "report"};
    return names[static_cast<std::size_t>(s)];
}

inline Stage parse_stage(std::string_view s) {
    for (auto st : kAllStages)
        if (stage_name(st) == s) return st;
    throw ValidationError("unknown stage: " + std::string(s));
}

/// One row of cohort.csv.
struct CohortRow {
    std::string user_id;
    cohort::Arm arm = cohort::Arm::control;
    Timestamp anchor = 0;
    cohort::DropReason drop = cohort::DropReason::none;
};

/// One row of strata.csv.
struct UnitRow {
    std::string user_id;
    bool treated = false;
    double score = 0.0;
    int stratum = 0;
    bool retained = false;
};

/// Metric columns in reporting order: the six text metrics, then one rate per
/// lexicon category.
inline std::vector<std::string> outcome_columns(const lexicon::CategoryLexicon& lex) {
    std::vector<std::string> cols;
    for (auto m : textmetrics::kAllMetrics) cols.emplace_back(textmetrics::metric_name(m));
    for (const auto& c : lex.category_names()) cols.push_back(std::string(covariates::kLexiconPrefix) + c);
    return cols;
}

inline std::string metric_label(std::string_view key) {
    for (auto m : textmetrics::kAllMetrics)
        if (textmetrics::metric_name(m) == key) return std::string(textmetrics::metric_label(m));
    if (key.rfind(covariates::kLexiconPrefix, 0) == 0) return std::string(key.substr(covariates::kLexiconPrefix.size()));
    if (key.rfind("topic:", 0) == 0) return "Topic " + std::string(key.substr(6));
    return std::string(key);
}

// ---- effects.csv ----

inline const std::vector<std::string>& effects_header() {
    static const std::vector<std::string> h = {"metric", "ate", "ate_pct", "se", "cohens_d", "t",
                                               "df",     "p",   "stars",   "n_treated", "n_control"};
    return h;
}

inline std::string effects_csv(std::span<const estimate::EffectRow> rows) {
    csv::Writer w;
    w.row(effects_header());
    for (const auto& r : rows)
        w.row({r.metric, format_double(r.ate), r.ate_pct ? format_double(*r.ate_pct) : "", format_double(r.se),
               format_double(r.cohens_d), format_double(r.t), format_double(r.df), format_double(r.p),
               std::string(estimate::stars(r.p)), std::to_string(r.n_treated), std::to_string(r.n_control)});
    return w.str();
}

inline std::vector<estimate::EffectRow> parse_effects(const csv::Table& t) {
    if (t.header != effects_header()) throw ValidationError("effects.csv: unexpected header");
    std::vector<estimate::EffectRow> rows;
    for (const auto& c : t.rows) {
        estimate::EffectRow r;
        r.metric = c[0];
        r.ate = parse_double(c[1]);
        if (!c[2].empty()) r.ate_pct = parse_double(c[2]);
        r.se = parse_double(c[3]);
        r.cohens_d = parse_double(c[4]);
        r.t = parse_double(c[5]);
        r.df = parse_double(c[6]);
        r.p = parse_double(c[7]);
        r.n_treated = std::stoul(c[9]);
        r.n_control = std::stoul(c[10]);
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---- regression.csv ----

inline std::string regression_csv(const regress::RegressionFit& fit, std::size_t excluded) {
    csv::Writer w;
    w.row({"term", "beta", "se", "t", "p", "stars"});
    for (std::size_t j = 0; j < fit.names.size(); ++j)
        w.row({fit.names[j], format_double(fit.beta[j]), format_double(fit.se[j]), format_double(fit.t[j]),
               format_double(fit.p[j]), std::string(estimate::stars(fit.p[j]))});
    w.row({"R2", format_double(fit.r2), "", "", format_double(fit.f_p), std::string(estimate::stars(fit.f_p))});
    w.row({"N", std::to_string(fit.n), "", "", "", ""});
    w.row({"excluded", std::to_string(excluded), "", "", "", ""});
    return w.str();
}

// ---- report.md ----

namespace detail {

inline std::string printf_str(const char* fmt, double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, x);
    return buf;
}

/// Compact scientific form such as -4.8E-5.
inline std::string sci(double x) {
    if (x == 0.0 || !std::isfinite(x)) return format_double(x);
    int exp10 = static_cast<int>(std::floor(std::log10(std::abs(x))));
    double mant = x / std::pow(10.0, exp10);
    if (std::abs(std::round(mant * 10.0) / 10.0) >= 10.0) {
        ++exp10;
        mant /= 10.0;
    }
    return printf_str("%.1f", mant) + "E" + std::to_string(exp10);
}

}  // namespace detail

inline std::string format_ate_cell(const estimate::EffectRow& r) {
    if (r.ate_pct) return detail::printf_str("%.2f%%", *r.ate_pct);
    return detail::sci(r.ate) + "†";
}

inline std::string format_t_cell(double t, double p) {
    return detail::printf_str("%.2f", t) + std::string(estimate::stars(p));
}

struct RegressionRow {
    std::string term;
    double beta = 0.0;
    double t = 0.0;
    double p = 1.0;
};

struct ReportInputs {
    std::string feed_id;
    json cohort_summary;
    json balance_summary;
    std::vector<estimate::EffectRow> effects;
    std::vector<RegressionRow> regression;
    double r2 = 0.0;
    double r2_p = 1.0;
    std::size_t regression_n = 0;
};

inline std::string regression_label(std::string_view term) {
    static const std::map<std::string, std::string, std::less<>> labels = {
        {"intercept", "Intercept"}, {"post", "Post"},     {"comment", "Comment"},   {"quote", "Quote"},
        {"repost", "Repost"},       {"like", "Like"},     {"bookmark", "Bookmark"}, {"baseline_distance", "Baseline dist."}};
    const auto it = labels.find(term);
    return it == labels.end() ? std::string(term) : it->second;
}

inline std::string render_report(const ReportInputs& in) {
    std::string md;
    md += "# Feed exposure study: " + in.feed_id + "\n\n";
    const auto& cs = in.cohort_summary;
    md += "## Cohort\n\n";
    md += "| | Treated | Control |\n|---|---:|---:|\n";
    md += "| Candidates | " + std::to_string(cs.at("treated").at("candidates").get<std::size_t>()) + " | " +
          std::to_string(cs.at("control").at("candidates").get<std::size_t>()) + " |\n";
    md += "| Eligible | " + std::to_string(cs.at("treated").at("eligible").get<std::size_t>()) + " | " +
          std::to_string(cs.at("control").at("eligible").get<std::size_t>()) + " |\n";
    const auto& bs = in.balance_summary;
    md += "| Matched | " + std::to_string(bs.at("retained_treated").get<std::size_t>()) + " | " +
          std::to_string(bs.at("retained_control").get<std::size_t>()) + " |\n\n";
    const auto& ks = cs.at("anchor_ks");
    if (!ks.at("statistic").is_null())
        md += "Anchor dates, treated vs. placebo: KS D = " + detail::printf_str("%.3f", ks.at("statistic").get<double>()) +
              ", p = " + detail::printf_str("%.3f", ks.at("p_value").get<double>()) + ".\n\n";
    md += "## Covariate balance\n\n";
    md += "|SMD| threshold " + detail::printf_str("%.2f", bs.at("threshold").get<double>()) + " over " +
          std::to_string(bs.at("n_covariates").get<std::size_t>()) + " covariates, " +
          std::to_string(bs.at("retained_strata").get<std::size_t>()) + " of " +
          std::to_string(bs.at("k_strata").get<int>()) + " strata retained: " +
          bs.at("summary").get<std::string>() + ".\n\n";
    md += "## Effects (" + bs.at("estimator").get<std::string>() + ")\n\n";
    md += "| Metric | ATE% | d | t-stat. |\n|---|---:|---:|---:|\n";
    bool dagger = false;
    for (const auto& r : in.effects) {
        dagger = dagger || !r.ate_pct;
        md += "| " + metric_label(r.metric) + " | " + format_ate_cell(r) + " | " +
              detail::printf_str("%.3f", r.cohens_d) + " | " + format_t_cell(r.t, r.p) + " |\n";
    }
    md += "\n";
    if (dagger) md += "† raw ATE; the control mean is too close to zero for a percentage.\n";
    md += "Significance: * p<.05, ** p<.01, *** p<.001.\n\n";
    if (!in.regression.empty()) {
        md += "## Engagement and post-exposure distance (OLS, N = " + std::to_string(in.regression_n) + ")\n\n";
        md += "| Eng. Type | β | t |\n|---|---:|---:|\n";
        for (const auto& r : in.regression)
            md += "| " + regression_label(r.term) + " | " + detail::printf_str("%.4f", r.beta) + " | " +
                  format_t_cell(r.t, r.p) + " |\n";
        md += "| R² | " + detail::printf_str("%.3f", in.r2) + std::string(estimate::stars(in.r2_p)) + " | |\n";
    }
    return md;
}

// ---- manifest ----

/// Per-stage record of input and output hashes. Keys are paths relative to
/// the output directory, or "external:<path>" for files outside it.
class Manifest {
public:
    explicit Manifest(std::string dir) : dir_(std::move(dir)) {
        const auto p = dir_ + "/manifest.json";
        if (fs::is_regular_file(p)) {
            try {
                data_ = json::parse(read_file(p));
            } catch (const json::exception&) {
                throw StaleInputError("stale input: unreadable manifest " + p);
            }
        }
        if (!data_.is_object()) data_ = json::object();
    }

    bool has(Stage s) const { return data_.contains("stages") && data_["stages"].contains(stage_name(s)); }
    const json& entry(Stage s) const { return data_.at("stages").at(std::string(stage_name(s))); }

    void record(Stage s, const json& inputs, const json& outputs, const std::string& cfg_hash) {
        data_["format"] = "feedshift-manifest/1";
        data_["tool_version"] = kToolVersion;
        data_["config_hash"] = cfg_hash;
        data_["stages"][std::string(stage_name(s))] = {{"inputs", inputs}, {"outputs", outputs}, {"config_hash", cfg_hash}};
        // A re-run invalidates every later stage's record.
        for (auto later : kAllStages)
            if (static_cast<int>(later) > static_cast<int>(s) && has(later)) {
                const auto& e = entry(later);
                bool depends = false;
                for (const auto& [k, _] : e.at("inputs").items())
                    depends = depends || outputs.contains(k);
                if (depends && e.at("inputs") != current_inputs(e.at("inputs"))) data_["stages"].erase(std::string(stage_name(later)));
            }
        save();
    }

    json current_inputs(const json& recorded) const {
        json cur = json::object();
        for (const auto& [k, _] : recorded.items()) cur[k] = hash_of(k);
        return cur;
    }

    std::string hash_of(const std::string& key) const {
        if (key.rfind("external:", 0) == 0) {
            const auto path = key.substr(9);
            return fs::is_regular_file(path) ? file_hash(path) : "missing";
        }
        if (key.rfind("preloaded:", 0) == 0) return key.substr(10);
        const auto path = dir_ + "/" + key;
        return fs::is_regular_file(path) ? file_hash(path) : "missing";
    }

    void save() const { write_file(dir_ + "/manifest.json", data_.dump(2) + "\n"); }

private:
    std::string dir_;
    json data_;
};

// ---- study ----

class Study {
public:
    explicit Study(StudyConfig cfg, bool force = false) : cfg_(std::move(cfg)), force_(force) {
        fs::create_directories(cfg_.output_dir);
    }

    const StudyConfig& config() const { return cfg_; }
    std::string path(std::string_view name) const { return cfg_.output_dir + "/" + std::string(name); }

    /// Uses an in-memory event store instead of reading the configured logs.
    void preload(corpus::EventStore store) { preloaded_ = std::move(store); }

    /// Runs one stage. On failure writes a FAILED marker naming the stage and
    /// rethrows; outputs written so far are left in place.
    void run(Stage s) {
        const auto marker = path("FAILED");
        std::error_code ec;
        fs::remove(marker, ec);
        try {
            switch (s) {
                case Stage::ingest: ingest(); break;
                case Stage::cohort: run_cohort(); break;
                case Stage::covariates: run_covariates(); break;
                case Stage::score: score(); break;
                case Stage::match: match(); break;
                case Stage::effects: effects(); break;
                case Stage::regress: run_regress(); break;
                case Stage::report: report(); break;
            }
        } catch (const std::exception& e) {
            write_file(marker, std::string(stage_name(s)) + ": " + e.what() + "\n");
            throw;
        }
    }

    void run_all() {
        for (auto s : kAllStages) run(s);
    }

private:
    using Inputs = std::vector<std::pair<std::string, Stage>>;

    // Every internal input must come from a recorded run of its producer whose
    // own inputs are still current.
    void require(const Manifest& m, const Inputs& inputs) const {
        if (force_) return;
        for (const auto& [file, producer] : inputs) {
            if (!m.has(producer))
                throw StaleInputError("stale input: " + file + " has no recorded '" + std::string(stage_name(producer)) +
                                      "' run; run that stage first");
            const auto& e = m.entry(producer);
            if (!e.at("outputs").contains(file) || m.hash_of(file) != e.at("outputs").at(file).get<std::string>())
                throw StaleInputError("stale input: " + file + " changed since '" + std::string(stage_name(producer)) +
                                      "' ran");
            for (const auto& [k, h] : e.at("inputs").items())
                if (m.hash_of(k) != h.get<std::string>())
                    throw StaleInputError("stale input: '" + std::string(stage_name(producer)) + "' input " + k +
                                          " changed since it ran");
        }
    }

    json input_hashes(const Manifest& m, const Inputs& inputs, const std::vector<std::string>& external = {}) const {
        json j = json::object();
        for (const auto& [file, _] : inputs) j[file] = m.hash_of(file);
        for (const auto& e : external) j["external:" + e] = m.hash_of("external:" + e);
        return j;
    }

    void record(Manifest& m, Stage s, const json& inputs, const std::vector<std::string>& outputs) const {
        json out = json::object();
        for (const auto& o : outputs) out[o] = m.hash_of(o);
        m.record(s, inputs, out, config_hash(cfg_));
    }

    const lexicon::CategoryLexicon& lex() {
        if (!lex_) lex_ = lexicon::CategoryLexicon::load(cfg_.lexicon);
        return *lex_;
    }

    textmetrics::EmbeddingProvider& embedder() {
        if (!embedder_) embedder_ = textmetrics::make_embedder(cfg_.embedder);
        return *embedder_;
    }

    const corpus::EventStore& store() {
        if (!store_) store_ = corpus::read_store(path("store"));
        return *store_;
    }

    corpus::UserTimeline timeline(const std::string& user) {
        auto tl = store().timeline(user);
        if (!cfg_.language.empty()) tl.posts = corpus::filter_language(tl.posts, cfg_.language).posts;
        return tl;
    }

    static const Inputs& store_files() {
        static const Inputs f = {{"store/posts.jsonl", Stage::ingest},
                                 {"store/engagements.jsonl", Stage::ingest},
                                 {"store/manifest.json", Stage::ingest}};
        return f;
    }

    static Inputs concat(Inputs a, const Inputs& b) {
        a.insert(a.end(), b.begin(), b.end());
        return a;
    }

    // ---------------- ingest ----------------
    void ingest() {
        Manifest m(cfg_.output_dir);
        corpus::IngestReport rep;
        corpus::EventStore st;
        json inputs = json::object();
        if (preloaded_) {
            st = std::move(*preloaded_);
            preloaded_.reset();
            rep.accepted = st.post_count() + st.engagement_count();
        } else {
            corpus::Ingester ing(cfg_.strict_ingest ? corpus::IngestMode::strict : corpus::IngestMode::lenient);
            for (const auto& p : cfg_.event_logs) {
                ing.add_file(p);
                inputs["external:" + p] = m.hash_of("external:" + p);
            }
            st = ing.finish(rep);
        }
        if (!cfg_.window.empty()) st = st.restricted(corpus::parse_window(cfg_.window));
        corpus::write_store(st, path("store"));
        if (inputs.empty()) {
            const auto h = json::parse(read_file(path("store/manifest.json"))).at("content_hash").get<std::string>();
            inputs["preloaded:" + h] = h;
        }
        json rejects = json::array();
        for (std::size_t i = 0; i < rep.rejects.size() && i < 1000; ++i)
            rejects.push_back({{"source", rep.rejects[i].source}, {"line", rep.rejects[i].line}, {"reason", rep.rejects[i].reason}});
        std::map<std::string, std::size_t> by_reason;
        for (const auto& r : rep.rejects) ++by_reason[r.reason];
        const json report = {{"accepted", rep.accepted},
                             {"rejected", rep.rejected},
                             {"rejected_by_reason", by_reason},
                             {"rejects", rejects},
                             {"users", st.user_count()},
                             {"posts", st.post_count()},
                             {"engagements", st.engagement_count()}};
        write_file(path("ingest_report.json"), report.dump(2) + "\n");
        store_ = std::move(st);
        record(m, Stage::ingest, inputs,
               {"store/posts.jsonl", "store/engagements.jsonl", "store/manifest.json", "ingest_report.json"});
    }

    // ---------------- cohort ----------------
    void run_cohort() {
        Manifest m(cfg_.output_dir);
        require(m, store_files());
        const auto& st = store();
        const auto treated = cohort::find_treated(st, cfg_.feed_id);
        if (treated.empty()) throw ValidationError("no user engaged with feed " + cfg_.feed_id);
        const auto controls = cohort::find_controls(st, cfg_.feed_id);
        if (controls.empty()) throw ValidationError("no control users for feed " + cfg_.feed_id);
        std::vector<Timestamp> anchors;
        std::vector<cohort::CohortAssignment> all;
        for (const auto& t : treated) {
            anchors.push_back(t.anchor);
            all.push_back({t.user_id, cohort::Arm::treated, t.anchor, cfg_.feed_id});
        }
        auto placebo = cohort::sample_placebo(anchors, controls, cfg_.seed, cfg_.feed_id);
        all.insert(all.end(), placebo.begin(), placebo.end());
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.user_id < b.user_id; });

        std::vector<cohort::DropReason> reasons(all.size());
        parallel_for(all.size(), cfg_.threads, [&](std::size_t i) {
            reasons[i] = cohort::eligibility(timeline(all[i].user_id), all[i].anchor, cfg_.min_baseline_days);
        });

        cohort_.clear();
        csv::Writer w;
        w.row({"user_id", "arm", "anchor", "drop_reason"});
        std::array<std::map<std::string, std::size_t>, 2> dropped;
        std::array<std::size_t, 2> candidates{}, eligible{};
        std::vector<double> ks_t, ks_c, ks_t_all, ks_c_all;
        for (std::size_t i = 0; i < all.size(); ++i) {
            const auto& a = all[i];
            const std::size_t arm = a.arm == cohort::Arm::treated ? 0 : 1;
            ++candidates[arm];
            (arm == 0 ? ks_t_all : ks_c_all).push_back(static_cast<double>(a.anchor));
            if (reasons[i] == cohort::DropReason::none) {
                ++eligible[arm];
                (arm == 0 ? ks_t : ks_c).push_back(static_cast<double>(a.anchor));
            } else {
                ++dropped[arm][std::string(cohort::drop_reason_name(reasons[i]))];
            }
            cohort_.push_back({a.user_id, a.arm, a.anchor, reasons[i]});
            w.row({a.user_id, std::string(cohort::arm_name(a.arm)), std::to_string(a.anchor),
                   std::string(cohort::drop_reason_name(reasons[i]))});
        }
        w.save(path("cohort.csv"));
        auto ks_json = [](const std::vector<double>& a, const std::vector<double>& b) -> json {
            if (a.empty() || b.empty()) return {{"statistic", nullptr}, {"p_value", nullptr}};
            const auto ks = cohort::ks_two_sample(a, b);
            return {{"statistic", ks.statistic}, {"p_value", ks.p_value}, {"n_treated", ks.n1}, {"n_control", ks.n2}};
        };
        const json summary = {
            {"feed_id", cfg_.feed_id},
            {"seed", cfg_.seed},
            {"min_baseline_days", cfg_.min_baseline_days},
            {"treated", {{"candidates", candidates[0]}, {"eligible", eligible[0]}, {"dropped", dropped[0]}}},
            {"control", {{"candidates", candidates[1]}, {"eligible", eligible[1]}, {"dropped", dropped[1]}}},
            {"anchor_ks", ks_json(ks_t, ks_c)},
            {"anchor_ks_candidates", ks_json(ks_t_all, ks_c_all)}};
        write_file(path("cohort_summary.json"), summary.dump(2) + "\n");
        if (eligible[0] == 0 || eligible[1] == 0) throw ValidationError("an arm has no eligible users");
        record(m, Stage::cohort, input_hashes(m, store_files()), {"cohort.csv", "cohort_summary.json"});
    }

    const std::vector<CohortRow>& cohort_rows() {
        if (cohort_.empty()) {
            const auto t = csv::read(path("cohort.csv"));
            const auto cu = t.column("user_id"), ca = t.column("arm"), cn = t.column("anchor"), cd = t.column("drop_reason");
            for (const auto& r : t.rows)
                cohort_.push_back({r[cu], cohort::parse_arm(r[ca]), std::stoll(r[cn]), cohort::parse_drop_reason(r[cd])});
        }
        return cohort_;
    }

    // ---------------- covariates ----------------
    void run_covariates() {
        Manifest m(cfg_.output_dir);
        const Inputs inputs = concat(store_files(), {{"cohort.csv", Stage::cohort}});
        require(m, inputs);
        const auto& lx = lex();
        std::vector<const CohortRow*> units;
        for (const auto& r : cohort_rows())
            if (r.drop == cohort::DropReason::none) units.push_back(&r);
        std::vector<covariates::PostTokens> baselines(units.size());
        std::vector<covariates::ActivityCovariates> activity(units.size());
        parallel_for(units.size(), cfg_.threads, [&](std::size_t i) {
            const auto tl = timeline(units[i]->user_id);
            activity[i] = covariates::activity_covariates(tl, units[i]->anchor);
            for (const auto& p : tl.posts) {
                if (p.timestamp >= units[i]->anchor) break;
                baselines[i].push_back(lexicon::tokenize(p.text).tokens);
            }
        });
        covariates::NGramOptions opts;
        opts.top_k = cfg_.ngram_top_k;
        opts.per_n = cfg_.ngram_per_n;
        auto vocab = covariates::ngram_vocabulary(baselines, opts);
        schema_ = covariates::build_schema(std::move(vocab), lx);
        std::vector<std::vector<double>> rows(units.size());
        parallel_for(units.size(), cfg_.threads, [&](std::size_t i) {
            rows[i] = covariates::assemble(units[i]->user_id, activity[i], baselines[i], *schema_, lx).values;
        });
        std::string out;
        {
            csv::Writer w;
            std::vector<std::string> header = {"user_id"};
            header.insert(header.end(), schema_->names.begin(), schema_->names.end());
            w.row(header);
            out = w.str();
        }
        std::vector<std::string> lines(units.size());
        parallel_for(units.size(), cfg_.threads, [&](std::size_t i) {
            std::string& line = lines[i];
            line = csv::field(units[i]->user_id);
            for (double v : rows[i]) {
                line.push_back(',');
                line += format_double(v);
            }
            line.push_back('\n');
        });
        for (const auto& l : lines) out += l;
        write_file(path("covariates.csv"), out);

        json vocab_json = json::array();
        for (const auto& e : schema_->vocabulary.entries()) vocab_json.push_back({{"ngram", e.name}, {"df", e.df}, {"tf", e.tf}});
        const json schema = {{"names", schema_->names},
                             {"dimension", schema_->dimension()},
                             {"n_activity", 2},
                             {"n_ngrams", schema_->n_ngrams},
                             {"n_categories", schema_->n_categories},
                             {"ngram_orders", schema_->vocabulary.orders()},
                             {"ngram_top_k", cfg_.ngram_top_k},
                             {"ngram_per_n", cfg_.ngram_per_n},
                             {"lexicon", schema_->lexicon_name},
                             {"vocabulary_hash", schema_->vocabulary.hash()},
                             {"schema_hash", schema_->hash()},
                             {"vocabulary", vocab_json}};
        write_file(path("schema.json"), schema.dump(2) + "\n");
        cov_users_.clear();
        for (const auto* u : units) cov_users_.push_back(u->user_id);
        cov_ = propensity::FeatureMatrix::from_rows(rows);
        record(m, Stage::covariates, input_hashes(m, inputs, {cfg_.lexicon}), {"covariates.csv", "schema.json"});
    }

    void load_covariates() {
        if (cov_) return;
        const auto text = read_file(path("covariates.csv"));
        auto first_nl = text.find('\n');
        if (first_nl == std::string::npos) throw ValidationError("covariates.csv: empty");
        const auto header = csv::parse_line(std::string_view(text).substr(0, first_nl));
        const std::size_t d = header.size() - 1;
        std::vector<std::vector<double>> rows;
        cov_users_.clear();
        std::size_t start = first_nl + 1;
        while (start < text.size()) {
            auto nl = text.find('\n', start);
            if (nl == std::string::npos) nl = text.size();
            const auto line = std::string_view(text).substr(start, nl - start);
            start = nl + 1;
            if (line.empty()) continue;
            const auto cells = csv::parse_line(line);
            if (cells.size() != d + 1) throw ValidationError("covariates.csv: ragged row");
            cov_users_.push_back(cells[0]);
            std::vector<double> v(d);
            for (std::size_t j = 0; j < d; ++j) v[j] = parse_double(cells[j + 1]);
            rows.push_back(std::move(v));
        }
        cov_ = propensity::FeatureMatrix::from_rows(rows);
        if (rows.empty()) cov_ = propensity::FeatureMatrix(0, d);
        cov_names_.assign(header.begin() + 1, header.end());
    }

    std::vector<std::string> covariate_names() {
        if (schema_) return schema_->names;
        if (cov_names_.empty()) load_covariates();
        return cov_names_;
    }

    std::string schema_hash() {
        const auto j = json::parse(read_file(path("schema.json")));
        return j.at("schema_hash").get<std::string>();
    }

    std::vector<char> treated_flags(const std::vector<std::string>& users) {
        std::unordered_map<std::string, cohort::Arm> arm;
        for (const auto& r : cohort_rows()) arm.emplace(r.user_id, r.arm);
        std::vector<char> t(users.size());
        for (std::size_t i = 0; i < users.size(); ++i) {
            const auto it = arm.find(users[i]);
            if (it == arm.end()) throw StaleInputError("stale input: user " + users[i] + " missing from cohort.csv");
            t[i] = it->second == cohort::Arm::treated;
        }
        return t;
    }

    // ---------------- score ----------------
    void score() {
        Manifest m(cfg_.output_dir);
        const Inputs inputs = {{"cohort.csv", Stage::cohort}, {"covariates.csv", Stage::covariates}, {"schema.json", Stage::covariates}};
        require(m, inputs);
        load_covariates();
        const auto flags = treated_flags(cov_users_);
        std::vector<int> y(flags.begin(), flags.end());
        const auto hash = schema_hash();
        propensity::BoostedEnsemble ens;
        std::vector<std::string> external;
        if (!cfg_.model.empty()) {
            ens = propensity::from_json(json::parse(read_file(cfg_.model)));
            if (ens.schema_hash != hash) throw ValidationError("model was fitted on a different covariate schema");
            if (ens.n_features != cov_->cols()) throw ValidationError("model dimension does not match covariates");
            external.push_back(cfg_.model);
        } else {
            propensity::BoostOptions opts;
            opts.n_estimators = cfg_.n_estimators;
            opts.learning_rate = cfg_.learning_rate;
            opts.max_depth = cfg_.max_depth;
            opts.threads = cfg_.threads;
            ens = propensity::fit_adaboost(*cov_, y, opts);
            ens.schema_hash = hash;
        }
        write_file(path("model.json"), propensity::to_json(ens).dump() + "\n");
        scores_ = propensity::predict_scores(ens, *cov_, cfg_.threads);
        csv::Writer w;
        w.row({"user_id", "score"});
        for (std::size_t i = 0; i < cov_users_.size(); ++i) w.row({cov_users_[i], format_double(scores_[i])});
        w.save(path("scores.csv"));
        record(m, Stage::score, input_hashes(m, inputs, external), {"model.json", "scores.csv"});
    }

    // ---------------- match ----------------
    void match() {
        Manifest m(cfg_.output_dir);
        const Inputs inputs = {{"cohort.csv", Stage::cohort}, {"covariates.csv", Stage::covariates},
                               {"schema.json", Stage::covariates}, {"scores.csv", Stage::score}};
        require(m, inputs);
        load_covariates();
        if (scores_.empty()) {
            const auto t = csv::read(path("scores.csv"));
            if (t.rows.size() != cov_users_.size()) throw StaleInputError("stale input: scores.csv does not match covariates");
            for (std::size_t i = 0; i < t.rows.size(); ++i) {
                if (t.rows[i][0] != cov_users_[i]) throw StaleInputError("stale input: scores.csv user order differs");
                scores_.push_back(parse_double(t.rows[i][1]));
            }
        }
        const auto flags = treated_flags(cov_users_);
        auto strata = estimate::build_strata(scores_, flags, cfg_.k_strata);
        std::optional<estimate::PruneReport> pr;
        try {
            pr = estimate::prune(strata, cfg_.min_per_arm);
        } catch (const NoOverlapError&) {
            write_strata(strata, flags);
            throw;
        }
        write_strata(strata, flags);
        const auto names = covariate_names();
        const auto& X = *cov_;
        const auto rows = estimate::balance_report(
            names, [&](std::size_t j) { return X.column(j); }, flags, strata, cfg_.estimator, cfg_.threads);
        csv::Writer w;
        w.row({"covariate", "smd_pre", "smd_post"});
        for (const auto& r : rows) w.row({r.covariate, format_double(r.smd_pre), format_double(r.smd_post)});
        w.save(path("balance.csv"));
        const auto s = estimate::summarize(rows, cfg_.smd_threshold);
        json per_stratum = json::array();
        for (const auto& st : strata)
            per_stratum.push_back({{"index", st.index}, {"treated", st.treated.size()}, {"control", st.control.size()},
                                   {"retained", st.retained}});
        const json summary = {{"estimator", estimate::estimator_name(cfg_.estimator)},
                              {"k_strata", cfg_.k_strata},
                              {"min_per_arm", cfg_.min_per_arm},
                              {"threshold", s.threshold},
                              {"n_covariates", s.n_covariates},
                              {"max_pre", s.max_pre},
                              {"max_post", s.max_post},
                              {"mean_pre", s.mean_pre},
                              {"mean_post", s.mean_post},
                              {"imbalanced_pre", s.imbalanced_pre},
                              {"imbalanced_post", s.imbalanced_post},
                              {"summary", estimate::format_summary(s)},
                              {"retained_strata", pr->retained_strata},
                              {"retained_treated", pr->retained_treated},
                              {"retained_control", pr->retained_control},
                              {"dropped_treated", pr->dropped_treated},
                              {"dropped_control", pr->dropped_control},
                              {"strata", per_stratum}};
        write_file(path("balance_summary.json"), summary.dump(2) + "\n");
        record(m, Stage::match, input_hashes(m, inputs), {"strata.csv", "balance.csv", "balance_summary.json"});
    }

    void write_strata(const std::vector<estimate::Stratum>& strata, const std::vector<char>& flags) {
        std::vector<int> idx(cov_users_.size());
        std::vector<char> kept(cov_users_.size());
        for (const auto& s : strata) {
            for (auto i : s.treated) idx[i] = s.index, kept[i] = s.retained;
            for (auto i : s.control) idx[i] = s.index, kept[i] = s.retained;
        }
        csv::Writer w;
        w.row({"user_id", "arm", "score", "stratum", "retained"});
        for (std::size_t i = 0; i < cov_users_.size(); ++i)
            w.row({cov_users_[i], flags[i] ? "treated" : "control", format_double(scores_[i]), std::to_string(idx[i]),
                   kept[i] ? "1" : "0"});
        w.save(path("strata.csv"));
    }

    std::vector<UnitRow> read_units() {
        const auto t = csv::read(path("strata.csv"));
        std::vector<UnitRow> units;
        for (const auto& r : t.rows)
            units.push_back({r[0], cohort::parse_arm(r[1]) == cohort::Arm::treated, parse_double(r[2]), std::stoi(r[3]),
                             r[4] == "1"});
        return units;
    }

    // ---------------- effects ----------------
    const textmetrics::FeedCentroid& centroid() {
        if (centroid_) return *centroid_;
        const auto& st = store();
        std::optional<corpus::TimeWindow> win;
        if (!cfg_.centroid_window.empty()) win = corpus::parse_window(cfg_.centroid_window);
        std::vector<std::string> ids;
        for (const auto* e : st.engagements_on(cfg_.feed_id))
            if (e->target_post_id) ids.push_back(*e->target_post_id);
        std::sort(ids.begin(), ids.end());
        ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
        std::vector<std::string> texts;
        for (const auto& id : ids) {
            const auto* p = st.find_post(id);
            if (p == nullptr) continue;
            if (win && !win->contains(p->timestamp)) continue;
            if (!cfg_.language.empty() && (!p->language_tag || *p->language_tag != cfg_.language)) continue;
            texts.push_back(p->text);
        }
        if (texts.empty()) throw ValidationError("feed " + cfg_.feed_id + " surfaced no usable posts for its centroid");
        centroid_ = textmetrics::feed_centroid(cfg_.feed_id, texts, lex(), embedder());
        return *centroid_;
    }

    std::unordered_map<std::string, Timestamp> anchors() {
        std::unordered_map<std::string, Timestamp> a;
        for (const auto& r : cohort_rows()) a.emplace(r.user_id, r.anchor);
        return a;
    }

    void effects() {
        Manifest m(cfg_.output_dir);
        const Inputs inputs = concat(store_files(), {{"cohort.csv", Stage::cohort}, {"strata.csv", Stage::match}});
        require(m, inputs);
        const auto& lx = lex();
        const auto& c = centroid();
        const auto units = read_units();
        const auto anchor = anchors();
        const auto cols = outcome_columns(lx);
        std::vector<std::vector<double>> values(units.size());
        std::vector<std::vector<std::string>> post_ids(units.size());
        auto& emb = embedder();
        const unsigned threads = emb.thread_safe() ? cfg_.threads : 1;
        parallel_for(units.size(), threads, [&](std::size_t i) {
            const auto tl = timeline(units[i].user_id);
            const auto split = corpus::split_periods(tl, anchor.at(units[i].user_id));
            std::vector<std::string> texts;
            for (const auto& p : split.post_exposure) {
                texts.push_back(p.text);
                post_ids[i].push_back(p.post_id);
            }
            const auto prof = textmetrics::profile_period(texts, lx, c, emb, cfg_.aggregation);
            values[i].assign(prof.metrics.begin(), prof.metrics.end());
            values[i].insert(values[i].end(), prof.category_rates.begin(), prof.category_rates.end());
        });

        csv::Writer ow;
        {
            std::vector<std::string> h = {"user_id", "arm", "stratum", "retained"};
            h.insert(h.end(), cols.begin(), cols.end());
            ow.row(h);
        }
        for (std::size_t i = 0; i < units.size(); ++i) {
            std::vector<std::string> r = {units[i].user_id, units[i].treated ? "treated" : "control",
                                          std::to_string(units[i].stratum), units[i].retained ? "1" : "0"};
            for (double v : values[i]) r.push_back(format_double(v));
            ow.row(r);
        }
        ow.save(path("outcomes.csv"));

        std::vector<estimate::Stratum> strata(static_cast<std::size_t>(cfg_.k_strata));
        std::vector<char> flags(units.size());
        for (int s = 0; s < cfg_.k_strata; ++s) strata[s].index = s;
        for (std::size_t i = 0; i < units.size(); ++i) {
            if (units[i].stratum < 0 || units[i].stratum >= cfg_.k_strata) throw StaleInputError("stale input: stratum out of range");
            auto& s = strata[units[i].stratum];
            (units[i].treated ? s.treated : s.control).push_back(i);
            s.retained = units[i].retained;
            flags[i] = units[i].treated;
        }
        std::vector<estimate::EffectRow> rows(cols.size()), naive(cols.size());
        parallel_for(cols.size(), cfg_.threads, [&](std::size_t k) {
            std::vector<double> v(units.size());
            for (std::size_t i = 0; i < units.size(); ++i) v[i] = values[i][k];
            rows[k] = estimate::estimate_effect(cols[k], v, strata, cfg_.estimator);
            naive[k] = estimate::naive_effect(cols[k], v, flags);
        });
        std::vector<std::string> external = {cfg_.lexicon};
        if (!cfg_.topic_map.empty()) {
            const auto map = estimate::read_topic_map(cfg_.topic_map);
            rows.push_back(estimate::topic_share_outcome(
                cfg_.topic, map, units.size(), [&](std::size_t i) { return std::span<const std::string>(post_ids[i]); },
                strata, cfg_.estimator));
            external.push_back(cfg_.topic_map);
        }
        write_file(path("effects.csv"), effects_csv(rows));
        write_file(path("naive_effects.csv"), effects_csv(naive));
        const json cj = {{"feed_id", c.feed_id},
                         {"n_posts", c.n_posts},
                         {"n_empty_excluded", c.n_empty_excluded},
                         {"embedder", emb.describe()},
                         {"aggregation", textmetrics::aggregation_name(cfg_.aggregation)},
                         {"style_centroid", c.style_centroid}};
        write_file(path("centroid.json"), cj.dump(2) + "\n");
        record(m, Stage::effects, input_hashes(m, inputs, external),
               {"outcomes.csv", "effects.csv", "naive_effects.csv", "centroid.json"});
    }

    // ---------------- regress ----------------
    void run_regress() {
        Manifest m(cfg_.output_dir);
        const Inputs inputs = concat(store_files(), {{"cohort.csv", Stage::cohort}});
        require(m, inputs);
        const auto& c = centroid();
        std::vector<const CohortRow*> treated;
        for (const auto& r : cohort_rows())
            if (r.arm == cohort::Arm::treated && r.drop == cohort::DropReason::none) treated.push_back(&r);
        std::vector<regress::UserEngagement> rows(treated.size());
        auto& emb = embedder();
        const unsigned threads = emb.thread_safe() ? cfg_.threads : 1;
        parallel_for(treated.size(), threads, [&](std::size_t i) {
            auto& row = rows[i];
            row.user_id = treated[i]->user_id;
            for (const auto& e : store().engagements_of(row.user_id))
                if (e.feed_id == cfg_.feed_id) row.counts[static_cast<std::size_t>(e.kind)] += 1.0;
            const auto split = corpus::split_periods(timeline(row.user_id), treated[i]->anchor);
            auto distance = [&](const std::vector<corpus::PostRecord>& posts) {
                std::vector<std::string> texts;
                for (const auto& p : posts) texts.push_back(p.text);
                try {
                    return 1.0 - textmetrics::semantic_convergence(texts, c, emb);
                } catch (const ValidationError&) {
                    return std::nan("");
                }
            };
            row.baseline_distance = distance(split.baseline);
            row.post_distance = distance(split.post_exposure);
        });
        const auto design = regress::build_design(std::move(rows));
        const auto fit = regress::ols_fit(design);
        write_file(path("regression.csv"), regression_csv(fit, design.excluded));
        record(m, Stage::regress, input_hashes(m, inputs, {cfg_.lexicon}), {"regression.csv"});
    }

    // ---------------- report ----------------
    void report() {
        Manifest m(cfg_.output_dir);
        Inputs inputs = {{"cohort_summary.json", Stage::cohort},
                         {"balance_summary.json", Stage::match},
                         {"effects.csv", Stage::effects}};
        const bool have_regression = fs::is_regular_file(path("regression.csv")) && m.has(Stage::regress);
        if (have_regression) inputs.push_back({"regression.csv", Stage::regress});
        require(m, inputs);
        ReportInputs in;
        in.feed_id = cfg_.feed_id;
        in.cohort_summary = json::parse(read_file(path("cohort_summary.json")));
        in.balance_summary = json::parse(read_file(path("balance_summary.json")));
        in.effects = parse_effects(csv::read(path("effects.csv")));
        if (have_regression) {
            const auto t = csv::read(path("regression.csv"));
            for (const auto& r : t.rows) {
                if (r[0] == "R2") {
                    in.r2 = parse_double(r[1]);
                    in.r2_p = parse_double(r[4]);
                } else if (r[0] == "N") {
                    in.regression_n = std::stoul(r[1]);
                } else if (r[0] != "excluded") {
                    in.regression.push_back({r[0], parse_double(r[1]), parse_double(r[3]), parse_double(r[4])});
                }
            }
        }
        write_file(path("report.md"), render_report(in));
        record(m, Stage::report, input_hashes(m, inputs), {"report.md"});
    }

    StudyConfig cfg_;
    bool force_ = false;
    std::optional<corpus::EventStore> preloaded_;
    std::optional<corpus::EventStore> store_;
    std::optional<lexicon::CategoryLexicon> lex_;
    std::unique_ptr<textmetrics::EmbeddingProvider> embedder_;
    std::optional<textmetrics::FeedCentroid> centroid_;
    std::vector<CohortRow> cohort_;
    std::optional<covariates::CovariateSchema> schema_;
    std::optional<propensity::FeatureMatrix> cov_;
    std::vector<std::string> cov_users_;
    std::vector<std::string> cov_names_;
    std::vector<double> scores_;
};

/// Validates the config and runs every stage in order.
inline void run_study(const StudyConfig& cfg, std::optional<corpus::EventStore> preloaded = std::nullopt) {
    validate_config(cfg, !preloaded);
    Study s(cfg, false);
    if (preloaded) s.preload(std::move(*preloaded));
    s.run_all();
}

}  // namespace feedshift::pipeline
