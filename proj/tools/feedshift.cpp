// feedshift command line: one subcommand per pipeline stage, plus `run` for
// the whole study, `synth` for synthetic logs and `verify` against their truth.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <chrono>
#include <iomanip>
#include <iostream>
#include <nlohmann/json.hpp>
#include <optional>

#include "feedshift/pipeline.hpp"
#include "feedshift/synth.hpp"

namespace fs = std::filesystem;
using namespace feedshift;

namespace {

enum Exit { kOk = 0, kValidation = 2, kStageFailure = 3, kNoOverlap = 4 };

struct StudyFlags {
    std::string config;
    std::vector<std::string> events;
    std::optional<std::string> out;
    std::optional<unsigned> threads;
    std::optional<std::string> feed;
    std::optional<std::uint64_t> seed;
    std::optional<double> min_baseline_days;
    std::optional<std::string> lexicon;
    std::optional<std::string> embedder;
    std::optional<std::string> window;
    std::optional<std::string> aggregate;
    std::optional<std::string> centroid_window;
    std::optional<std::size_t> ngram_top_k;
    bool ngram_per_n = false;
    std::optional<std::string> estimator;
    bool stratum_weighted = false;
    std::optional<std::string> model;
    std::optional<std::string> topic_map;
    std::optional<std::string> topic;
    bool strict = false;
    bool force = false;
};

void add_study_flags(CLI::App* app, StudyFlags& f) {
    app->add_option("--config", f.config, "Study config (JSON)");
    app->add_option("--events", f.events, "Event log(s), instead of or on top of the config");
    app->add_option("--out", f.out, "Output directory");
    app->add_option("--threads", f.threads, "Worker threads")->check(CLI::PositiveNumber);
    app->add_option("--feed", f.feed, "Study feed id");
    app->add_option("--seed", f.seed, "Placebo sampling seed");
    app->add_option("--min-baseline-days", f.min_baseline_days, "Minimum baseline length in days");
    app->add_option("--lexicon", f.lexicon, "Category lexicon file");
    app->add_option("--embedder", f.embedder, "builtin-test | hashing:<dim>[:seed] | process:<cmd> | tcp:<host>:<port>");
    app->add_option("--window", f.window, "Observation window start,end (epoch seconds)");
    app->add_option("--aggregate", f.aggregate, "pooled | per-post-mean");
    app->add_option("--centroid-window", f.centroid_window, "Window for feed posts forming the centroid");
    app->add_option("--ngram-top-k", f.ngram_top_k, "N-gram vocabulary size");
    app->add_flag("--ngram-per-n", f.ngram_per_n, "Keep top-k per n-gram order");
    app->add_option("--estimator", f.estimator, "pooled | stratum-weighted");
    app->add_flag("--stratum-weighted", f.stratum_weighted, "Shorthand for --estimator stratum-weighted");
    app->add_option("--model", f.model, "Reuse a fitted propensity model");
    app->add_option("--topic-map", f.topic_map, "CSV of post_id,topic_id");
    app->add_option("--topic", f.topic, "Topic id to estimate");
    app->add_flag("--strict", f.strict, "Abort ingestion on the first malformed line");
    app->add_flag("--force", f.force, "Skip stale-input checks");
}

pipeline::StudyConfig resolve(const StudyFlags& f) {
    pipeline::StudyConfig c = f.config.empty() ? pipeline::StudyConfig{} : pipeline::load_config(f.config);
    c.event_logs.insert(c.event_logs.end(), f.events.begin(), f.events.end());
    if (f.out) c.output_dir = *f.out;
    if (f.threads) c.threads = *f.threads;
    if (f.feed) c.feed_id = *f.feed;
    if (f.seed) c.seed = *f.seed;
    if (f.min_baseline_days) c.min_baseline_days = *f.min_baseline_days;
    if (f.lexicon) c.lexicon = *f.lexicon;
    if (f.embedder) c.embedder = *f.embedder;
    if (f.window) c.window = *f.window;
    if (f.aggregate) c.aggregation = textmetrics::parse_aggregation(*f.aggregate);
    if (f.centroid_window) c.centroid_window = *f.centroid_window;
    if (f.ngram_top_k) c.ngram_top_k = *f.ngram_top_k;
    if (f.ngram_per_n) c.ngram_per_n = true;
    if (f.estimator) c.estimator = estimate::parse_estimator(*f.estimator);
    if (f.stratum_weighted) c.estimator = estimate::Estimator::stratum_weighted;
    if (f.model) c.model = *f.model;
    if (f.topic_map) c.topic_map = *f.topic_map;
    if (f.topic) c.topic = *f.topic;
    if (f.strict) c.strict_ingest = true;
    return c;
}

int run_stages(const StudyFlags& f, const std::vector<pipeline::Stage>& stages) {
    pipeline::StudyConfig cfg;
    try {
        cfg = resolve(f);
        pipeline::validate_config(cfg);
    } catch (const std::exception& e) {
        std::cerr << "feedshift: validation error: " << e.what() << "\n";
        return kValidation;
    }
    pipeline::Study study(cfg, f.force);
    for (auto s : stages) {
        const std::string name(pipeline::stage_name(s));
        try {
            const auto t0 = std::chrono::steady_clock::now();
            study.run(s);
            const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
            std::cerr << "feedshift: " << name << " ok (" << std::fixed << std::setprecision(1) << dt.count() << " s)\n";
        } catch (const NoOverlapError& e) {
            std::cerr << "feedshift: stage " << name << " failed: " << e.what() << "\n";
            return kNoOverlap;
        } catch (const ValidationError& e) {
            std::cerr << "feedshift: stage " << name << " failed: " << e.what() << "\n";
            return kValidation;
        } catch (const StaleInputError& e) {
            std::cerr << "feedshift: stage " << name << " failed: " << e.what() << "\n";
            return kValidation;
        } catch (const std::exception& e) {
            std::cerr << "feedshift: stage " << name << " failed: " << e.what() << "\n";
            return kStageFailure;
        }
    }
    return kOk;
}

int run_synth(const std::string& config, const std::string& out, unsigned threads) {
    synth::SynthConfig cfg;
    lexicon::CategoryLexicon lex = synth::builtin_lexicon();
    try {
        const fs::path cfg_path(config);
        cfg = synth::config_from_json(nlohmann::json::parse(read_file(config)));
        if (!cfg.lexicon_path.empty()) {
            const fs::path lp(cfg.lexicon_path);
            lex = lexicon::CategoryLexicon::load(lp.is_absolute() ? lp.string() : (cfg_path.parent_path() / lp).string());
        }
        synth::validate(cfg);
    } catch (const std::exception& e) {
        std::cerr << "feedshift: validation error: " << e.what() << "\n";
        return kValidation;
    }
    try {
        const auto result = synth::generate(cfg, lex, threads);
        synth::write_output(result, out);
        if (cfg.lexicon_path.empty())
            write_file(out + "/lexicon.lex", std::string(synth::kBuiltinLexicon));
        else
            fs::copy_file(cfg.lexicon_path, out + "/lexicon.lex", fs::copy_options::overwrite_existing);
        const nlohmann::json study = {{"feed_id", cfg.feed_id},
                                      {"event_logs", {"events.jsonl"}},
                                      {"lexicon", "lexicon.lex"},
                                      {"seed", cfg.seed},
                                      {"min_baseline_days", cfg.min_baseline_days},
                                      {"output_dir", "out"}};
        write_file(out + "/study.json", study.dump(2) + "\n");
        std::cerr << "feedshift: synth wrote " << result.posts.size() << " posts and " << result.engagements.size()
                  << " engagements for " << result.users.size() << " users to " << out << "\n";
    } catch (const std::exception& e) {
        std::cerr << "feedshift: synth failed: " << e.what() << "\n";
        return kStageFailure;
    }
    return kOk;
}

int run_verify(const std::string& truth_path, const std::string& results, double se_multiple) {
    try {
        const auto truth = synth::truth_from_json(nlohmann::json::parse(read_file(truth_path)));
        std::map<std::string, std::pair<double, double>> effects;
        for (const auto& r : pipeline::parse_effects(csv::read(results + "/effects.csv")))
            effects[r.metric] = {r.ate, r.se};
        std::map<std::string, double> betas;
        const auto reg = results + "/regression.csv";
        if (fs::is_regular_file(reg)) {
            const auto t = csv::read(reg);
            for (const auto& row : t.rows)
                if (row[0] != "R2" && row[0] != "N" && row[0] != "excluded") betas[row[0]] = parse_double(row[1]);
        }
        synth::VerifyOptions opts;
        opts.se_multiple = se_multiple;
        const auto checks = synth::verify(truth, effects, betas, opts);
        nlohmann::json out = nlohmann::json::array();
        bool all = true;
        for (const auto& c : checks) {
            all = all && c.ok;
            out.push_back({{"check", c.name}, {"truth", c.truth}, {"estimate", c.estimate}, {"se", c.se}, {"pass", c.ok}});
        }
        std::cout << nlohmann::json{{"pass", all}, {"checks", out}}.dump(2) << "\n";
        return all ? kOk : kStageFailure;
    } catch (const std::exception& e) {
        std::cerr << "feedshift: verify failed: " << e.what() << "\n";
        return kValidation;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Feed exposure study pipeline"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(pipeline::kToolVersion));

    StudyFlags flags;
    std::vector<std::pair<CLI::App*, pipeline::Stage>> stage_cmds;
    const std::map<pipeline::Stage, std::string> help = {
        {pipeline::Stage::ingest, "Parse event logs into the canonical store"},
        {pipeline::Stage::cohort, "Find treated users, sample placebo anchors, apply eligibility"},
        {pipeline::Stage::covariates, "Build pre-exposure covariates"},
        {pipeline::Stage::score, "Fit boosted propensity scores"},
        {pipeline::Stage::match, "Stratify, prune and check balance"},
        {pipeline::Stage::effects, "Measure outcomes and estimate effects"},
        {pipeline::Stage::regress, "Regress post-exposure distance on engagement"},
        {pipeline::Stage::report, "Collate outputs into report.md"}};
    for (auto s : pipeline::kAllStages) {
        auto* sub = app.add_subcommand(std::string(pipeline::stage_name(s)), help.at(s));
        add_study_flags(sub, flags);
        stage_cmds.emplace_back(sub, s);
    }
    auto* run = app.add_subcommand("run", "Run every stage in order");
    add_study_flags(run, flags);

    std::string synth_config, synth_out;
    unsigned synth_threads = 1;
    auto* syn = app.add_subcommand("synth", "Generate a synthetic study with planted effects");
    syn->add_option("--config", synth_config, "Synth config (JSON)")->required();
    syn->add_option("--out", synth_out, "Output directory")->required();
    syn->add_option("--threads", synth_threads, "Worker threads")->check(CLI::PositiveNumber);

    std::string truth_path, results_dir;
    double se_multiple = 3.0;
    auto* ver = app.add_subcommand("verify", "Compare estimates with synthetic ground truth");
    ver->add_option("--truth", truth_path, "truth.json from synth")->required();
    ver->add_option("--results", results_dir, "Study output directory")->required();
    ver->add_option("--se-multiple", se_multiple, "Allowed distance in standard errors");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kValidation;
    }

    if (syn->parsed()) return run_synth(synth_config, synth_out, synth_threads);
    if (ver->parsed()) return run_verify(truth_path, results_dir, se_multiple);
    if (run->parsed()) return run_stages(flags, {pipeline::kAllStages.begin(), pipeline::kAllStages.end()});
    for (const auto& [sub, stage] : stage_cmds)
        if (sub->parsed()) return run_stages(flags, {stage});
    return kValidation;
}
