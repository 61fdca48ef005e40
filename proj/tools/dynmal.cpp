#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "dynmal/datagen.hpp"
#include "dynmal/error.hpp"
#include "dynmal/eval.hpp"
#include "dynmal/pipeline.hpp"
#include "dynmal/random.hpp"
#include "dynmal/stats.hpp"
#include "dynmal/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dynmal;
using pipeline::ModelKind;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::vector<std::string> models;
    std::string split;
    std::optional<std::size_t> folds;
    std::optional<std::size_t> length;
    std::optional<double> alpha;
    bool reproducible = false;
    std::string corpus;

    // gen
    std::string shape = "sorted";
    double scale = 0.01;
    std::optional<double> drift;
    std::optional<std::size_t> goodware, malware;
    // eval / explain
    std::vector<std::string> load;
    // sweep
    std::vector<std::size_t> lengths;
    // stats / report
    std::vector<std::string> reports;
    std::size_t samples = 20;
};

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read " + path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw dynmal::ParseError(path + ": " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    if (const auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << text;
    if (!out) throw Error("failed writing " + path);
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string now_utc() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string with_extension(const std::string& path, const std::string& ext) {
    return fs::path(path).replace_extension(ext).string();
}

datagen::CorpusConfig default_corpus(std::uint64_t seed) {
    auto c = datagen::reference_shape("sorted", 0.01, datagen::default_config(seed));
    c.drift.magnitude = 0.3;
    return c;
}

/// Effective pipeline configuration: --config file, then flag overrides.
pipeline::PipelineConfig load_config(const Options& o) {
    pipeline::PipelineConfig cfg;
    if (!o.config.empty()) cfg = read_json(o.config).get<pipeline::PipelineConfig>();
    if (o.seed) cfg.seed = *o.seed;
    if (!o.models.empty()) {
        cfg.models.clear();
        for (const auto& m : o.models) cfg.models.push_back(pipeline::model_kind_from_string(m));
    }
    if (!o.split.empty()) cfg.split.kind = pipeline::split_kind_from_string(o.split);
    if (o.folds) cfg.split.folds = *o.folds;
    if (o.length) cfg.encoding.truncation = *o.length;
    if (o.alpha) cfg.alpha = *o.alpha;
    if (!o.corpus.empty()) cfg.paths.corpus = o.corpus;
    if (cfg.encoding.truncation == 0) throw ValidationError("--length must be positive");
    if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw ValidationError("--alpha must lie in (0, 1)");
    return cfg;
}

std::vector<SyscallTrace> load_or_generate(const pipeline::PipelineConfig& cfg) {
    if (!cfg.paths.corpus.empty()) return load_corpus(cfg.paths.corpus);
    auto cc = cfg.corpus.value_or(default_corpus(cfg.seed));
    if (!cfg.corpus) cc.seed = cfg.seed;
    return datagen::generate_corpus(cc);
}

std::optional<std::string> stamp(const Options& o) {
    if (o.reproducible) return std::nullopt;
    return now_utc();
}

std::uint64_t model_seed(std::uint64_t seed, ModelKind kind) {
    return derive_seed(derive_seed(seed, pipeline::kModelStream), static_cast<std::uint64_t>(kind) * 1000);
}

template <typename T>
std::vector<T> gather(const std::vector<T>& items, const std::vector<std::size_t>& idx) {
    std::vector<T> out;
    for (auto i : idx) out.push_back(items[i]);
    return out;
}

void emit_report(const eval::EvaluationReport& report, const std::string& out) {
    write_json(out, json(report));
    write_text(with_extension(out, ".csv"), eval::to_csv(report));
    std::cout << pipeline::render_report(report);
}

// ---- subcommands ----

int cmd_gen(const Options& o) {
    datagen::CorpusConfig cc;
    if (!o.config.empty()) {
        const auto j = read_json(o.config);
        if (j.contains("corpus") || j.contains("paths") || j.contains("models")) {
            const auto p = j.get<pipeline::PipelineConfig>();
            cc = p.corpus.value_or(default_corpus(p.seed));
        } else {
            cc = j.get<datagen::CorpusConfig>();
        }
        if (o.seed) cc.seed = *o.seed;
    } else {
        cc = datagen::reference_shape(o.shape, o.scale, datagen::default_config(o.seed.value_or(0)));
        cc.drift.magnitude = 0.3;
    }
    if (o.drift) cc.drift.magnitude = *o.drift;
    if (o.goodware || o.malware) {
        cc.segments.clear();
        if (o.goodware) cc.goodware_count = *o.goodware;
        if (o.malware) cc.malware_count = *o.malware;
    }
    datagen::validate(cc);
    const std::string out = o.out.empty() ? "corpus.jsonl" : o.out;
    const auto traces = datagen::generate_corpus(cc);
    if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
    save_corpus(out, traces);
    json meta = {{"kind", "corpus_meta"},
                 {"config_hash", pipeline::json_hash(json(cc))},
                 {"config", cc},
                 {"traces", traces.size()}};
    if (auto t = stamp(o)) meta["created_at"] = *t;
    write_json(out + ".meta.json", meta);
    std::cerr << "wrote " << traces.size() << " traces to " << out << "\n";
    return 0;
}

int cmd_train(const Options& o) {
    const auto cfg = load_config(o);
    if (o.models.size() > 1) throw ValidationError("train takes a single --model");
    const auto kind = cfg.models.empty() ? ModelKind::hist_rf : cfg.models.front();
    const auto corpus = load_or_generate(cfg);
    std::vector<SyscallTrace> train;
    if (cfg.split.kind == pipeline::SplitKind::cv)
        train = corpus;
    else
        train = gather(corpus, pipeline::make_split(corpus, cfg.split, cfg.seed).train);
    const auto model = pipeline::train_model(kind, train, cfg.params, cfg.encoding, model_seed(cfg.seed, kind));
    const std::string out = o.out.empty() ? "model.json" : o.out;
    if (const auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
    pipeline::save_model(out, model, {pipeline::config_hash(cfg), cfg.seed, stamp(o)});
    std::cerr << "trained " << pipeline::to_string(kind) << " on " << train.size() << " traces -> " << out << "\n";
    return 0;
}

int cmd_eval(const Options& o) {
    const auto cfg = load_config(o);
    const auto corpus = load_or_generate(cfg);
    eval::EvaluationReport report;
    report.config_hash = pipeline::config_hash(cfg);
    report.created_at = stamp(o);
    if (!o.load.empty()) {
        for (const auto& path : o.load)
            report.entries.push_back(pipeline::evaluate_trained(pipeline::load_model(path), corpus, cfg.split, cfg.seed));
    } else {
        report.entries =
            pipeline::evaluate_models(corpus, cfg.models, cfg.split, cfg.params, cfg.encoding, cfg.seed);
    }
    emit_report(report, o.out.empty() ? "report.json" : o.out);
    return 0;
}

int cmd_sweep(const Options& o) {
    const auto cfg = load_config(o);
    const auto corpus = load_or_generate(cfg);
    std::vector<eval::NamedFactory> factories;
    for (auto k : cfg.models)
        factories.push_back(pipeline::sweep_factory(k, cfg.params, cfg.encoding.normalize, model_seed(cfg.seed, k)));
    const auto& lengths = o.lengths.empty() ? eval::kDefaultSweepLengths : o.lengths;
    eval::TemporalCut cut = cfg.split.train_fraction;
    if (cfg.split.counts) cut = *cfg.split.counts;
    eval::EvaluationReport report;
    report.config_hash = pipeline::config_hash(cfg);
    report.created_at = stamp(o);
    report.entries = eval::sweep_sequence_length(corpus, factories, lengths, cut, cfg.seed);
    emit_report(report, o.out.empty() ? "sweep.json" : o.out);
    return 0;
}

eval::EvaluationReport read_reports(const std::vector<std::string>& paths) {
    if (paths.empty()) throw ValidationError("--report is required");
    eval::EvaluationReport merged;
    for (const auto& p : paths) {
        auto r = read_json(p).get<eval::EvaluationReport>();
        if (merged.config_hash.empty()) merged.config_hash = r.config_hash;
        for (auto& e : r.entries) merged.entries.push_back(std::move(e));
    }
    return merged;
}

std::vector<std::string> splits_of(const eval::EvaluationReport& report) {
    std::vector<std::string> splits;
    for (const auto& e : report.entries)
        if (std::find(splits.begin(), splits.end(), e.split) == splits.end()) splits.push_back(e.split);
    return splits;
}

int cmd_stats(const Options& o) {
    const auto report = read_reports(o.reports);
    const double alpha = o.alpha.value_or(0.05);
    if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("--alpha must lie in (0, 1)");
    const auto split = o.split.empty() ? report.entries.at(0).split : o.split;
    const auto sig = stats::pairwise_significance(pipeline::correctness_matrix(report, split), alpha);
    json j = stats::to_json(sig);
    j["split"] = split;
    j["config_hash"] = report.config_hash;
    if (auto t = stamp(o)) j["created_at"] = *t;
    write_json(o.out.empty() ? "significance.json" : o.out, j);
    std::cout << stats::render_table(sig);
    return 0;
}

int cmd_explain(const Options& o) {
    auto cfg = load_config(o);
    const auto corpus = load_or_generate(cfg);
    if (cfg.split.kind == pipeline::SplitKind::cv) throw ValidationError("explain needs a sorted or distributed split");
    const auto split = pipeline::make_split(corpus, cfg.split, cfg.seed);
    const auto train = gather(corpus, split.train);
    const auto test = gather(corpus, split.test);
    std::optional<pipeline::TrainedModel> model;
    if (!o.load.empty()) {
        model = pipeline::load_model(o.load.front());
    } else {
        const auto kind = cfg.models.empty() ? ModelKind::hist_rf : cfg.models.front();
        model = pipeline::train_model(kind, train, cfg.params, cfg.encoding, model_seed(cfg.seed, kind));
    }
    cfg.explain.samples = o.samples;
    const auto bundle = pipeline::explain_model(*model, train, test, cfg.explain,
                                                derive_seed(cfg.seed, pipeline::kExplainStream));
    json j = pipeline::to_json(bundle);
    j["model"] = pipeline::to_string(model->kind());
    j["config_hash"] = pipeline::config_hash(cfg);
    if (auto t = stamp(o)) j["created_at"] = *t;
    const std::string out = o.out.empty() ? "explanations.json" : o.out;
    write_json(out, j);
    const auto text = pipeline::render_explanations(bundle);
    write_text(with_extension(out, ".txt"), text);
    std::cout << text;
    return 0;
}

std::string significance_text(const eval::EvaluationReport& report, double alpha) {
    std::string out;
    for (const auto& split : splits_of(report)) {
        std::size_t models = 0;
        for (const auto& e : report.entries) models += e.split == split;
        if (models < 2) continue;
        const auto sig = stats::pairwise_significance(pipeline::correctness_matrix(report, split), alpha);
        out += "\nsignificance (" + split + ")\n" + stats::render_table(sig);
    }
    return out;
}

int cmd_report(const Options& o) {
    const auto report = read_reports(o.reports);
    const std::string text = pipeline::render_report(report) + significance_text(report, o.alpha.value_or(0.05));
    if (!o.out.empty()) write_text(o.out, text);
    std::cout << text;
    return 0;
}

int cmd_pipeline(const Options& o) {
    auto cfg = load_config(o);
    if (o.models.empty() && (o.config.empty() || !read_json(o.config).contains("models")))
        cfg.models = {ModelKind::hist_rf, ModelKind::lsm, ModelKind::linear, ModelKind::tree, ModelKind::ensemble};
    const fs::path dir = o.out.empty() ? "pipeline-out" : o.out;
    fs::create_directories(dir / "models");
    const auto hash = pipeline::config_hash(cfg);
    const auto created = stamp(o);
    write_json((dir / "config.json").string(), json(cfg));

    const auto corpus = load_or_generate(cfg);
    save_corpus((dir / "corpus.jsonl").string(), corpus);
    {
        std::ofstream v(dir / "vocabulary.txt");
        write_vocabulary(v, build_vocabulary(corpus));
    }
    std::cerr << "corpus: " << corpus.size() << " traces\n";

    eval::EvaluationReport report;
    report.config_hash = hash;
    report.created_at = created;
    for (auto kind : {pipeline::SplitKind::sorted, pipeline::SplitKind::cv, pipeline::SplitKind::distributed}) {
        auto split = cfg.split;
        split.kind = kind;
        if (kind == pipeline::SplitKind::distributed && !split.target.goodware && !split.target.malware) {
            // Keep the reference test skew: 45 malware per 4728 goodware.
            auto sorted = split;
            sorted.kind = pipeline::SplitKind::sorted;
            const auto test = pipeline::make_split(corpus, sorted, cfg.seed).test;
            std::size_t goodware = 0;
            for (auto i : test) goodware += corpus[i].label == Label::goodware;
            split.target.malware = std::max<std::size_t>(1, (goodware * 45 + 4728 / 2) / 4728);
        }
        std::cerr << "evaluating on " << pipeline::to_string(kind) << " split\n";
        for (auto& e : pipeline::evaluate_models(corpus, cfg.models, split, cfg.params, cfg.encoding, cfg.seed))
            report.entries.push_back(std::move(e));
    }
    write_json((dir / "report.json").string(), json(report));
    write_text((dir / "report.csv").string(), eval::to_csv(report));

    json significance = json::object();
    for (const auto& split : splits_of(report)) {
        std::size_t models = 0;
        for (const auto& e : report.entries) models += e.split == split;
        if (models < 2) continue;
        significance[split] =
            stats::to_json(stats::pairwise_significance(pipeline::correctness_matrix(report, split), cfg.alpha));
    }
    json sig_doc = {{"kind", "significance_set"}, {"config_hash", hash}, {"splits", significance}};
    if (created) sig_doc["created_at"] = *created;
    write_json((dir / "significance.json").string(), sig_doc);

    // Final models on the sorted training portion.
    auto sorted = cfg.split;
    sorted.kind = pipeline::SplitKind::sorted;
    const auto split = pipeline::make_split(corpus, sorted, cfg.seed);
    const auto train = gather(corpus, split.train);
    const auto test = gather(corpus, split.test);
    std::optional<pipeline::TrainedModel> forest_model;
    for (auto kind : cfg.models) {
        auto m = pipeline::train_model(kind, train, cfg.params, cfg.encoding, model_seed(cfg.seed, kind));
        pipeline::save_model((dir / "models" / (pipeline::to_string(kind) + ".json")).string(), m,
                             {hash, cfg.seed, created});
        if (kind == ModelKind::hist_rf) forest_model = std::move(m);
    }
    if (!forest_model)
        forest_model = pipeline::train_model(ModelKind::hist_rf, train, cfg.params, cfg.encoding,
                                             model_seed(cfg.seed, ModelKind::hist_rf));

    const auto bundle = pipeline::explain_model(*forest_model, train, test, cfg.explain,
                                                derive_seed(cfg.seed, pipeline::kExplainStream));
    json ej = pipeline::to_json(bundle);
    ej["model"] = "hist-rf";
    ej["config_hash"] = hash;
    if (created) ej["created_at"] = *created;
    write_json((dir / "explanations.json").string(), ej);
    const auto explanation_text = pipeline::render_explanations(bundle);
    write_text((dir / "explanations.txt").string(), explanation_text);

    const auto summary = pipeline::render_report(report) + significance_text(report, cfg.alpha);
    write_text((dir / "summary.txt").string(), summary);
    std::cout << summary;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Malware detection from system-call traces"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;

    app.add_option("--config", o.config, "JSON configuration file")->check(CLI::ExistingFile);
    app.add_option("--seed", o.seed, "Master seed");
    app.add_option("--out", o.out, "Output file or directory");
    app.add_option("--model", o.models, "Model kind (repeatable)")
        ->check(CLI::IsMember({"hist-rf", "lsm", "linear", "tree", "ensemble"}));
    app.add_option("--split", o.split, "Split regime")->check(CLI::IsMember({"sorted", "cv", "distributed"}));
    app.add_option("--folds", o.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
    app.add_option("--length", o.length, "Truncation length (first n calls)")->check(CLI::PositiveNumber);
    app.add_option("--alpha", o.alpha, "Significance level");
    app.add_flag("--reproducible", o.reproducible, "Omit timestamps from artifacts");
    app.add_option("--corpus", o.corpus, "Corpus JSONL file")->check(CLI::ExistingFile);

    auto* gen = app.add_subcommand("gen", "Generate a synthetic labeled corpus");
    gen->add_option("--shape", o.shape, "Temporal split shape")->check(CLI::IsMember({"sorted", "distributed"}));
    gen->add_option("--scale", o.scale, "Count scale factor")->check(CLI::PositiveNumber);
    gen->add_option("--drift", o.drift, "Drift magnitude in [0, 1]")->check(CLI::Range(0.0, 1.0));
    gen->add_option("--goodware", o.goodware, "Goodware count (single segment)");
    gen->add_option("--malware", o.malware, "Malware count (single segment)");

    auto* train = app.add_subcommand("train", "Train a model and save an archive");
    auto* ev = app.add_subcommand("eval", "Evaluate models on a split");
    ev->add_option("--load", o.load, "Evaluate saved model archives instead of training")
        ->check(CLI::ExistingFile);
    auto* sweep = app.add_subcommand("sweep", "Sequence-length sweep");
    sweep->add_option("--lengths", o.lengths, "Truncation lengths")->delimiter(',');
    auto* st = app.add_subcommand("stats", "Significance matrix from evaluation reports");
    st->add_option("--report", o.reports, "Evaluation report JSON (repeatable)")->required()->check(CLI::ExistingFile);
    auto* ex = app.add_subcommand("explain", "LIME explanations, rules and frequency tables");
    ex->add_option("--load", o.load, "Model archive to explain")->check(CLI::ExistingFile);
    ex->add_option("--samples", o.samples, "Test samples to explain");
    auto* rep = app.add_subcommand("report", "Human-readable summary of reports");
    rep->add_option("--report", o.reports, "Evaluation report JSON (repeatable)")->required()->check(CLI::ExistingFile);
    auto* pipe = app.add_subcommand("pipeline", "Full protocol: gen, train, eval on all splits, stats, explain");
    (void)train;
    (void)pipe;

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        const auto* sub = app.get_subcommands().front();
        const auto& name = sub->get_name();
        if (name == "gen") return cmd_gen(o);
        if (name == "train") return cmd_train(o);
        if (name == "eval") return cmd_eval(o);
        if (name == "sweep") return cmd_sweep(o);
        if (name == "stats") return cmd_stats(o);
        if (name == "explain") return cmd_explain(o);
        if (name == "report") return cmd_report(o);
        if (name == "pipeline") return cmd_pipeline(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
