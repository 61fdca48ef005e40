#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "dynmal/error.hpp"
#include "dynmal/pipeline.hpp"

using namespace dynmal;
using namespace dynmal::pipeline;

namespace {

const std::vector<SyscallTrace>& corpus() {
    static const auto traces = [] {
        auto c = datagen::default_config(17, 40, 40);
        for (auto* fams : {&c.goodware, &c.malware})
            for (auto& wp : *fams) {
                wp.profile.min_length = 150;
                wp.profile.max_length = 250;
            }
        c.drift.magnitude = 0.2;
        return datagen::generate_corpus(c);
    }();
    return traces;
}

ModelParams fast_params() {
    ModelParams p;
    p.forest.trees = 15;
    p.readout_folds = 3;
    return p;
}

}  // namespace

TEST_CASE("model kind and split names") {
    for (auto k : {ModelKind::hist_rf, ModelKind::lsm, ModelKind::linear, ModelKind::tree, ModelKind::ensemble})
        CHECK(model_kind_from_string(to_string(k)) == k);
    CHECK(to_string(ModelKind::hist_rf) == "hist-rf");
    CHECK_THROWS_AS(model_kind_from_string("svm"), ValidationError);
    for (auto k : {SplitKind::sorted, SplitKind::cv, SplitKind::distributed}) CHECK(split_kind_from_string(to_string(k)) == k);
}

TEST_CASE("spread_histogram preserves counts over the horizon") {
    const std::vector<double> raw = {3, 0, 7, 1};
    const auto m = spread_histogram(raw, false, 0, 20);
    CHECK(m.width == 4);
    CHECK(m.total() == 11);
    std::vector<std::uint64_t> cols(4, 0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        CHECK(m.time_steps[r] >= 0);
        CHECK(m.time_steps[r] < 20);
        if (r > 0) CHECK(m.time_steps[r] > m.time_steps[r - 1]);
        for (std::size_t c = 0; c < 4; ++c) cols[c] += m.row(r)[c];
    }
    CHECK(cols == std::vector<std::uint64_t>{3, 0, 7, 1});
    const std::vector<double> norm = {0.25, 0.75};
    const auto n = spread_histogram(norm, true, 100, 50);
    CHECK(n.total() == 100);
}

TEST_CASE("archives round trip every model kind") {
    const auto& traces = corpus();
    const EncodingOptions enc{200, true};
    for (auto kind : {ModelKind::hist_rf, ModelKind::linear, ModelKind::tree, ModelKind::lsm, ModelKind::ensemble}) {
        CAPTURE(to_string(kind));
        const auto model = train_model(kind, traces, fast_params(), enc, 5);
        CHECK(model.kind() == kind);
        const auto archive = to_archive(model, {"cafe", 5, std::nullopt});
        CHECK(archive["format_version"] == kArchiveVersion);
        CHECK(archive["checksum"] == sha256_hex(archive["model"].dump()));
        Provenance prov;
        const auto back = from_archive(nlohmann::json::parse(archive.dump()), &prov);
        CHECK(prov.config_hash == "cafe");
        CHECK(prov.seed == 5);
        CHECK_FALSE(prov.created_at);
        CHECK(back.vocabulary() == model.vocabulary());
        CHECK(back.encoding() == enc);
        for (const auto& t : traces) CHECK(back.predict(t).score == model.predict(t).score);
        if (model.histogram_native()) {
            for (std::size_t i = 0; i < 10; ++i)
                CHECK(model.histogram_score(model.histogram(traces[i])) == model.predict(traces[i]).score);
        }
    }
}

TEST_CASE("archives reject other versions and tampering") {
    const auto model = train_model(ModelKind::tree, corpus(), fast_params(), {}, 1);
    const auto archive = to_archive(model, {"h", 1, "2026-01-01T00:00:00Z"});
    auto future = archive;
    future["format_version"] = kArchiveVersion + 1;
    CHECK_THROWS_AS(from_archive(future), ArchiveError);
    auto bad_sum = archive;
    bad_sum["checksum"] = std::string(64, '0');
    CHECK_THROWS_AS(from_archive(bad_sum), ArchiveError);
    auto edited = archive;
    edited["model"]["encoding"]["truncation"] = 5;
    CHECK_THROWS_AS(from_archive(edited), ArchiveError);

    const auto path = (std::filesystem::temp_directory_path() / "dynmal_test_model.json").string();
    save_model(path, model, {"h", 1, std::nullopt});
    Provenance prov;
    const auto loaded = load_model(path, &prov);
    CHECK(prov.config_hash == "h");
    for (const auto& t : corpus()) CHECK(loaded.predict(t).label == model.predict(t).label);
    std::filesystem::remove(path);
    CHECK_THROWS(load_model(path));
}

TEST_CASE("hashing") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(json_hash(nlohmann::json::parse(R"({"b":1,"a":2})")) == json_hash(nlohmann::json::parse(R"({"a":2,"b":1})")));
}

TEST_CASE("pipeline config round trips and hashes deterministically") {
    PipelineConfig c;
    c.seed = 42;
    c.models = {ModelKind::hist_rf, ModelKind::lsm};
    c.split.kind = SplitKind::distributed;
    c.split.counts = eval::SplitCounts{10, 5, 8, 3};
    c.split.target = {5, 1};
    c.encoding.truncation = 500;
    c.alpha = 0.01;
    c.paths.report_dir = "out";
    c.corpus = datagen::reference_shape("sorted", 0.01);
    const nlohmann::json j = c;
    const auto back = j.get<PipelineConfig>();
    CHECK(nlohmann::json(back) == j);
    CHECK(config_hash(back) == config_hash(c));
    auto other = c;
    other.seed = 43;
    CHECK(config_hash(other) != config_hash(c));

    const auto defaults = nlohmann::json::object().get<PipelineConfig>();
    CHECK(defaults.encoding.truncation == 1000);
    CHECK(defaults.split.kind == SplitKind::sorted);
    CHECK(defaults.alpha == 0.05);
    CHECK_THROWS(nlohmann::json{{"alpha", 1.5}}.get<PipelineConfig>());
    CHECK_THROWS(nlohmann::json{{"models", {"quantum"}}}.get<PipelineConfig>());
}

TEST_CASE("evaluation is deterministic and covers the right samples") {
    const auto& traces = corpus();
    const std::vector<ModelKind> kinds = {ModelKind::hist_rf, ModelKind::linear, ModelKind::tree, ModelKind::ensemble};
    auto params = fast_params();
    params.ensemble_members = {ModelKind::hist_rf, ModelKind::linear, ModelKind::tree};
    SplitConfig sorted;
    sorted.train_fraction = 0.75;
    const auto a = evaluate_models(traces, kinds, sorted, params, {}, 3);
    const auto b = evaluate_models(traces, kinds, sorted, params, {}, 3);
    REQUIRE(a.size() == kinds.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].model == to_string(kinds[i]));
        CHECK(a[i].split == "sorted");
        CHECK(a[i].correct.size() == 20);
        CHECK(a[i].counts.total() == 20);
        CHECK(a[i].correct == b[i].correct);
        CHECK(a[i].sample_ids == a[0].sample_ids);
    }
    const auto split = make_split(traces, sorted, 3);
    for (std::size_t i = 0; i < split.test.size(); ++i) CHECK(a[0].sample_ids[i] == traces[split.test[i]].id);

    // The ensemble entry is the vote of its members.
    std::vector<std::vector<Label>> member_preds;
    for (std::size_t m = 0; m < 3; ++m) {
        std::vector<Label> p;
        for (std::size_t i = 0; i < split.test.size(); ++i) {
            const Label truth = *traces[split.test[i]].label;
            p.push_back(a[m].correct[i] ? truth : flip(truth));
        }
        member_preds.push_back(p);
    }
    const auto vote = eval::majority_vote(member_preds);
    for (std::size_t i = 0; i < split.test.size(); ++i)
        CHECK(a[3].correct[i] == (vote[i] == *traces[split.test[i]].label));

    SplitConfig cv;
    cv.kind = SplitKind::cv;
    cv.folds = 4;
    const std::vector<ModelKind> rf = {ModelKind::hist_rf};
    const auto folds = evaluate_models(traces, rf, cv, params, {}, 3);
    REQUIRE(folds.size() == 1);
    CHECK(folds[0].split == "cv");
    CHECK(folds[0].correct.size() == traces.size());
    CHECK(std::set<std::string>(folds[0].sample_ids.begin(), folds[0].sample_ids.end()).size() == traces.size());
    CHECK_THROWS_AS(make_split(traces, cv, 0), ValidationError);

    eval::EvaluationReport report{a, "x", std::nullopt};
    const auto matrix = correctness_matrix(report, "sorted");
    CHECK(matrix.models() == 4);
    CHECK(matrix.samples() == 20);
    const auto text = render_report(report);
    CHECK(text.find("hist-rf") != std::string::npos);
    CHECK(text.find("ensemble") != std::string::npos);

    const auto trained = train_model(ModelKind::hist_rf, std::vector<SyscallTrace>(traces.begin(), traces.begin() + 60), params, {}, 3);
    const auto entry = evaluate_trained(trained, traces, sorted, 3);
    CHECK(entry.correct.size() == 20);
}

TEST_CASE("explanation bundle for a forest") {
    const auto& traces = corpus();
    const std::vector<SyscallTrace> train(traces.begin(), traces.begin() + 60), test(traces.begin() + 60, traces.end());
    const auto model = train_model(ModelKind::hist_rf, train, fast_params(), {}, 2);
    ExplainConfig cfg;
    cfg.samples = 6;
    cfg.lime.perturbations = 300;
    cfg.table_features = 10;
    cfg.rule_depth = 3;
    const auto bundle = explain_model(model, train, test, cfg, 2);
    CHECK(bundle.local.size() == 6);
    CHECK(bundle.names.size() == model.vocabulary().width());
    CHECK(bundle.importance.size() == bundle.names.size());
    CHECK(std::accumulate(bundle.importance.begin(), bundle.importance.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(bundle.marks.size() == 10);
    CHECK_FALSE(bundle.rules.empty());
    for (const auto& r : bundle.rules) CHECK(r.conditions.size() <= 3);
    REQUIRE_FALSE(bundle.summaries.empty());
    CHECK(bundle.summaries.front().group == explain::Group::all);
    const auto j = to_json(bundle);
    CHECK(j["local"].size() == 6);
    const auto text = render_explanations(bundle);
    CHECK(text.find("if ") != std::string::npos);
    CHECK(text.find("Goodware") != std::string::npos);

    const auto again = explain_model(model, train, test, cfg, 2);
    CHECK(to_json(again).dump() == j.dump());
}
