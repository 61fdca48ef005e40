// Acceptance suite: one PASS/FAIL line per criterion, with its runtime budget.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dynmal/datagen.hpp"
#include "dynmal/eval.hpp"
#include "dynmal/explain.hpp"
#include "dynmal/forest.hpp"
#include "dynmal/pipeline.hpp"
#include "dynmal/random.hpp"
#include "dynmal/reservoir.hpp"
#include "dynmal/stats.hpp"
#include "dynmal/trace.hpp"

#ifndef DYNMAL_CLI
#define DYNMAL_CLI "dynmal"
#endif

using namespace dynmal;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- 1 ----

Outcome metric_oracle() {
    Rng rng = make_rng(1, 0);
    double worst = 0.0;
    bool counts_ok = true;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto n = 1 + uniform_index(rng, 200);
        std::vector<Label> p(n), t(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = uniform01(rng) < 0.5 ? Label::malware : Label::goodware;
            t[i] = uniform01(rng) < 0.5 ? Label::malware : Label::goodware;
        }
        double tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool pm = p[i] == Label::malware, tm = t[i] == Label::malware;
            tp += pm && tm;
            fp += pm && !tm;
            tn += !pm && !tm;
            fn += !pm && tm;
        }
        const auto m = eval::compute_metrics(p, t);
        counts_ok &= m.counts.tp == tp && m.counts.fp == fp && m.counts.tn == tn && m.counts.fn == fn;
        const double acc = (tp + tn) / static_cast<double>(n);
        const double mre = tp + fn > 0 ? tp / (tp + fn) : 1.0;
        const double mpr = tp + fp > 0 ? tp / (tp + fp) : (tp + fn == 0 ? 1.0 : 0.0);
        double caa;
        if (tp + fn > 0 && tn + fp > 0) caa = (tp / (tp + fn) + tn / (tn + fp)) / 2;
        else caa = tp + fn > 0 ? tp / (tp + fn) : tn / (tn + fp);
        worst = std::max({worst, std::abs(m.metrics.acc - acc), std::abs(m.metrics.mre - mre),
                          std::abs(m.metrics.mpr - mpr), std::abs(m.metrics.caa - caa)});
    }
    return {counts_ok && worst <= 1e-12, "max abs deviation " + fmt("%.3g", worst)};
}

// ---- 2 ----

Outcome skew_reproduction() {
    const auto plan = datagen::layout(datagen::reference_shape("distributed"));
    const eval::LabeledIndex index{plan.labels, plan.observed_at};
    const auto s = datagen::reference_counts("distributed");
    const auto split = eval::split_distributed(
        index, eval::SplitCounts{s.train_goodware, s.test_goodware, s.train_malware, s.test_malware},
        {s.test_goodware, s.test_malware}, 0);
    std::vector<Label> truth, predicted;
    std::size_t false_positives = 0;
    for (auto i : split.test) {
        truth.push_back(index.labels[i]);
        // Stub: flags every malware sample and the first 142 goodware samples.
        if (index.labels[i] == Label::malware) predicted.push_back(Label::malware);
        else predicted.push_back(false_positives++ < 142 ? Label::malware : Label::goodware);
    }
    const auto m = eval::compute_metrics(predicted, truth);
    const bool shape = m.counts.tn + m.counts.fp == 4728 && m.counts.tp + m.counts.fn == 45;
    const bool ok = shape && m.counts.fp == 142 && std::abs(m.metrics.mpr - 45.0 / 187.0) <= 0.0005 &&
                    m.metrics.mpr >= 0.2406 - 0.0005 && m.metrics.mpr <= 0.2406 + 0.0005 && m.metrics.mre == 1.0 &&
                    m.metrics.caa >= 0.98;
    return {ok, "test 4728/45, MPr " + fmt("%.4f", m.metrics.mpr) + ", MRe " + fmt("%.3f", m.metrics.mre) + ", CAA " +
                    fmt("%.4f", m.metrics.caa)};
}

// ---- 3 ----

Outcome sidak_constant() {
    const double a = stats::sidak_alpha(0.05, 15);
    const double oracle = 1.0 - std::pow(0.95, 1.0 / 15.0);
    return {std::abs(a - 0.003413) <= 1e-6 && std::abs(a - oracle) <= 1e-15, "alpha " + fmt("%.7f", a)};
}

// ---- 4 ----

double binomial_two_sided(std::size_t b, std::size_t c) {
    const std::size_t n = b + c, k = std::min(b, c);
    long double tail = 0.0L, coef = 1.0L;
    for (std::size_t i = 0; i <= k; ++i) {
        if (i > 0) coef = coef * static_cast<long double>(n - i + 1) / static_cast<long double>(i);
        tail += coef;
    }
    return std::min(1.0, static_cast<double>(2.0L * tail / std::pow(2.0L, static_cast<long double>(n))));
}

Outcome cochran_mcnemar() {
    const std::vector<std::vector<int>> rows = {{1, 1, 0}, {1, 0, 0}, {1, 1, 1}, {1, 0, 0}};
    std::vector<std::vector<bool>> cols(3);
    double col[3] = {}, T = 0, row_sq = 0;
    for (const auto& r : rows) {
        double rt = 0;
        for (int j = 0; j < 3; ++j) {
            cols[j].push_back(r[j] != 0);
            col[j] += r[j];
            rt += r[j];
        }
        T += rt;
        row_sq += rt * rt;
    }
    const double k = 3, col_sq = col[0] * col[0] + col[1] * col[1] + col[2] * col[2];
    const double q_oracle = (k - 1) * (k * col_sq - T * T) / (k * T - row_sq);
    const auto q = stats::cochran_q(stats::CorrectnessMatrix({"a", "b", "c"}, cols));

    std::vector<bool> a, b;
    for (int i = 0; i < 10; ++i) a.push_back(true), b.push_back(false);
    for (int i = 0; i < 2; ++i) a.push_back(false), b.push_back(true);
    for (int i = 0; i < 30; ++i) a.push_back(i % 3 == 0), b.push_back(i % 3 == 0);
    const auto mc = stats::mcnemar(a, b);
    const double mc_oracle = binomial_two_sided(10, 2);

    const bool ok = std::abs(q.statistic - 4.667) <= 1e-3 && std::abs(q.statistic - 28.0 / 6.0) <= 1e-9 &&
                    std::abs(q.statistic - q_oracle) <= 1e-9 && std::abs(q.p_value - 0.097) <= 1e-3 &&
                    std::abs(q.p_value - std::exp(-q_oracle / 2)) <= 1e-10 && std::abs(mc.p_value - 0.0386) <= 1e-4 &&
                    std::abs(mc.p_value - mc_oracle) <= 1e-12 && mc.exact;
    return {ok, "Q " + fmt("%.9f", q.statistic) + " p " + fmt("%.4f", q.p_value) + "; McNemar p " +
                    fmt("%.5f", mc.p_value)};
}

// ---- 5 ----

datagen::CorpusConfig sorted_shape_corpus(std::uint64_t seed) {
    auto c = datagen::reference_shape("sorted", 0.01, datagen::default_config(seed));
    c.drift.magnitude = 0.3;
    return c;
}

pipeline::SplitConfig sorted_split() {
    const auto s = datagen::reference_counts("sorted", 0.01);
    pipeline::SplitConfig split;
    split.counts = eval::SplitCounts{s.train_goodware, s.test_goodware, s.train_malware, s.test_malware};
    return split;
}

Outcome end_to_end() {
    const auto corpus = datagen::generate_corpus(sorted_shape_corpus(0));
    const pipeline::ModelParams params;
    const pipeline::EncodingOptions encoding;
    const std::vector<pipeline::ModelKind> rf = {pipeline::ModelKind::hist_rf};
    const double sorted = pipeline::evaluate_models(corpus, rf, sorted_split(), params, encoding, 0).front().metrics.caa;
    pipeline::SplitConfig cv;
    cv.kind = pipeline::SplitKind::cv;
    cv.folds = 10;
    std::vector<double> cv_caa;
    for (std::uint64_t seed = 0; seed < 5; ++seed)
        cv_caa.push_back(pipeline::evaluate_models(corpus, rf, cv, params, encoding, seed).front().metrics.caa);
    const double cv_median = median(cv_caa);
    return {sorted >= 0.90 && cv_median >= sorted - 0.01,
            "sorted CAA " + fmt("%.4f", sorted) + ", median 10-fold CV CAA over 5 seeds " + fmt("%.4f", cv_median)};
}

// ---- 6 ----

Outcome length_sweep() {
    const auto corpus = datagen::generate_corpus(sorted_shape_corpus(0));
    const pipeline::ModelParams params;
    const std::vector<eval::NamedFactory> models = {
        pipeline::sweep_factory(pipeline::ModelKind::hist_rf, params, true, 0),
        pipeline::sweep_factory(pipeline::ModelKind::lsm, params, true, 0)};
    const std::vector<std::size_t> lengths = {100, 1000};
    const auto s = datagen::reference_counts("sorted", 0.01);
    const auto rows = eval::sweep_sequence_length(
        corpus, models, lengths, eval::SplitCounts{s.train_goodware, s.test_goodware, s.train_malware, s.test_malware},
        0);
    double caa[2][2] = {};  // [model][length]
    for (const auto& r : rows) caa[r.model == "lsm"][r.length == 1000] = r.metrics.caa;
    const double rf_rise = caa[0][1] - caa[0][0];
    const double lsm_change = std::abs(caa[1][1] - caa[1][0]);
    return {rf_rise >= 0.05 && lsm_change <= 0.03,
            "RF CAA " + fmt("%.4f", caa[0][0]) + " -> " + fmt("%.4f", caa[0][1]) + " (rise " + fmt("%.4f", rf_rise) +
                "), LSM CAA " + fmt("%.4f", caa[1][0]) + " -> " + fmt("%.4f", caa[1][1]) + " (change " +
                fmt("%.4f", lsm_change) + ")"};
}

// ---- 7 ----

Outcome rule_replay() {
    auto c = datagen::default_config(3, 150, 150);
    for (auto* fams : {&c.goodware, &c.malware})
        for (auto& wp : *fams) wp.profile.min_length = 300, wp.profile.max_length = 500;
    const auto corpus = datagen::generate_corpus(c);
    const auto vocab = build_vocabulary(corpus);
    const pipeline::EncodingOptions enc;
    const auto x = pipeline::histogram_matrix(corpus, vocab, enc);
    std::vector<Label> y;
    for (const auto& t : corpus) y.push_back(*t.label);
    forest::ForestParams fp;
    fp.trees = 30;
    const auto rf = forest::train_random_forest(x, y, fp);
    forest::TreeParams depth4;
    depth4.max_depth = 4;
    const std::vector<forest::DecisionTree> trees = {forest::train_decision_tree(x, y), explain::distill_tree(rf, x, depth4),
                                                     rf.trees().front()};
    Rng rng = make_rng(7, 0);
    std::size_t mismatches = 0, rules_total = 0;
    for (const auto& tree : trees) {
        const auto rules = explain::extract_rules(tree);
        rules_total += rules.size();
        for (int i = 0; i < 10000; ++i) {
            std::vector<double> v(vocab.width());
            double sum = 0.0;
            for (auto& e : v) sum += e = uniform01(rng) * uniform01(rng);
            for (auto& e : v) e /= sum;
            mismatches += explain::predict_with_rules(rules, v) != tree.predict(v).label;
        }
    }
    return {mismatches == 0, std::to_string(trees.size()) + " trees, " + std::to_string(rules_total) + " rules, " +
                                 std::to_string(mismatches) + " mismatches over 10000 vectors each"};
}

// ---- 8 ----

Outcome explanation_fidelity() {
    Rng rng = make_rng(8, 0);
    const std::size_t d = 24;
    std::vector<double> w(d, 0.0);
    for (std::size_t j = 0; j < d; j += 2) w[j] = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * (0.005 + 0.05 * uniform01(rng));
    std::vector<double> background(d);
    for (auto& v : background) v = uniform01(rng) / static_cast<double>(d);
    const explain::ScoreFunction model = [&](std::span<const double> x) {
        double s = 0.5;
        for (std::size_t j = 0; j < d; ++j) s += w[j] * (x[j] - background[j]) * static_cast<double>(d);
        return s;
    };
    std::size_t checked = 0, sign_errors = 0;
    double min_r2 = 1.0;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        std::vector<double> x(d);
        for (auto& v : x) v = uniform01(rng) / static_cast<double>(d);
        explain::LimeConfig cfg;
        cfg.seed = trial;
        const auto e = explain::lime_explain(model, x, background, cfg);
        min_r2 = std::min(min_r2, e.fidelity.value_or(0.0));
        double floor = 0.0;
        for (std::size_t j = 0; j < d; ++j)
            if (w[j] == 0.0) floor = std::max(floor, std::abs(e.slopes[j]) / static_cast<double>(d));
        for (std::size_t j = 0; j < d; ++j) {
            if (w[j] == 0.0 || std::abs(w[j]) < 5.0 * floor) continue;
            ++checked;
            sign_errors += (e.slopes[j] > 0) != (w[j] > 0);
        }
    }
    std::vector<double> x(d, 0.03);
    const auto flat = explain::lime_explain([](std::span<const double>) { return 0.42; }, x, background);
    double flat_max = 0.0;
    for (double v : flat.weights) flat_max = std::max(flat_max, std::abs(v));
    return {sign_errors == 0 && checked > 0 && min_r2 >= 0.8 && flat_max <= 1e-8 && !flat.fidelity,
            std::to_string(checked) + " coefficients above floor, " + std::to_string(sign_errors) +
                " sign errors, min R^2 " + fmt("%.4f", min_r2) + ", constant-model max |w| " + fmt("%.1e", flat_max)};
}

// ---- 9 ----

Outcome lsm_checks() {
    const auto topo = reservoir::build_liquid({}, 20, 9);
    bool fan_out = topo.neuron_count == 135;
    for (const auto& s : topo.input_map) fan_out &= s.size() == 40;

    MultiHotMatrix zero;
    zero.width = 20;
    for (std::int64_t t = 0; t < 50; ++t) {
        zero.time_steps.push_back(t);
        zero.counts.insert(zero.counts.end(), 20, 0u);
    }
    const auto zs = reservoir::run_liquid(topo, {}, zero);
    const bool zero_state = std::all_of(zs.features.begin(), zs.features.end(), [](double v) { return v == 0.0; });

    // Closed form: one pulse of current I at step s gives v = I >= threshold - reset, so one spike at s,
    // counted in window s / window_steps; with I below threshold the potential decays as I e^{-t/tau}.
    reservoir::LiquidConfig one;
    one.neuron_count = 1;
    one.input_fraction = 1.0;
    one.recurrent = false;
    one.input_weight_min = one.input_weight_max = 1.25;
    const reservoir::LifParams lif;
    MultiHotMatrix pulse;
    pulse.width = 1;
    pulse.time_steps = {120};
    pulse.counts = {1};
    const auto ps = reservoir::run_liquid(reservoir::build_liquid(one, 1, 0), lif, pulse);
    const bool spike = ps.features == std::vector<double>{0, 0, 1, 0};
    one.input_weight_min = one.input_weight_max = 0.9;
    std::vector<double> v;
    reservoir::run_liquid(reservoir::build_liquid(one, 1, 0), lif, pulse, {},
                          [&](std::size_t, std::span<const double> p, auto) { v.push_back(p[0]); });
    bool decay = true;
    for (std::size_t t = 120; t < 200; ++t)
        decay &= std::abs(v[t] - 0.9 * std::exp(-static_cast<double>(t - 120) / lif.membrane_time_constant)) <= 1e-12;

    Rng rng = make_rng(9, 0);
    MultiHotMatrix input;
    input.width = 20;
    for (std::int64_t t = 0; t < 200; ++t) {
        input.time_steps.push_back(t);
        for (int c = 0; c < 20; ++c) input.counts.push_back(uniform01(rng) < 0.1 ? 1u : 0u);
    }
    const auto again = reservoir::build_liquid({}, 20, 9);
    const bool deterministic = again == topo && reservoir::run_liquid(topo, {}, input).features ==
                                                    reservoir::run_liquid(again, {}, input).features;
    return {fan_out && zero_state && spike && decay && deterministic,
            std::string("135 neurons / fan-out 40: ") + (fan_out ? "yes" : "no") + ", zero state: " +
                (zero_state ? "yes" : "no") + ", single-pulse spike: " + (spike ? "yes" : "no") +
                ", closed-form decay: " + (decay ? "yes" : "no") + ", bit-identical: " + (deterministic ? "yes" : "no")};
}

// ---- 10 ----

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run(const std::string& args) {
    const std::string cmd = std::string("\"") + DYNMAL_CLI + "\" " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str());
}

Outcome determinism_persistence() {
    const fs::path dir = fs::temp_directory_path() / "dynmal_acceptance";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string();
    bool cli_ok = run("--seed 11 --reproducible --out " + d + "/corpus.jsonl gen") == 0;
    for (const char* name : {"r1", "r2"}) {
        cli_ok &= run("--seed 11 --reproducible --corpus " + d + "/corpus.jsonl --model hist-rf --model linear --out " + d +
                      "/" + name + ".json eval") == 0;
    }
    const bool reports_equal = cli_ok && !slurp(dir / "r1.json").empty() &&
                               slurp(dir / "r1.json") == slurp(dir / "r2.json") &&
                               slurp(dir / "r1.csv") == slurp(dir / "r2.csv");

    std::ifstream corpus_in(dir / "corpus.jsonl");
    const auto corpus = read_traces(corpus_in);
    pipeline::ModelParams params;
    params.forest.trees = 30;
    std::size_t mismatches = 0, checked = 0;
    for (auto kind : {pipeline::ModelKind::hist_rf, pipeline::ModelKind::linear, pipeline::ModelKind::tree,
                      pipeline::ModelKind::lsm, pipeline::ModelKind::ensemble}) {
        const auto model = pipeline::train_model(kind, corpus, params, {}, 11);
        const auto path = (dir / (pipeline::to_string(kind) + ".json")).string();
        pipeline::save_model(path, model, {"acceptance", 11, std::nullopt});
        const auto loaded = pipeline::load_model(path);
        for (const auto& t : corpus) {
            ++checked;
            mismatches += loaded.predict(t).score != model.predict(t).score;
        }
    }
    fs::remove_all(dir);
    return {reports_equal && mismatches == 0,
            std::string("CLI reports byte-identical: ") + (reports_equal ? "yes" : "no") + "; " +
                std::to_string(mismatches) + " score mismatches over " + std::to_string(checked) + " reloaded predictions"};
}

// ---- 11 ----

Outcome numerical_checks() {
    Rng rng = make_rng(11, 0);
    double worst = 0.0;
    for (int batch = 0; batch < 10; ++batch) {
        FeatureMatrix x(40, 9);
        std::vector<Label> y(40);
        for (std::size_t r = 0; r < 40; ++r) {
            for (std::size_t c = 0; c < 9; ++c) x(r, c) = 2.0 * uniform01(rng) - 1.0;
            y[r] = uniform01(rng) < 0.5 ? Label::malware : Label::goodware;
        }
        std::vector<double> w(9);
        for (auto& v : w) v = 2.0 * uniform01(rng) - 1.0;
        const double b = uniform01(rng) - 0.5, l2 = 0.05, h = 1e-6;
        const auto g = forest::logistic_loss(w, b, x, y, l2);
        for (std::size_t j = 0; j <= w.size(); ++j) {
            auto wp = w, wm = w;
            double bp = b, bm = b;
            if (j < w.size()) wp[j] += h, wm[j] -= h;
            else bp += h, bm -= h;
            const double numeric =
                (forest::logistic_loss(wp, bp, x, y, l2).loss - forest::logistic_loss(wm, bm, x, y, l2).loss) / (2 * h);
            const double exact = j < w.size() ? g.grad_weights[j] : g.grad_bias;
            worst = std::max(worst, std::abs(numeric - exact) / std::max(1e-8, std::max(std::abs(numeric), std::abs(exact))));
        }
    }
    const double p1 = stats::chi_square_sf(3.841, 1.0), p2 = stats::chi_square_sf(5.991, 2.0);
    return {worst <= 1e-5 && std::abs(p1 - 0.05) <= 1e-3 && std::abs(p2 - 0.05) <= 1e-3,
            "max gradient relative error " + fmt("%.2e", worst) + ", sf(3.841; 1) = " + fmt("%.5f", p1) +
                ", sf(5.991; 2) = " + fmt("%.5f", p2)};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Criterion> criteria = {
        {1, "metric oracle equivalence", 5, metric_oracle},
        {2, "skew reproduction", 1, skew_reproduction},
        {3, "Sidak constant", 1, sidak_constant},
        {4, "Cochran's Q / McNemar fidelity", 1, cochran_mcnemar},
        {5, "end-to-end synthetic pipeline", 120, end_to_end},
        {6, "sequence-length sweep shape", 600, length_sweep},
        {7, "rule replay", 10, rule_replay},
        {8, "explanation fidelity", 30, explanation_fidelity},
        {9, "LSM structural and dynamical checks", 10, lsm_checks},
        {10, "determinism and persistence", 30, determinism_persistence},
        {11, "numerical checks", 5, numerical_checks},
    };
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));

    int failures = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const bool in_budget = seconds <= c.budget_seconds;
        const bool pass = o.pass && in_budget;
        failures += !pass;
        std::printf("%s  %2d. %s: %s [%.2f s of %.0f s]%s\n", pass ? "PASS" : "FAIL", c.id, c.name.c_str(),
                    o.detail.c_str(), seconds, c.budget_seconds, in_budget ? "" : " over budget");
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
