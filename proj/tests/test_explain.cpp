#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "dynmal/error.hpp"
#include "dynmal/explain.hpp"
#include "dynmal/random.hpp"

using namespace dynmal;
using namespace dynmal::explain;

namespace {

constexpr Label G = Label::goodware;
constexpr Label M = Label::malware;

std::vector<double> random_vector(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    for (auto& x : v) x = uniform01(rng);
    return v;
}

ScoreFunction linear_score(std::vector<double> w, std::vector<double> center) {
    return [w = std::move(w), center = std::move(center)](std::span<const double> x) {
        double s = 0.5;
        for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * (x[j] - center[j]);
        return s;
    };
}

LocalExplanation with_weights(std::vector<double> w, Label truth, double score) {
    LocalExplanation e;
    e.weights = std::move(w);
    e.slopes.assign(e.weights.size(), 0.0);
    e.true_label = truth;
    e.score = score;
    return e;
}

forest::TreeNode leaf(double g, double m) {
    forest::TreeNode n;
    n.counts = {g, m};
    return n;
}

forest::TreeNode split(int f, double t, int l, int r, double g, double m) {
    forest::TreeNode n;
    n.feature = f;
    n.threshold = t;
    n.left = l;
    n.right = r;
    n.counts = {g, m};
    return n;
}

}  // namespace

TEST_CASE("LIME recovers an analytic linear model") {
    Rng rng = make_rng(1, 0);
    const std::size_t d = 12;
    std::vector<double> w(d, 0.0);
    w[0] = 0.08, w[3] = -0.05, w[5] = 0.02, w[7] = -0.12, w[10] = 0.04;
    const auto background = random_vector(rng, d);
    const auto model = linear_score(w, background);
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = random_vector(rng, d);
        LimeConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(trial);
        const auto e = lime_explain(model, x, background, cfg);
        REQUIRE(e.slopes.size() == d);
        for (std::size_t j = 0; j < d; ++j) {
            CHECK(std::abs(e.slopes[j] - w[j]) <= 0.02 * std::abs(w[j]) + 1e-3);
            CHECK(e.weights[j] == doctest::Approx(-e.slopes[j] * (x[j] - background[j])).epsilon(1e-12));
        }
        REQUIRE(e.fidelity);
        CHECK(*e.fidelity > 0.99);
        CHECK(e.score == doctest::Approx(model(x)).epsilon(1e-15));
    }
}

TEST_CASE("LIME slope signs match a logistic model above the noise floor") {
    Rng rng = make_rng(2, 0);
    const std::size_t d = 20;
    std::vector<double> w(d, 0.0);
    for (std::size_t j = 0; j < 10; ++j) w[j] = (j % 2 ? -1.0 : 1.0) * (0.5 + 0.3 * static_cast<double>(j));
    const auto background = random_vector(rng, d);
    const ScoreFunction model = [&](std::span<const double> x) {
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += w[j] * (x[j] - background[j]);
        return 1.0 / (1.0 + std::exp(-m));
    };
    for (int trial = 0; trial < 5; ++trial) {
        const auto x = random_vector(rng, d);
        LimeConfig cfg;
        cfg.seed = 100 + static_cast<std::uint64_t>(trial);
        const auto e = lime_explain(model, x, background, cfg);
        // Noise floor: largest attribution on features the model ignores.
        double floor = 0.0;
        for (std::size_t j = 10; j < d; ++j) floor = std::max(floor, std::abs(e.weights[j]));
        const double gain = e.score * (1.0 - e.score);
        std::size_t tested = 0;
        for (std::size_t j = 0; j < 10; ++j) {
            // Linearized true attribution of feature j around the sample.
            const double truth = w[j] * (x[j] - background[j]) * gain;
            if (std::abs(truth) < 5.0 * floor) continue;
            ++tested;
            CHECK((e.slopes[j] > 0) == (w[j] > 0));
            CHECK((e.weights[j] < 0) == (truth > 0));
        }
        CHECK(tested >= 3);
    }
}

TEST_CASE("LIME: constant model, determinism, scaling") {
    Rng rng = make_rng(3, 0);
    const std::size_t d = 8;
    const auto background = random_vector(rng, d);
    const auto x = random_vector(rng, d);

    const auto flat = lime_explain([](std::span<const double>) { return 0.7; }, x, background);
    for (double v : flat.weights) CHECK(std::abs(v) <= 1e-8);
    CHECK_FALSE(flat.fidelity);

    std::vector<double> w = {0.05, -0.02, 0.0, 0.03, -0.04, 0.01, 0.0, 0.02};
    LimeConfig cfg;
    cfg.seed = 9;
    cfg.top_k = 3;
    const auto a = lime_explain(linear_score(w, background), x, background, cfg);
    const auto b = lime_explain(linear_score(w, background), x, background, cfg);
    CHECK(a.weights == b.weights);
    CHECK(a.top == b.top);
    CHECK(a.top.size() == 3);
    CHECK(a.perturbations == 1000);
    CHECK(a.kernel_width == doctest::Approx(0.75 * std::sqrt(8.0)).epsilon(1e-15));
    for (std::size_t i = 1; i < a.top.size(); ++i)
        CHECK(std::abs(a.weights[a.top[i - 1]]) >= std::abs(a.weights[a.top[i]]));

    for (double c : {0.5, 2.0, 3.0}) {
        std::vector<double> scaled = w;
        for (auto& v : scaled) v *= c;
        const auto s = lime_explain(linear_score(scaled, background), x, background, cfg);
        for (std::size_t j = 0; j < d; ++j) CHECK(s.weights[j] == doctest::Approx(c * a.weights[j]).epsilon(1e-6).scale(1e-12));
    }
    CHECK_THROWS_AS(lime_explain(linear_score(w, background), std::vector<double>(3), background), DimensionError);
}

TEST_CASE("LIME sign convention: strong malware scores sum to negative weights") {
    Rng rng = make_rng(4, 0);
    const std::size_t d = 10;
    std::vector<double> w(d);
    for (auto& v : w) v = 2.0 * uniform01(rng) - 1.0;
    const auto background = random_vector(rng, d);
    const ScoreFunction model = [&](std::span<const double> x) {
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += 4.0 * w[j] * (x[j] - background[j]);
        return 1.0 / (1.0 + std::exp(-m));
    };
    std::size_t checked = 0;
    for (int trial = 0; trial < 200 && checked < 10; ++trial) {
        const auto x = random_vector(rng, d);
        if (model(x) < 0.9) continue;
        ++checked;
        LimeConfig cfg;
        cfg.seed = static_cast<std::uint64_t>(trial);
        const auto e = lime_explain(model, x, background, cfg);
        double sum = 0.0;
        for (double v : e.weights) sum += v;
        CHECK(sum < 0.0);
    }
    CHECK(checked == 10);
}

TEST_CASE("summaries match a brute-force two-pass computation") {
    const auto one = with_weights({0.3, -0.1, 0.0}, M, 0.9);
    const std::vector<LocalExplanation> single = {one};
    const auto s1 = summarize_explanations(single, Group::all);
    CHECK(s1.count == 1);
    REQUIRE(s1.features.size() == 3);
    CHECK(s1.features[0].feature == 0);
    CHECK(s1.features[0].mean == 0.3);
    CHECK(s1.features[1].mean == -0.1);
    for (const auto& f : s1.features) CHECK(f.std == 0.0);

    const std::vector<LocalExplanation> opposite = {with_weights({0.4, 0.0}, M, 0.9), with_weights({-0.4, 0.0}, M, 0.8)};
    const auto s2 = summarize_explanations(opposite, Group::all);
    CHECK(s2.features[0].mean == 0.0);
    CHECK(s2.features[0].std == doctest::Approx(0.4).epsilon(1e-15));

    Rng rng = make_rng(5, 0);
    std::vector<LocalExplanation> many;
    for (int i = 0; i < 40; ++i) {
        const Label truth = uniform01(rng) < 0.5 ? M : G;
        many.push_back(with_weights(random_vector(rng, 30), truth, uniform01(rng)));
        for (auto& v : many.back().weights) v -= 0.5;
    }
    for (Group g : {Group::all, Group::correct_malware, Group::misclassified_malware, Group::correct_goodware,
                    Group::misclassified_goodware}) {
        std::vector<const LocalExplanation*> members;
        for (const auto& e : many)
            if (in_group(e, g)) members.push_back(&e);
        if (members.empty()) {
            CHECK_THROWS_AS(summarize_explanations(many, g), ValidationError);
            continue;
        }
        const auto s = summarize_explanations(many, g, 15);
        CHECK(s.count == members.size());
        CHECK(s.features.size() == 15);
        for (std::size_t i = 1; i < s.features.size(); ++i)
            CHECK(std::abs(s.features[i - 1].mean) >= std::abs(s.features[i].mean));
        for (const auto& f : s.features) {
            double mean = 0.0;
            for (auto* e : members) mean += e->weights[f.feature];
            mean /= static_cast<double>(members.size());
            double var = 0.0;
            for (auto* e : members) var += (e->weights[f.feature] - mean) * (e->weights[f.feature] - mean);
            CHECK(f.mean == doctest::Approx(mean).epsilon(1e-14));
            CHECK(f.std == doctest::Approx(std::sqrt(var / static_cast<double>(members.size()))).epsilon(1e-12));
        }
    }
    CHECK(kReportedFeatures == 15);
}

TEST_CASE("group membership follows score and truth") {
    CHECK(in_group(with_weights({}, M, 0.7), Group::correct_malware));
    CHECK(in_group(with_weights({}, M, 0.5), Group::correct_malware));  // tie goes to malware
    CHECK(in_group(with_weights({}, M, 0.2), Group::misclassified_malware));
    CHECK(in_group(with_weights({}, G, 0.2), Group::correct_goodware));
    CHECK(in_group(with_weights({}, G, 0.6), Group::misclassified_goodware));
    CHECK(to_string(Group::correct_malware) == "correct-malware");
    CHECK(group_from_string("misclassified-malware") == Group::misclassified_malware);
    CHECK_THROWS(group_from_string("everything"));
}

TEST_CASE("rule extraction: structure and rendering") {
    const forest::DecisionTree single({leaf(3, 4)}, 2);
    const auto one = extract_rules(single);
    REQUIRE(one.size() == 1);
    CHECK(one[0].conditions.empty());
    CHECK(one[0].predicted == M);

    // Complete depth-2 tree.
    const forest::DecisionTree t({split(0, 0.315, 1, 2, 20, 20), split(1, 0.5, 3, 4, 15, 5), split(1, 0.2, 5, 6, 5, 15),
                                  leaf(10, 0), leaf(5, 5), leaf(0, 7), leaf(5, 8)},
                                 2);
    const auto rules = extract_rules(t);
    REQUIRE(rules.size() == 4);
    Rng rng = make_rng(6, 0);
    for (int i = 0; i < 2000; ++i) {
        const std::vector<double> x = {uniform01(rng), uniform01(rng)};
        int matched = 0;
        for (const auto& r : rules) matched += r.matches(x);
        CHECK(matched == 1);
    }
    const std::vector<std::string> names = {"NtQueryValueKey", "NtClose"};
    const auto text = render_rule(rules[0], names);
    CHECK(text == "if NtQueryValueKey <= 0.315,\n  if NtClose <= 0.500,\n    class=goodware, [    10.      0.]  [goodware, malware]\n");
    const auto all = render_rules(rules, names);
    CHECK(all.find("if NtQueryValueKey > 0.315,") != std::string::npos);
    CHECK(all.find("class=malware, [     5.      8.]") != std::string::npos);
    CHECK(std::count(all.begin(), all.end(), '\n') == 3 * 4 + 3);
}

TEST_CASE("rule replay equals tree prediction on 10,000 random vectors") {
    Rng rng = make_rng(7, 0);
    FeatureMatrix x(300, 6);
    std::vector<Label> y(300);
    for (std::size_t r = 0; r < 300; ++r) {
        for (std::size_t c = 0; c < 6; ++c) x(r, c) = uniform01(rng);
        y[r] = (x(r, 0) > 0.5) != (x(r, 3) > 0.3) || uniform01(rng) < 0.1 ? M : G;
    }
    forest::ForestParams fp;
    fp.trees = 20;
    const auto rf = forest::train_random_forest(x, y, fp);
    forest::TreeParams tp;
    tp.max_depth = 4;
    for (const auto& tree : {forest::train_decision_tree(x, y), distill_tree(rf, x, tp)}) {
        const auto rules = extract_rules(tree);
        CHECK(rules.size() == tree.leaf_count());
        for (int i = 0; i < 10000; ++i) {
            std::vector<double> v(6);
            for (auto& e : v) e = 1.2 * uniform01(rng) - 0.1;
            CHECK(predict_with_rules(rules, v) == tree.predict(v).label);
        }
    }
}

TEST_CASE("class frequency marks and the importance table") {
    const auto x = FeatureMatrix::from_rows({{0.0, 0.5, 0.30, 0.2},
                                             {0.0, 0.5, 0.31, 0.4},
                                             {0.2, 0.5, 0.30, 0.0},
                                             {0.4, 0.5, 0.30, 0.0}});
    const std::vector<Label> y = {G, G, M, M};
    const std::vector<std::size_t> features = {0, 1, 2, 3};
    const auto marks = class_frequency_marks(x, y, features, 0.05);
    REQUIRE(marks.size() == 4);
    CHECK(marks[0].mark == Mark::malware);  // only malware calls it
    CHECK(marks[0].malware_mean == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(marks[1].mark == Mark::tie);      // identical means
    CHECK(marks[2].mark == Mark::tie);      // within tolerance
    CHECK(marks[3].mark == Mark::goodware);
    CHECK(class_frequency_marks(x, y, features, 0.0)[2].mark == Mark::goodware);
    CHECK_THROWS_AS(class_frequency_marks(x, std::vector<Label>(4, G), features), ValidationError);

    const std::vector<double> importance = {0.4, 0.0, 0.1, 0.5};
    CHECK(top_features(importance, 2) == std::vector<std::size_t>{3, 0});
    CHECK(top_features(std::vector<double>{1, 1, 1}, 2) == std::vector<std::size_t>{0, 1});
    const std::vector<std::string> names = {"NtReadFile", "NtClose", "NtOpenKey", "NtWriteFile"};
    const auto table = render_importance_table(marks, importance, names);
    CHECK(table.rfind("Feature", 0) == 0);
    CHECK(table.find("Goodware") != std::string::npos);
    CHECK(table.find("NtReadFile  | 0.4000     |          | X") != std::string::npos);
    CHECK(table.find("NtClose     | 0.0000     | -        | -") != std::string::npos);
    CHECK(table.find("NtWriteFile | 0.5000     | X        | ") != std::string::npos);
}

TEST_CASE("bar rendering and JSON output") {
    Rng rng = make_rng(8, 0);
    const std::size_t d = 5;
    const auto background = random_vector(rng, d);
    const auto x = random_vector(rng, d);
    const std::vector<std::string> names = {"A", "B", "C", "D", "E"};
    LimeConfig cfg;
    cfg.top_k = 3;
    auto e = lime_explain(linear_score({0.1, -0.1, 0.05, 0.0, 0.02}, background), x, background, cfg);
    e.sample_id = "s1";
    e.true_label = M;
    const auto j = to_json(e, names);
    CHECK(j["sample_id"] == "s1");
    CHECK(j["features"].size() == 3);
    CHECK(j["features"][0]["feature"] == names[e.top[0]]);
    CHECK(j.contains("fidelity"));
    const auto bars = render_bars(e, names);
    CHECK(std::count(bars.begin(), bars.end(), '\n') >= 3);

    const std::vector<LocalExplanation> group = {e, e};
    const auto s = summarize_explanations(group, Group::all, 3);
    CHECK(to_json(s, names)["features"].size() == 3);
    CHECK(render_bars(s, names).find('|') != std::string::npos);
}
