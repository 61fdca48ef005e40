#include "dynmal/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "dynmal/error.hpp"
#include "dynmal/parallel.hpp"
#include "dynmal/random.hpp"

namespace dynmal::explain {

namespace {

std::string feature_name(std::span<const std::string> names, std::size_t i) {
    return i < names.size() ? names[i] : "f" + std::to_string(i);
}

std::string format_number(const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

std::vector<std::size_t> rank_by_magnitude(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(values[a]) > std::abs(values[b]); });
    return order;
}

}  // namespace

LocalExplanation lime_explain(const ScoreFunction& model, std::span<const double> sample,
                              std::span<const double> background, const LimeConfig& config) {
    const std::size_t d = sample.size();
    if (d == 0) throw ValidationError("cannot explain an empty sample");
    if (background.size() != d) throw DimensionError("background width does not match sample");
    if (config.perturbations < 2) throw ValidationError("LIME needs at least 2 perturbations");
    if (!(config.mask_probability > 0.0 && config.mask_probability < 1.0))
        throw ValidationError("mask probability must lie in (0, 1)");
    if (config.ridge < 0.0) throw ValidationError("ridge strength must be non-negative");

    LocalExplanation out;
    out.kernel_width = config.kernel_width > 0.0 ? config.kernel_width : 0.75 * std::sqrt(static_cast<double>(d));
    out.perturbations = config.perturbations;
    out.seed = config.seed;
    out.score = model(sample);

    const std::size_t p = config.perturbations;
    // Row 0 is the unperturbed sample; the rest mask features independently.
    std::vector<std::uint8_t> kept(p * d, 1);
    Rng rng = make_rng(config.seed, 0);
    for (std::size_t r = 1; r < p; ++r)
        for (std::size_t j = 0; j < d; ++j) kept[r * d + j] = uniform01(rng) >= config.mask_probability ? 1 : 0;

    std::vector<double> scores(p);
    scores[0] = out.score;
    parallel_for(p - 1, [&](std::size_t i) {
        const std::size_t r = i + 1;
        std::vector<double> x(d);
        for (std::size_t j = 0; j < d; ++j) x[j] = kept[r * d + j] ? sample[j] : background[j];
        scores[r] = model(x);
    });

    out.slopes.assign(d, 0.0);
    out.weights.assign(d, 0.0);
    const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end());
    if (*hi - *lo <= 1e-15) {
        out.intercept = out.score;
        out.top = rank_by_magnitude(out.weights);
        if (config.top_k > 0 && out.top.size() > config.top_k) out.top.resize(config.top_k);
        return out;
    }

    Eigen::MatrixXd u(p, d);
    Eigen::VectorXd y(p), pi(p);
    const double w2 = out.kernel_width * out.kernel_width;
    for (std::size_t r = 0; r < p; ++r) {
        std::size_t masked = 0;
        for (std::size_t j = 0; j < d; ++j) {
            const bool keep = kept[r * d + j] != 0;
            masked += keep ? 0 : 1;
            u(r, j) = keep ? sample[j] - background[j] : 0.0;
        }
        pi(r) = std::exp(-static_cast<double>(masked) / w2);
        y(r) = scores[r];
    }

    const double total = pi.sum();
    const Eigen::RowVectorXd u_mean = (pi.transpose() * u) / total;
    const double y_mean = pi.dot(y) / total;
    const Eigen::MatrixXd uc = u.rowwise() - u_mean;
    const Eigen::VectorXd yc = y.array() - y_mean;
    Eigen::MatrixXd gram = uc.transpose() * pi.asDiagonal() * uc;
    gram.diagonal().array() += config.ridge;
    const Eigen::VectorXd beta = gram.ldlt().solve(uc.transpose() * pi.asDiagonal() * yc);

    out.intercept = y_mean - u_mean.dot(beta);
    const Eigen::VectorXd residual = yc - uc * beta;
    const double sse = (pi.array() * residual.array().square()).sum();
    const double sst = (pi.array() * yc.array().square()).sum();
    out.fidelity = sst > 0.0 ? 1.0 - sse / sst : 0.0;

    for (std::size_t j = 0; j < d; ++j) {
        out.slopes[j] = beta(static_cast<Eigen::Index>(j));
        out.weights[j] = -out.slopes[j] * (sample[j] - background[j]);
    }
    out.top = rank_by_magnitude(out.weights);
    if (config.top_k > 0 && out.top.size() > config.top_k) out.top.resize(config.top_k);
    return out;
}

std::string to_string(Group group) {
    switch (group) {
        case Group::all: return "all";
        case Group::correct_malware: return "correct-malware";
        case Group::misclassified_malware: return "misclassified-malware";
        case Group::correct_goodware: return "correct-goodware";
        case Group::misclassified_goodware: return "misclassified-goodware";
    }
    return "all";
}

Group group_from_string(const std::string& name) {
    for (Group g : {Group::all, Group::correct_malware, Group::misclassified_malware, Group::correct_goodware,
                    Group::misclassified_goodware})
        if (to_string(g) == name) return g;
    throw ValidationError("unknown explanation group: " + name);
}

bool in_group(const LocalExplanation& e, Group group) {
    if (group == Group::all) return true;
    if (!e.true_label) return false;
    const bool correct = Prediction::from_score(e.score).label == *e.true_label;
    switch (group) {
        case Group::correct_malware: return *e.true_label == Label::malware && correct;
        case Group::misclassified_malware: return *e.true_label == Label::malware && !correct;
        case Group::correct_goodware: return *e.true_label == Label::goodware && correct;
        case Group::misclassified_goodware: return *e.true_label == Label::goodware && !correct;
        case Group::all: break;
    }
    return true;
}

ExplanationSummary summarize_explanations(std::span<const LocalExplanation> explanations, Group group,
                                          std::size_t top_k) {
    ExplanationSummary s;
    s.group = group;
    std::vector<const LocalExplanation*> members;
    for (const auto& e : explanations)
        if (in_group(e, group)) members.push_back(&e);
    if (members.empty()) throw ValidationError("no explanations in group " + to_string(group));
    const std::size_t d = members.front()->weights.size();
    for (const auto* e : members)
        if (e->weights.size() != d) throw DimensionError("explanations have different feature counts");
    s.count = members.size();
    const auto n = static_cast<double>(s.count);

    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (const auto* e : members)
        for (std::size_t j = 0; j < d; ++j) mean[j] += e->weights[j];
    for (double& m : mean) m /= n;
    for (const auto* e : members)
        for (std::size_t j = 0; j < d; ++j) var[j] += (e->weights[j] - mean[j]) * (e->weights[j] - mean[j]);
    for (std::size_t j : rank_by_magnitude(mean)) {
        s.features.push_back({j, mean[j], std::sqrt(var[j] / n)});
        if (top_k > 0 && s.features.size() == top_k) break;
    }
    return s;
}

bool DecisionRule::matches(std::span<const double> x) const {
    return std::all_of(conditions.begin(), conditions.end(), [&](const Condition& c) { return c.holds(x); });
}

std::vector<DecisionRule> extract_rules(const forest::DecisionTree& tree) {
    std::vector<DecisionRule> rules;
    const auto& nodes = tree.nodes();
    if (nodes.empty()) return rules;
    struct Frame {
        std::size_t node;
        std::vector<Condition> path;
    };
    std::vector<Frame> stack{{0, {}}};
    while (!stack.empty()) {
        Frame f = std::move(stack.back());
        stack.pop_back();
        const auto& n = nodes[f.node];
        if (n.is_leaf()) {
            DecisionRule rule;
            rule.conditions = std::move(f.path);
            rule.counts = n.counts;
            rule.predicted = Prediction::from_score(n.malware_fraction()).label;
            rules.push_back(std::move(rule));
            continue;
        }
        const auto feature = static_cast<std::size_t>(n.feature);
        Frame right{static_cast<std::size_t>(n.right), f.path};
        right.path.push_back({feature, true, n.threshold});
        Frame left{static_cast<std::size_t>(n.left), std::move(f.path)};
        left.path.push_back({feature, false, n.threshold});
        stack.push_back(std::move(right));
        stack.push_back(std::move(left));
    }
    return rules;
}

Label predict_with_rules(std::span<const DecisionRule> rules, std::span<const double> x) {
    for (const auto& r : rules)
        if (r.matches(x)) return r.predicted;
    throw ValidationError("no rule matches the sample");
}

std::string render_rule(const DecisionRule& rule, std::span<const std::string> names) {
    std::string out;
    std::string indent;
    for (const auto& c : rule.conditions) {
        out += indent + "if " + feature_name(names, c.feature) + (c.greater ? " > " : " <= ") +
               format_number("%.3f", c.threshold) + ",\n";
        indent += "  ";
    }
    out += indent + "class=" + std::string(to_string(rule.predicted)) + ", [" +
           format_number("%6g.", rule.counts[0]) + " " + format_number("%6g.", rule.counts[1]) +
           "]  [goodware, malware]\n";
    return out;
}

std::string render_rules(std::span<const DecisionRule> rules, std::span<const std::string> names) {
    std::string out;
    for (std::size_t i = 0; i < rules.size(); ++i) {
        if (i > 0) out += "\n";
        out += render_rule(rules[i], names);
    }
    return out;
}

forest::DecisionTree distill_tree(const forest::RandomForest& forest, const FeatureMatrix& samples,
                                  const forest::TreeParams& params) {
    if (samples.rows() == 0) throw ValidationError("cannot distill on an empty sample set");
    std::vector<Label> teacher(samples.rows());
    for (std::size_t r = 0; r < samples.rows(); ++r) teacher[r] = forest.predict(samples.row(r)).label;
    return forest::train_decision_tree(samples, teacher, params);
}

std::vector<ClassFrequencyMark> class_frequency_marks(const FeatureMatrix& normalized, std::span<const Label> labels,
                                                      std::span<const std::size_t> features, double tie_tolerance) {
    if (labels.size() != normalized.rows()) throw DimensionError("label count does not match samples");
    std::array<double, 2> n{};
    for (Label l : labels) n[static_cast<int>(l)] += 1.0;
    if (n[0] == 0 || n[1] == 0) throw ValidationError("both classes must be present");
    std::vector<ClassFrequencyMark> marks;
    for (std::size_t f : features) {
        if (f >= normalized.cols()) throw DimensionError("feature index out of range");
        std::array<double, 2> sum{};
        for (std::size_t r = 0; r < normalized.rows(); ++r) sum[static_cast<int>(labels[r])] += normalized(r, f);
        ClassFrequencyMark m;
        m.feature = f;
        m.goodware_mean = sum[0] / n[0];
        m.malware_mean = sum[1] / n[1];
        const double larger = std::max(m.goodware_mean, m.malware_mean);
        if (larger <= 0.0 || std::abs(m.goodware_mean - m.malware_mean) <= tie_tolerance * larger)
            m.mark = Mark::tie;
        else
            m.mark = m.goodware_mean > m.malware_mean ? Mark::goodware : Mark::malware;
        marks.push_back(m);
    }
    return marks;
}

std::vector<std::size_t> top_features(std::span<const double> values, std::size_t k) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
    if (order.size() > k) order.resize(k);
    return order;
}

std::string render_importance_table(std::span<const ClassFrequencyMark> marks, std::span<const double> importance,
                                    std::span<const std::string> names) {
    std::size_t width = 7;
    for (const auto& m : marks) width = std::max(width, feature_name(names, m.feature).size());
    auto pad = [](std::string s, std::size_t w) {
        s.resize(std::max(s.size(), w), ' ');
        return s;
    };
    std::string out = pad("Feature", width) + " | Importance | Goodware | Malware\n";
    out += std::string(width, '-') + "-+------------+----------+--------\n";
    for (const auto& m : marks) {
        const double imp = m.feature < importance.size() ? importance[m.feature] : 0.0;
        const char* g = m.mark == Mark::goodware ? "X" : (m.mark == Mark::tie ? "-" : "");
        const char* w = m.mark == Mark::malware ? "X" : (m.mark == Mark::tie ? "-" : "");
        out += pad(feature_name(names, m.feature), width) + " | " + pad(format_number("%.4f", imp), 10) + " | " +
               pad(g, 8) + " | " + w + "\n";
    }
    return out;
}

namespace {

std::string bars(const std::vector<std::pair<std::size_t, double>>& rows, std::span<const std::string> names) {
    constexpr int kHalf = 20;
    double scale = 0.0;
    std::size_t width = 0;
    for (const auto& [f, v] : rows) {
        scale = std::max(scale, std::abs(v));
        width = std::max(width, feature_name(names, f).size());
    }
    std::string out;
    for (const auto& [f, v] : rows) {
        const int len = scale > 0 ? static_cast<int>(std::lround(kHalf * std::abs(v) / scale)) : 0;
        std::string left(kHalf, ' '), right(kHalf, ' ');
        if (v < 0)
            std::fill(left.end() - len, left.end(), '#');
        else
            std::fill(right.begin(), right.begin() + len, '#');
        std::string name = feature_name(names, f);
        name.resize(width, ' ');
        out += name + " " + left + "|" + right + " " + format_number("%+.5f", v) + "\n";
    }
    return out;
}

}  // namespace

std::string render_bars(const ExplanationSummary& summary, std::span<const std::string> names) {
    std::vector<std::pair<std::size_t, double>> rows;
    for (const auto& f : summary.features) rows.emplace_back(f.feature, f.mean);
    return "group=" + to_string(summary.group) + " n=" + std::to_string(summary.count) +
           "  (malware <- | -> goodware)\n" + bars(rows, names);
}

std::string render_bars(const LocalExplanation& e, std::span<const std::string> names) {
    std::vector<std::pair<std::size_t, double>> rows;
    for (std::size_t f : e.top) rows.emplace_back(f, e.weights[f]);
    return "sample=" + e.sample_id + " score=" + format_number("%.4f", e.score) +
           "  (malware <- | -> goodware)\n" + bars(rows, names);
}

nlohmann::json to_json(const LocalExplanation& e, std::span<const std::string> names) {
    nlohmann::json features = nlohmann::json::array();
    for (std::size_t f : e.top)
        features.push_back({{"feature", feature_name(names, f)},
                            {"index", f},
                            {"weight", e.weights[f]},
                            {"slope", e.slopes[f]}});
    nlohmann::json j = {{"sample_id", e.sample_id},
                        {"score", e.score},
                        {"predicted", to_string(Prediction::from_score(e.score).label)},
                        {"intercept", e.intercept},
                        {"kernel_width", e.kernel_width},
                        {"perturbations", e.perturbations},
                        {"seed", e.seed},
                        {"approximate_input", e.approximate_input},
                        {"features", features}};
    j["fidelity"] = e.fidelity ? nlohmann::json(*e.fidelity) : nlohmann::json(nullptr);
    j["true_label"] = e.true_label ? nlohmann::json(to_string(*e.true_label)) : nlohmann::json(nullptr);
    return j;
}

nlohmann::json to_json(const ExplanationSummary& s, std::span<const std::string> names) {
    nlohmann::json features = nlohmann::json::array();
    for (const auto& f : s.features)
        features.push_back({{"feature", feature_name(names, f.feature)},
                            {"index", f.feature},
                            {"mean", f.mean},
                            {"std", f.std}});
    return {{"group", to_string(s.group)}, {"count", s.count}, {"features", features}};
}

}  // namespace dynmal::explain
