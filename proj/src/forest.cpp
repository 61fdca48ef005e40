#include "dynmal/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "dynmal/parallel.hpp"
#include "dynmal/random.hpp"

namespace dynmal::forest {

using nlohmann::json;

double gini(double goodware, double malware) {
    const double n = goodware + malware;
    if (n <= 0.0) return 0.0;
    const double p = goodware / n, q = malware / n;
    return 1.0 - p * p - q * q;
}

namespace {

// n * gini(a, b), computed from counts so equal count pairs give equal bits.
double weighted_impurity(double a, double b) {
    const double n = a + b;
    return n > 0.0 ? n - (a * a + b * b) / n : 0.0;
}

void check_inputs(const FeatureMatrix& samples, std::span<const Label> labels) {
    if (samples.rows() == 0) throw ValidationError("training set is empty");
    if (samples.rows() != labels.size()) throw DimensionError("sample and label counts differ");
    if (samples.cols() == 0) throw DimensionError("samples have no features");
}

void check_dimension(std::size_t expected, std::span<const double> sample) {
    if (sample.size() != expected) {
        throw DimensionError("sample has " + std::to_string(sample.size()) + " features, model expects " +
                             std::to_string(expected));
    }
}

struct SplitChoice {
    bool found = false;
    double decrease = -1.0;
    std::size_t feature = 0;
    double threshold = 0.0;

    bool improved_by(double d, std::size_t f, double t) const {
        if (!found) return true;
        if (d != decrease) return d > decrease;
        if (f != feature) return f < feature;
        return t < threshold;
    }
};

class TreeBuilder {
public:
    TreeBuilder(const FeatureMatrix& x, std::span<const Label> y, const TreeParams& params)
        : x_(x), y_(y), params_(params), rng_(make_rng(params.seed, 0x7EE)) {
        order_.resize(x.cols());
    }

    std::vector<TreeNode> build(std::vector<std::size_t> rows) {
        rows_ = std::move(rows);
        grow(0, rows_.size(), 0);
        return std::move(nodes_);
    }

private:
    std::int32_t grow(std::size_t begin, std::size_t end, std::size_t depth) {
        TreeNode node;
        for (std::size_t i = begin; i < end; ++i) node.counts[static_cast<int>(y_[rows_[i]])] += 1.0;
        const auto id = static_cast<std::int32_t>(nodes_.size());
        nodes_.push_back(node);

        const std::size_t n = end - begin;
        const bool pure = node.counts[0] == 0.0 || node.counts[1] == 0.0;
        if (pure || (params_.max_depth && depth >= params_.max_depth) || n < 2 * params_.min_samples_leaf) {
            return id;
        }
        const auto split = best_split(begin, end, node.counts);
        if (!split.found) return id;

        auto mid = std::stable_partition(rows_.begin() + static_cast<std::ptrdiff_t>(begin),
                                         rows_.begin() + static_cast<std::ptrdiff_t>(end), [&](std::size_t r) {
                                             return x_(r, split.feature) <= split.threshold;
                                         });
        const auto cut = static_cast<std::size_t>(mid - rows_.begin());
        nodes_[static_cast<std::size_t>(id)].feature = static_cast<std::int32_t>(split.feature);
        nodes_[static_cast<std::size_t>(id)].threshold = split.threshold;
        const auto left = grow(begin, cut, depth + 1);
        const auto right = grow(cut, end, depth + 1);
        nodes_[static_cast<std::size_t>(id)].left = left;
        nodes_[static_cast<std::size_t>(id)].right = right;
        return id;
    }

    SplitChoice best_split(std::size_t begin, std::size_t end, const std::array<double, 2>& counts) {
        const std::size_t d = x_.cols();
        const std::size_t budget = params_.max_features == 0 ? d : std::min(params_.max_features, d);
        std::iota(order_.begin(), order_.end(), 0);
        for (std::size_t i = d; i > 1; --i) std::swap(order_[i - 1], order_[uniform_index(rng_, i)]);

        const double parent = weighted_impurity(counts[0], counts[1]);
        const std::size_t min_leaf = std::max<std::size_t>(1, params_.min_samples_leaf);
        SplitChoice best;
        std::size_t examined = 0;
        for (std::size_t k = 0; k < d && examined < budget; ++k) {
            const std::size_t f = order_[k];
            values_.clear();
            for (std::size_t i = begin; i < end; ++i) {
                values_.emplace_back(x_(rows_[i], f), static_cast<int>(y_[rows_[i]]));
            }
            std::sort(values_.begin(), values_.end());
            if (values_.front().first == values_.back().first) continue;  // constant here
            ++examined;

            std::array<double, 2> left{0.0, 0.0};
            const std::size_t n = values_.size();
            for (std::size_t i = 0; i + 1 < n; ++i) {
                left[values_[i].second] += 1.0;
                if (values_[i].first == values_[i + 1].first) continue;
                const std::size_t nl = i + 1;
                if (nl < min_leaf || n - nl < min_leaf) continue;
                const double decrease = parent - weighted_impurity(left[0], left[1]) -
                                        weighted_impurity(counts[0] - left[0], counts[1] - left[1]);
                const double lo = values_[i].first, hi = values_[i + 1].first;
                double threshold = lo + (hi - lo) / 2.0;
                if (!(threshold < hi)) threshold = lo;
                if (best.improved_by(decrease, f, threshold)) best = {true, decrease, f, threshold};
            }
        }
        return best;
    }

    const FeatureMatrix& x_;
    std::span<const Label> y_;
    TreeParams params_;
    Rng rng_;
    std::vector<std::size_t> rows_;
    std::vector<std::size_t> order_;
    std::vector<std::pair<double, int>> values_;
    std::vector<TreeNode> nodes_;
};

}  // namespace

DecisionTree::DecisionTree(std::vector<TreeNode> nodes, std::size_t dimension, TreeParams params)
    : nodes_(std::move(nodes)), dimension_(dimension), params_(params) {
    if (nodes_.empty()) throw ValidationError("tree has no nodes");
    const auto n = static_cast<std::int32_t>(nodes_.size());
    std::vector<int> parents(nodes_.size(), 0);
    for (const auto& node : nodes_) {
        if (node.is_leaf()) continue;
        if (node.feature < 0 || static_cast<std::size_t>(node.feature) >= dimension_) {
            throw ValidationError("tree node splits on a feature outside the dimension");
        }
        if (node.left <= 0 || node.right <= 0 || node.left >= n || node.right >= n || node.left == node.right) {
            throw ValidationError("tree node has invalid children");
        }
        ++parents[static_cast<std::size_t>(node.left)];
        ++parents[static_cast<std::size_t>(node.right)];
    }
    for (std::size_t i = 1; i < parents.size(); ++i) {
        if (parents[i] != 1) throw ValidationError("tree nodes do not form a tree");
    }
}

std::size_t DecisionTree::leaf_for(std::span<const double> sample) const {
    check_dimension(dimension_, sample);
    std::size_t at = 0;
    while (!nodes_[at].is_leaf()) {
        const auto& node = nodes_[at];
        at = static_cast<std::size_t>(sample[static_cast<std::size_t>(node.feature)] <= node.threshold ? node.left
                                                                                                       : node.right);
    }
    return at;
}

Prediction DecisionTree::predict(std::span<const double> sample) const {
    return Prediction::from_score(nodes_[leaf_for(sample)].malware_fraction());
}

std::size_t DecisionTree::depth() const {
    std::vector<std::size_t> depth(nodes_.size(), 0);
    std::size_t deepest = 0;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        const auto& node = nodes_[i];
        deepest = std::max(deepest, depth[i]);
        if (!node.is_leaf()) {
            depth[static_cast<std::size_t>(node.left)] = depth[i] + 1;
            depth[static_cast<std::size_t>(node.right)] = depth[i] + 1;
        }
    }
    return deepest;
}

std::size_t DecisionTree::leaf_count() const {
    return static_cast<std::size_t>(
        std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

std::vector<double> DecisionTree::impurity_decrease() const {
    std::vector<double> out(dimension_, 0.0);
    const double root = nodes_.front().total();
    if (root <= 0.0) return out;
    for (const auto& node : nodes_) {
        if (node.is_leaf()) continue;
        const auto& l = nodes_[static_cast<std::size_t>(node.left)];
        const auto& r = nodes_[static_cast<std::size_t>(node.right)];
        const double decrease = weighted_impurity(node.counts[0], node.counts[1]) -
                                weighted_impurity(l.counts[0], l.counts[1]) -
                                weighted_impurity(r.counts[0], r.counts[1]);
        out[static_cast<std::size_t>(node.feature)] += std::max(0.0, decrease) / root;
    }
    return out;
}

DecisionTree train_decision_tree(const FeatureMatrix& samples, std::span<const Label> labels,
                                 std::span<const std::size_t> rows, const TreeParams& params) {
    check_inputs(samples, labels);
    if (rows.empty()) throw ValidationError("training set is empty");
    TreeBuilder builder(samples, labels, params);
    return DecisionTree(builder.build({rows.begin(), rows.end()}), samples.cols(), params);
}

DecisionTree train_decision_tree(const FeatureMatrix& samples, std::span<const Label> labels,
                                 const TreeParams& params) {
    check_inputs(samples, labels);
    std::vector<std::size_t> rows(samples.rows());
    std::iota(rows.begin(), rows.end(), 0);
    return train_decision_tree(samples, labels, rows, params);
}

RandomForest::RandomForest(std::vector<DecisionTree> trees, ForestParams params)
    : trees_(std::move(trees)), params_(params) {
    if (trees_.empty()) throw ValidationError("forest needs at least one tree");
    for (const auto& t : trees_) {
        if (t.dimension() != trees_.front().dimension()) throw DimensionError("forest trees disagree on dimension");
    }
}

Prediction RandomForest::predict(std::span<const double> sample) const {
    check_dimension(dimension(), sample);
    std::size_t votes = 0;
    for (const auto& t : trees_) votes += t.predict(sample).label == Label::malware;
    return Prediction::from_score(static_cast<double>(votes) / static_cast<double>(trees_.size()));
}

RandomForest train_random_forest(const FeatureMatrix& samples, std::span<const Label> labels,
                                 const ForestParams& params) {
    check_inputs(samples, labels);
    if (params.trees == 0) throw ValidationError("forest needs at least one tree");
    const std::size_t n = samples.rows();
    const std::size_t max_features =
        params.max_features ? params.max_features
                            : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(samples.cols()))));
    std::vector<DecisionTree> trees(params.trees);
    parallel_for(params.trees, [&](std::size_t t) {
        std::vector<std::size_t> rows(n);
        if (params.bootstrap) {
            Rng rng = make_rng(params.seed, 2 * t);
            for (auto& r : rows) r = uniform_index(rng, n);
        } else {
            std::iota(rows.begin(), rows.end(), 0);
        }
        TreeParams tp{params.max_depth, params.min_samples_leaf, max_features, derive_seed(params.seed, 2 * t + 1)};
        trees[t] = train_decision_tree(samples, labels, rows, tp);
    });
    return RandomForest(std::move(trees), params);
}

std::vector<double> gini_importance(const DecisionTree& tree) {
    auto values = tree.impurity_decrease();
    const double total = std::accumulate(values.begin(), values.end(), 0.0);
    if (total > 0.0) {
        for (auto& v : values) v /= total;
    }
    return values;
}

std::vector<double> gini_importance(const RandomForest& forest) {
    std::vector<double> values(forest.dimension(), 0.0);
    for (const auto& t : forest.trees()) {
        const auto part = t.impurity_decrease();
        for (std::size_t f = 0; f < values.size(); ++f) values[f] += part[f];
    }
    const double total = std::accumulate(values.begin(), values.end(), 0.0);
    if (total > 0.0) {
        // The mean over trees cancels in the normalization.
        for (auto& v : values) v /= total;
    }
    return values;
}

// ---- linear ----

LinearModel::LinearModel(std::vector<double> weights, double bias, LinearParams params)
    : weights_(std::move(weights)), bias_(bias), params_(params) {
    for (double w : weights_) {
        if (!std::isfinite(w)) throw ValidationError("linear model weights must be finite");
    }
    if (!std::isfinite(bias_)) throw ValidationError("linear model bias must be finite");
}

double LinearModel::margin(std::span<const double> sample) const {
    check_dimension(weights_.size(), sample);
    double m = bias_;
    for (std::size_t i = 0; i < sample.size(); ++i) m += weights_[i] * sample[i];
    return m;
}

namespace {

double sigmoid(double m) {
    if (m >= 0.0) return 1.0 / (1.0 + std::exp(-m));
    const double e = std::exp(m);
    return e / (1.0 + e);
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

}  // namespace

Prediction LinearModel::predict(std::span<const double> sample) const {
    return Prediction::from_score(sigmoid(margin(sample)));
}

LossGradient logistic_loss(std::span<const double> weights, double bias, const FeatureMatrix& samples,
                           std::span<const Label> labels, double l2) {
    check_inputs(samples, labels);
    if (weights.size() != samples.cols()) throw DimensionError("weight vector does not match feature count");
    LossGradient out;
    out.grad_weights.assign(weights.size(), 0.0);
    const double inv_n = 1.0 / static_cast<double>(samples.rows());
    for (std::size_t i = 0; i < samples.rows(); ++i) {
        const auto x = samples.row(i);
        double m = bias;
        for (std::size_t j = 0; j < x.size(); ++j) m += weights[j] * x[j];
        const double y = labels[i] == Label::malware ? 1.0 : -1.0;
        out.loss += softplus(-y * m) * inv_n;
        const double g = -y * sigmoid(-y * m) * inv_n;
        for (std::size_t j = 0; j < x.size(); ++j) out.grad_weights[j] += g * x[j];
        out.grad_bias += g;
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < weights.size(); ++j) {
        norm += weights[j] * weights[j];
        out.grad_weights[j] += l2 * weights[j];
    }
    out.loss += 0.5 * l2 * norm;
    return out;
}

LinearModel train_linear(const FeatureMatrix& samples, std::span<const Label> labels, const LinearParams& params) {
    check_inputs(samples, labels);
    const std::size_t n = samples.rows(), d = samples.cols();
    std::vector<double> mean(d, 0.0), scale(d, 1.0);
    if (params.standardize) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < d; ++j) mean[j] += samples(i, j) / static_cast<double>(n);
        }
        for (std::size_t j = 0; j < d; ++j) {
            double var = 0.0;
            for (std::size_t i = 0; i < n; ++i) var += (samples(i, j) - mean[j]) * (samples(i, j) - mean[j]);
            const double sd = std::sqrt(var / static_cast<double>(n));
            scale[j] = sd > 0.0 ? sd : 1.0;
        }
    }
    FeatureMatrix z(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) z(i, j) = (samples(i, j) - mean[j]) / scale[j];
    }

    Rng rng = make_rng(params.seed, 0x11AE);
    std::vector<double> w(d);
    for (auto& v : w) v = (uniform01(rng) - 0.5) * 0.02;
    double b = 0.0;
    for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
        // Proximal step on the L2 term: stable for any strength.
        const auto lg = logistic_loss(w, b, z, labels, 0.0);
        const double shrink = 1.0 / (1.0 + params.learning_rate * params.l2);
        for (std::size_t j = 0; j < d; ++j) w[j] = (w[j] - params.learning_rate * lg.grad_weights[j]) * shrink;
        b -= params.learning_rate * lg.grad_bias;
    }
    // Fold the standardization back into raw-feature weights.
    std::vector<double> raw(d);
    double raw_bias = b;
    for (std::size_t j = 0; j < d; ++j) {
        raw[j] = w[j] / scale[j];
        raw_bias -= w[j] * mean[j] / scale[j];
    }
    return LinearModel(std::move(raw), raw_bias, params);
}

// ---- persistence ----

namespace {

json tree_params_json(const TreeParams& p) {
    return {{"max_depth", p.max_depth},
            {"min_samples_leaf", p.min_samples_leaf},
            {"max_features", p.max_features},
            {"seed", p.seed}};
}

TreeParams tree_params_from(const json& j) {
    return {j.at("max_depth").get<std::size_t>(), j.at("min_samples_leaf").get<std::size_t>(),
            j.at("max_features").get<std::size_t>(), j.at("seed").get<std::uint64_t>()};
}

json tree_body(const DecisionTree& tree) {
    json nodes = json::array();
    for (const auto& n : tree.nodes()) {
        nodes.push_back({n.feature, n.threshold, n.left, n.right, n.counts[0], n.counts[1]});
    }
    return {{"dimension", tree.dimension()}, {"params", tree_params_json(tree.params())}, {"nodes", nodes}};
}

DecisionTree tree_from_body(const json& j) {
    std::vector<TreeNode> nodes;
    for (const auto& n : j.at("nodes")) {
        TreeNode node;
        node.feature = n.at(0).get<std::int32_t>();
        node.threshold = n.at(1).get<double>();
        node.left = n.at(2).get<std::int32_t>();
        node.right = n.at(3).get<std::int32_t>();
        node.counts = {n.at(4).get<double>(), n.at(5).get<double>()};
        nodes.push_back(node);
    }
    return DecisionTree(std::move(nodes), j.at("dimension").get<std::size_t>(), tree_params_from(j.at("params")));
}

void expect_kind(const json& j, const char* kind) {
    const auto version = j.at("format_version").get<int>();
    if (version != 1) throw ArchiveError("unsupported model format_version " + std::to_string(version));
    if (j.at("kind").get<std::string>() != kind) {
        throw ArchiveError(std::string("expected a ") + kind + " payload, got " + j.at("kind").get<std::string>());
    }
}

template <typename F>
auto guarded(F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw ParseError(std::string("model payload: ") + e.what());
    }
}

}  // namespace

json to_json(const DecisionTree& tree) {
    json j = tree_body(tree);
    j["format_version"] = 1;
    j["kind"] = "decision_tree";
    return j;
}

json to_json(const RandomForest& forest) {
    json trees = json::array();
    for (const auto& t : forest.trees()) trees.push_back(tree_body(t));
    const auto& p = forest.params();
    return {{"format_version", 1},
            {"kind", "random_forest"},
            {"params",
             {{"trees", p.trees},
              {"bootstrap", p.bootstrap},
              {"max_features", p.max_features},
              {"max_depth", p.max_depth},
              {"min_samples_leaf", p.min_samples_leaf},
              {"seed", p.seed}}},
            {"trees", trees}};
}

json to_json(const LinearModel& model) {
    const auto& p = model.params();
    return {{"format_version", 1},
            {"kind", "linear"},
            {"weights", model.weights()},
            {"bias", model.bias()},
            {"params",
             {{"learning_rate", p.learning_rate},
              {"epochs", p.epochs},
              {"l2", p.l2},
              {"standardize", p.standardize},
              {"seed", p.seed}}}};
}

DecisionTree tree_from_json(const json& j) {
    return guarded([&] {
        expect_kind(j, "decision_tree");
        return tree_from_body(j);
    });
}

RandomForest forest_from_json(const json& j) {
    return guarded([&] {
        expect_kind(j, "random_forest");
        const auto& p = j.at("params");
        ForestParams params{p.at("trees").get<std::size_t>(),       p.at("bootstrap").get<bool>(),
                            p.at("max_features").get<std::size_t>(), p.at("max_depth").get<std::size_t>(),
                            p.at("min_samples_leaf").get<std::size_t>(), p.at("seed").get<std::uint64_t>()};
        std::vector<DecisionTree> trees;
        for (const auto& t : j.at("trees")) trees.push_back(tree_from_body(t));
        return RandomForest(std::move(trees), params);
    });
}

LinearModel linear_from_json(const json& j) {
    return guarded([&] {
        expect_kind(j, "linear");
        const auto& p = j.at("params");
        LinearParams params{p.at("learning_rate").get<double>(), p.at("epochs").get<std::size_t>(),
                            p.at("l2").get<double>(), p.at("standardize").get<bool>(),
                            p.at("seed").get<std::uint64_t>()};
        return LinearModel(j.at("weights").get<std::vector<double>>(), j.at("bias").get<double>(), params);
    });
}

}  // namespace dynmal::forest
