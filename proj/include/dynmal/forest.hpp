#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dynmal/features.hpp"

namespace dynmal::forest {

struct TreeParams {
    std::size_t max_depth = 0;         // 0: unlimited
    std::size_t min_samples_leaf = 1;
    std::size_t max_features = 0;      // features examined per split; 0: all
    std::uint64_t seed = 0;
};

struct TreeNode {
    static constexpr std::int32_t kLeaf = -1;

    std::int32_t feature = kLeaf;
    double threshold = 0.0;            // go left iff x[feature] <= threshold
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::array<double, 2> counts{};    // training samples reaching the node [goodware, malware]

    bool is_leaf() const noexcept { return feature == kLeaf; }
    double total() const noexcept { return counts[0] + counts[1]; }
    double malware_fraction() const noexcept { return total() > 0 ? counts[1] / total() : 0.5; }
};

/// CART classification tree with Gini splits. Node 0 is the root.
class DecisionTree {
public:
    DecisionTree() = default;

    /// Validates the node array (child indices, acyclic, binary).
    DecisionTree(std::vector<TreeNode> nodes, std::size_t dimension, TreeParams params = {});

    const std::vector<TreeNode>& nodes() const noexcept { return nodes_; }
    std::size_t dimension() const noexcept { return dimension_; }
    const TreeParams& params() const noexcept { return params_; }
    std::size_t depth() const;
    std::size_t leaf_count() const;

    /// Index of the leaf the sample lands in.
    std::size_t leaf_for(std::span<const double> sample) const;
    /// Score is the leaf's malware fraction.
    Prediction predict(std::span<const double> sample) const;

    /// Unnormalized per-feature sum of (n_node * gini_node - n_left * gini_left
    /// - n_right * gini_right) / n_root.
    std::vector<double> impurity_decrease() const;

private:
    std::vector<TreeNode> nodes_;
    std::size_t dimension_ = 0;
    TreeParams params_;
};

/// Gini impurity of class counts.
double gini(double goodware, double malware);

DecisionTree train_decision_tree(const FeatureMatrix& samples, std::span<const Label> labels,
                                 const TreeParams& params = {});

/// Trains on a row subset (repeats allowed, used for bootstrap resamples).
DecisionTree train_decision_tree(const FeatureMatrix& samples, std::span<const Label> labels,
                                 std::span<const std::size_t> rows, const TreeParams& params);

struct ForestParams {
    std::size_t trees = 100;
    bool bootstrap = true;
    std::size_t max_features = 0;      // 0: ceil(sqrt(d))
    std::size_t max_depth = 0;
    std::size_t min_samples_leaf = 1;
    std::uint64_t seed = 0;
};

class RandomForest {
public:
    RandomForest() = default;
    RandomForest(std::vector<DecisionTree> trees, ForestParams params);

    const std::vector<DecisionTree>& trees() const noexcept { return trees_; }
    const ForestParams& params() const noexcept { return params_; }
    std::size_t dimension() const noexcept { return trees_.empty() ? 0 : trees_.front().dimension(); }

    /// Score is the fraction of trees voting malware.
    Prediction predict(std::span<const double> sample) const;

private:
    std::vector<DecisionTree> trees_;
    ForestParams params_;
};

RandomForest train_random_forest(const FeatureMatrix& samples, std::span<const Label> labels,
                                 const ForestParams& params = {});

/// Mean over trees of each tree's impurity_decrease(), normalized to sum 1.
/// All zero when no tree has a split.
std::vector<double> gini_importance(const RandomForest& forest);
std::vector<double> gini_importance(const DecisionTree& tree);

struct LinearParams {
    double learning_rate = 0.5;
    std::size_t epochs = 400;
    double l2 = 1e-4;
    bool standardize = true;
    std::uint64_t seed = 0;
};

/// Logistic-regression classifier: score = sigmoid(w . x + b).
class LinearModel {
public:
    LinearModel() = default;
    LinearModel(std::vector<double> weights, double bias, LinearParams params = {});

    const std::vector<double>& weights() const noexcept { return weights_; }
    double bias() const noexcept { return bias_; }
    const LinearParams& params() const noexcept { return params_; }
    std::size_t dimension() const noexcept { return weights_.size(); }

    double margin(std::span<const double> sample) const;
    Prediction predict(std::span<const double> sample) const;

private:
    std::vector<double> weights_;
    double bias_ = 0.0;
    LinearParams params_;
};

struct LossGradient {
    double loss = 0.0;
    std::vector<double> grad_weights;
    double grad_bias = 0.0;
};

/// Mean logistic loss plus (l2 / 2) * ||w||^2, and its gradient.
LossGradient logistic_loss(std::span<const double> weights, double bias, const FeatureMatrix& samples,
                           std::span<const Label> labels, double l2);

LinearModel train_linear(const FeatureMatrix& samples, std::span<const Label> labels,
                         const LinearParams& params = {});

// Persistence. Payloads carry {"format_version": 1, "kind": ...}.
nlohmann::json to_json(const DecisionTree& tree);
nlohmann::json to_json(const RandomForest& forest);
nlohmann::json to_json(const LinearModel& model);
DecisionTree tree_from_json(const nlohmann::json& j);
RandomForest forest_from_json(const nlohmann::json& j);
LinearModel linear_from_json(const nlohmann::json& j);

}  // namespace dynmal::forest
