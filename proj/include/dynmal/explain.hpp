#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dynmal/features.hpp"
#include "dynmal/forest.hpp"

namespace dynmal::explain {

/// Malware score in [0, 1] of a histogram-space sample.
using ScoreFunction = std::function<double(std::span<const double>)>;

struct LimeConfig {
    std::size_t perturbations = 1000;
    double kernel_width = 0.0;      // 0: 0.75 * sqrt(d)
    double ridge = 1e-3;
    double mask_probability = 0.5;
    std::size_t top_k = 0;          // 0: keep every feature in `top`
    std::uint64_t seed = 0;
};

/// Local surrogate around one sample. Perturbations replace a random subset
/// of features by the background mean; the surrogate is a kernel-weighted
/// ridge regression of the malware score on the perturbed feature values.
struct LocalExplanation {
    std::string sample_id;
    std::vector<double> slopes;     // surrogate coefficient per feature (malware score per unit)
    /// Attribution per feature: -slope * (x - background). Negative values
    /// push towards malware, positive towards goodware.
    std::vector<double> weights;
    std::vector<std::size_t> top;   // features ranked by |weight|, truncated to top_k
    double intercept = 0.0;
    std::optional<double> fidelity; // weighted R^2; absent when the scores never vary
    double score = 0.0;             // model score of the unperturbed sample
    std::optional<Label> true_label;
    double kernel_width = 0.0;
    std::size_t perturbations = 0;
    std::uint64_t seed = 0;
    bool approximate_input = false; // model consumed a reconstructed sequence
};

LocalExplanation lime_explain(const ScoreFunction& model, std::span<const double> sample,
                              std::span<const double> background, const LimeConfig& config = {});

enum class Group { all, correct_malware, misclassified_malware, correct_goodware, misclassified_goodware };

std::string to_string(Group group);
Group group_from_string(const std::string& name);
bool in_group(const LocalExplanation& e, Group group);

struct FeatureStat {
    std::size_t feature = 0;
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
};

struct ExplanationSummary {
    Group group = Group::all;
    std::size_t count = 0;
    std::vector<FeatureStat> features;  // ranked by |mean|, top_k kept
};

inline constexpr std::size_t kReportedFeatures = 15;

ExplanationSummary summarize_explanations(std::span<const LocalExplanation> explanations, Group group,
                                          std::size_t top_k = kReportedFeatures);

// ---- rules ----

struct Condition {
    std::size_t feature = 0;
    bool greater = false;  // false: x <= threshold, true: x > threshold
    double threshold = 0.0;

    bool holds(std::span<const double> x) const {
        return greater ? x[feature] > threshold : x[feature] <= threshold;
    }
};

struct DecisionRule {
    std::vector<Condition> conditions;
    Label predicted = Label::malware;
    std::array<double, 2> counts{};  // [goodware, malware]

    bool matches(std::span<const double> x) const;
};

/// One rule per leaf, conditions along the root-to-leaf path.
std::vector<DecisionRule> extract_rules(const forest::DecisionTree& tree);

/// Label of the first matching rule.
Label predict_with_rules(std::span<const DecisionRule> rules, std::span<const double> x);

/// Nested `if feature <= threshold,` blocks ending in `class=..., [ g.  m.]`.
std::string render_rule(const DecisionRule& rule, std::span<const std::string> names);
std::string render_rules(std::span<const DecisionRule> rules, std::span<const std::string> names);

/// Fits a tree to the forest's own predictions on `samples`.
forest::DecisionTree distill_tree(const forest::RandomForest& forest, const FeatureMatrix& samples,
                                  const forest::TreeParams& params = {});

// ---- class frequency ----

enum class Mark { goodware, malware, tie };

struct ClassFrequencyMark {
    std::size_t feature = 0;
    Mark mark = Mark::tie;
    double goodware_mean = 0.0;
    double malware_mean = 0.0;
};

/// Compares per-class mean normalized frequencies; relative differences up to
/// `tie_tolerance` of the larger mean are ties.
std::vector<ClassFrequencyMark> class_frequency_marks(const FeatureMatrix& normalized, std::span<const Label> labels,
                                                      std::span<const std::size_t> features,
                                                      double tie_tolerance = 0.05);

/// Indices of the `k` largest values, ties by lower index.
std::vector<std::size_t> top_features(std::span<const double> values, std::size_t k);

/// Feature | Goodware | Malware table with X marks and "-" for ties.
std::string render_importance_table(std::span<const ClassFrequencyMark> marks, std::span<const double> importance,
                                    std::span<const std::string> names);

/// Signed text bars; malware-supporting weights extend left.
std::string render_bars(const ExplanationSummary& summary, std::span<const std::string> names);
std::string render_bars(const LocalExplanation& explanation, std::span<const std::string> names);

nlohmann::json to_json(const LocalExplanation& e, std::span<const std::string> names);
nlohmann::json to_json(const ExplanationSummary& s, std::span<const std::string> names);

}  // namespace dynmal::explain
