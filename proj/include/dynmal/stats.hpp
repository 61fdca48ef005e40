#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace dynmal::stats {

/// Entry (i, j) is 1 iff model j classified sample i correctly.
class CorrectnessMatrix {
public:
    CorrectnessMatrix(std::vector<std::string> models, std::vector<std::vector<bool>> columns);

    std::size_t samples() const noexcept { return columns_.empty() ? 0 : columns_.front().size(); }
    std::size_t models() const noexcept { return columns_.size(); }
    const std::vector<std::string>& names() const noexcept { return names_; }
    const std::vector<bool>& column(std::size_t model) const { return columns_.at(model); }
    bool at(std::size_t sample, std::size_t model) const { return columns_[model][sample]; }

private:
    std::vector<std::string> names_;
    std::vector<std::vector<bool>> columns_;
};

/// Upper tail P(X >= x) of a chi-square distribution.
double chi_square_sf(double x, double degrees_of_freedom);

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

/// Omnibus test over k >= 3 models; all-constant rows give Q = 0, p = 1.
TestResult cochran_q(const CorrectnessMatrix& matrix);

struct McNemarResult {
    double statistic = 0.0;  // continuity-corrected chi-square, reported on both branches
    double p_value = 1.0;
    std::size_t b = 0;       // a correct, b wrong
    std::size_t c = 0;       // a wrong, b correct
    bool exact = false;
};

inline constexpr std::size_t kExactMcNemarBelow = 25;

/// Exact two-sided binomial test when b + c < 25, else the continuity-corrected
/// chi-square statistic with one degree of freedom.
McNemarResult mcnemar(const std::vector<bool>& a, const std::vector<bool>& b);

/// Family-wise corrected per-test alpha: 1 - (1 - alpha)^(1/m).
double sidak_alpha(double alpha, std::size_t m);

struct PairResult {
    McNemarResult test;
    bool significant = false;
};

struct SignificanceMatrix {
    std::vector<std::string> models;
    double alpha = 0.05;
    double corrected_alpha = 0.05;
    std::size_t comparisons = 0;           // m
    std::optional<TestResult> omnibus;     // absent when fewer than three models
    bool gated = false;                    // omnibus failed to reject; pairs not tested
    std::vector<std::vector<std::optional<PairResult>>> pairs;  // symmetric, empty diagonal

    const std::optional<PairResult>& pair(std::size_t i, std::size_t j) const { return pairs.at(i).at(j); }
};

SignificanceMatrix pairwise_significance(const CorrectnessMatrix& matrix, double alpha = 0.05);

/// YES/NO table, one row and column per model.
std::string render_table(const SignificanceMatrix& sig);

nlohmann::json to_json(const SignificanceMatrix& sig);

}  // namespace dynmal::stats
