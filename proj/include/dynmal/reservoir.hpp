#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dynmal/features.hpp"
#include "dynmal/forest.hpp"
#include "dynmal/trace.hpp"

namespace dynmal::reservoir {

struct LiquidConfig {
    std::size_t neuron_count = 135;
    double input_fraction = 0.3;        // each channel drives floor(fraction * N) neurons
    double input_weight_min = 0.2;
    double input_weight_max = 0.8;
    bool recurrent = true;
    double recurrent_density = 0.1;
    double excitatory_fraction = 0.8;
    double spectral_radius = 0.9;       // bound on the spectral radius of |W|
};

struct Synapse {
    std::uint32_t target = 0;
    double weight = 0.0;

    bool operator==(const Synapse&) const = default;
};

/// Fixed random wiring of the liquid. Immutable once built.
struct LiquidTopology {
    std::size_t neuron_count = 0;
    std::vector<std::vector<Synapse>> input_map;  // per input channel
    std::vector<std::vector<Synapse>> recurrent;  // per source neuron
    std::vector<bool> excitatory;                 // per neuron
    std::uint64_t seed = 0;

    std::size_t channels() const noexcept { return input_map.size(); }
    bool operator==(const LiquidTopology&) const = default;
};

LiquidTopology build_liquid(const LiquidConfig& config, std::size_t channels, std::uint64_t seed);

struct LifParams {
    double membrane_time_constant = 30.0;  // ms
    double threshold = 1.0;
    double reset_potential = 0.0;
    std::size_t refractory_period = 2;     // steps
    double simulation_step = 1.0;          // ms
};

void validate(const LifParams& lif);

/// The liquid state is read as per-neuron spike counts in `windows`
/// consecutive windows of `window_steps` simulation steps each. Input past
/// the last window is not simulated.
struct StateWindows {
    std::size_t windows = 4;
    std::size_t window_steps = 50;

    std::size_t horizon() const noexcept { return windows * window_steps; }
};

struct LiquidStateVector {
    std::vector<double> features;  // neuron-major within each window: [w * N + n]
};

/// Per-step hook: step index, membrane potentials after the update, and
/// which neurons spiked on this step.
using StepObserver =
    std::function<void(std::size_t step, std::span<const double> potential, std::span<const std::uint8_t> spiked)>;

LiquidStateVector run_liquid(const LiquidTopology& topology, const LifParams& lif, const MultiHotMatrix& input,
                             const StateWindows& windows = {}, const StepObserver& observer = {});

// ---- readout ----

enum class ReadoutKind { linear, rbf_svm };

/// Linear readouts use `first` as the L2 strength; RBF readouts use
/// (first, second) = (sigma, box).
struct GridPoint {
    double first = 0.0;
    double second = 0.0;

    bool operator==(const GridPoint&) const = default;
};

struct SearchEntry {
    GridPoint point;
    double cv_loss = 0.0;
};

struct ReadoutSearch {
    ReadoutKind kind = ReadoutKind::linear;
    std::vector<GridPoint> grid;

    /// Five log-spaced L2 strengths.
    static ReadoutSearch linear_default();
    /// 5 x 5 log-spaced (sigma, box) grid.
    static ReadoutSearch rbf_default();
};

/// Soft-margin SVM with an RBF kernel on standardized features.
class SvmModel {
public:
    SvmModel() = default;
    SvmModel(std::vector<double> mean, std::vector<double> scale, FeatureMatrix support,
             std::vector<double> coefficients, double bias, double sigma, double box);

    double decision(std::span<const double> sample) const;
    /// Score is the logistic of the decision value.
    Prediction predict(std::span<const double> sample) const;

    const FeatureMatrix& support() const noexcept { return support_; }
    const std::vector<double>& coefficients() const noexcept { return coef_; }
    const std::vector<double>& mean() const noexcept { return mean_; }
    const std::vector<double>& scale() const noexcept { return scale_; }
    double bias() const noexcept { return bias_; }
    double sigma() const noexcept { return sigma_; }
    double box() const noexcept { return box_; }

private:
    std::vector<double> mean_, scale_;
    FeatureMatrix support_;
    std::vector<double> coef_;  // alpha_i * y_i
    double bias_ = 0.0;
    double sigma_ = 1.0;
    double box_ = 1.0;
};

/// Sequential minimal optimization on the dual.
SvmModel train_svm(const FeatureMatrix& samples, std::span<const Label> labels, double sigma, double box,
                   double tolerance = 1e-3);

class ReadoutModel {
public:
    ReadoutModel() = default;
    explicit ReadoutModel(forest::LinearModel linear, std::vector<SearchEntry> log = {}, GridPoint selected = {});
    explicit ReadoutModel(SvmModel svm, std::vector<SearchEntry> log = {}, GridPoint selected = {});

    ReadoutKind kind() const noexcept { return kind_; }
    Prediction predict(std::span<const double> state) const;

    const forest::LinearModel& linear() const { return linear_; }
    const SvmModel& svm() const { return svm_; }
    const std::vector<SearchEntry>& search_log() const noexcept { return log_; }
    const GridPoint& selected() const noexcept { return selected_; }

private:
    ReadoutKind kind_ = ReadoutKind::linear;
    forest::LinearModel linear_;
    SvmModel svm_;
    std::vector<SearchEntry> log_;
    GridPoint selected_;
};

/// Stratified `folds`-fold partition of sample indices; test indices per fold.
std::vector<std::vector<std::size_t>> stratified_folds(std::span<const Label> labels, std::size_t folds,
                                                       std::uint64_t seed);

/// Mean 0-1 loss of one grid point under stratified cross-validation.
double cross_validation_loss(const FeatureMatrix& states, std::span<const Label> labels, ReadoutKind kind,
                             const GridPoint& point, std::size_t folds, std::uint64_t seed);

/// Exhaustive search over `search.grid` by mean CV 0-1 loss (first minimum
/// wins), then refit on all samples.
ReadoutModel train_readout(const FeatureMatrix& states, std::span<const Label> labels,
                           const ReadoutSearch& search = ReadoutSearch::linear_default(), std::size_t folds = 10,
                           std::uint64_t seed = 0);

/// A complete liquid state machine classifier.
struct LsmModel {
    LiquidTopology topology;
    LifParams lif;
    StateWindows windows;
    ReadoutModel readout;

    Prediction predict(const MultiHotMatrix& input) const;
};

Prediction lsm_predict(const LsmModel& model, const MultiHotMatrix& input);

FeatureMatrix liquid_states(const LiquidTopology& topology, const LifParams& lif,
                            std::span<const MultiHotMatrix> inputs, const StateWindows& windows = {});

nlohmann::json to_json(const LsmModel& model);
LsmModel lsm_from_json(const nlohmann::json& j);

}  // namespace dynmal::reservoir
