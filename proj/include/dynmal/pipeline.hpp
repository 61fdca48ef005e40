#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dynmal/datagen.hpp"
#include "dynmal/eval.hpp"
#include "dynmal/explain.hpp"
#include "dynmal/forest.hpp"
#include "dynmal/reservoir.hpp"
#include "dynmal/stats.hpp"
#include "dynmal/trace.hpp"

namespace dynmal::pipeline {

enum class ModelKind { hist_rf, lsm, linear, tree, ensemble };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct EncodingOptions {
    std::size_t truncation = kDefaultTruncation;
    bool normalize = true;

    bool operator==(const EncodingOptions&) const = default;
};

/// Truncation that leaves every trace intact.
inline constexpr std::size_t kNoTruncation = std::numeric_limits<std::uint32_t>::max();

struct ModelParams {
    forest::ForestParams forest;
    forest::TreeParams tree;
    forest::LinearParams linear;
    reservoir::LiquidConfig liquid;
    reservoir::LifParams lif;
    reservoir::StateWindows windows;
    reservoir::ReadoutKind readout = reservoir::ReadoutKind::linear;
    std::size_t readout_folds = 5;
    std::vector<ModelKind> ensemble_members = {ModelKind::hist_rf, ModelKind::lsm, ModelKind::linear,
                                               ModelKind::tree};
};

/// A trained classifier bundled with the vocabulary and encoding it expects.
class TrainedModel {
public:
    using Ensemble = std::vector<TrainedModel>;
    using Payload = std::variant<forest::RandomForest, reservoir::LsmModel, forest::LinearModel,
                                 forest::DecisionTree, Ensemble>;

    TrainedModel(ModelKind kind, Payload payload, SyscallVocabulary vocab, EncodingOptions encoding);

    ModelKind kind() const noexcept { return kind_; }
    const Payload& payload() const noexcept { return payload_; }
    const SyscallVocabulary& vocabulary() const noexcept { return vocab_; }
    const EncodingOptions& encoding() const noexcept { return encoding_; }

    Prediction predict(const SyscallTrace& trace) const;

    /// Score of a histogram-space vector. LSM models rebuild an approximate
    /// multi-hot input by spreading counts uniformly over the simulated horizon.
    double histogram_score(std::span<const double> histogram) const;
    bool histogram_native() const;

    std::vector<double> histogram(const SyscallTrace& trace) const;

private:
    ModelKind kind_;
    Payload payload_;
    SyscallVocabulary vocab_;
    EncodingOptions encoding_;
};

/// Multi-hot matrix spreading histogram counts evenly over `steps` steps.
/// Normalized histograms are scaled to `total_calls` first.
MultiHotMatrix spread_histogram(std::span<const double> histogram, bool normalized, std::size_t total_calls,
                                std::size_t steps);

/// Builds the vocabulary from `train`, encodes, and fits the requested model.
TrainedModel train_model(ModelKind kind, std::span<const SyscallTrace> train, const ModelParams& params,
                         const EncodingOptions& encoding, std::uint64_t seed);

/// Histogram rows of `traces` (truncated per `encoding`).
FeatureMatrix histogram_matrix(std::span<const SyscallTrace> traces, const SyscallVocabulary& vocab,
                               const EncodingOptions& encoding);

std::vector<double> column_means(const FeatureMatrix& m);

// ---- archives ----

inline constexpr int kArchiveVersion = 1;

struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::optional<std::string> created_at;
};

/// Hex SHA-256.
std::string sha256_hex(const std::string& data);

/// Hash of the canonical (sorted-key, compact) serialization.
std::string json_hash(const nlohmann::json& j);

nlohmann::json to_archive(const TrainedModel& model, const Provenance& provenance);
/// Throws ArchiveError on version mismatch or checksum failure.
TrainedModel from_archive(const nlohmann::json& archive, Provenance* provenance = nullptr);

void save_model(const std::string& path, const TrainedModel& model, const Provenance& provenance);
TrainedModel load_model(const std::string& path, Provenance* provenance = nullptr);

// ---- configuration ----

enum class SplitKind { sorted, cv, distributed };

std::string to_string(SplitKind kind);
SplitKind split_kind_from_string(const std::string& name);

struct SplitConfig {
    SplitKind kind = SplitKind::sorted;
    double train_fraction = 0.8;
    std::optional<eval::SplitCounts> counts;  // overrides train_fraction
    std::size_t folds = 10;
    eval::DownSelect target;                  // distributed only
};

struct ExplainConfig {
    explain::LimeConfig lime;
    std::size_t samples = 20;       // test samples explained
    std::size_t top_k = explain::kReportedFeatures;
    std::size_t table_features = 20;
    double tie_tolerance = 0.05;
    std::size_t rule_depth = 4;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    struct Paths {
        std::string corpus;
        std::string vocabulary;
        std::string model_store;
        std::string report_dir;
    } paths;
    EncodingOptions encoding;
    std::vector<ModelKind> models = {ModelKind::hist_rf};
    ModelParams params;
    SplitConfig split;
    double alpha = 0.05;
    ExplainConfig explain;
    std::optional<datagen::CorpusConfig> corpus;  // generate instead of reading paths.corpus
};

void to_json(nlohmann::json& j, const PipelineConfig& config);
void from_json(const nlohmann::json& j, PipelineConfig& config);

std::string config_hash(const PipelineConfig& config);

/// Per-run seeds; every stochastic step derives from the master seed.
enum SeedStream : std::uint64_t { kCorpusStream = 1, kSplitStream = 2, kModelStream = 3, kExplainStream = 4 };

// ---- evaluation ----

/// Trains every requested model on each split and evaluates it on the
/// held-out samples. Ensembles vote over their members' predictions.
std::vector<eval::ReportEntry> evaluate_models(std::span<const SyscallTrace> corpus,
                                               std::span<const ModelKind> models, const SplitConfig& split,
                                               const ModelParams& params, const EncodingOptions& encoding,
                                               std::uint64_t seed);

/// Evaluates an already trained model on the test part of a split.
eval::ReportEntry evaluate_trained(const TrainedModel& model, std::span<const SyscallTrace> corpus,
                                   const SplitConfig& split, std::uint64_t seed);

/// Train/test indices of a single split regime (cv not allowed).
eval::Split make_split(std::span<const SyscallTrace> corpus, const SplitConfig& split, std::uint64_t seed);

/// Factory usable by the sequence-length sweep.
eval::NamedFactory sweep_factory(ModelKind kind, const ModelParams& params, bool normalize, std::uint64_t seed);

/// One column per entry of `split`, named by model. Entries must share sample order.
stats::CorrectnessMatrix correctness_matrix(const eval::EvaluationReport& report, const std::string& split);

/// Plain-text metric table.
std::string render_report(const eval::EvaluationReport& report);

// ---- explanation bundle ----

struct ExplanationBundle {
    std::vector<explain::LocalExplanation> local;
    std::vector<explain::ExplanationSummary> summaries;
    std::vector<explain::DecisionRule> rules;
    std::vector<explain::ClassFrequencyMark> marks;
    std::vector<double> importance;
    std::vector<std::string> names;
};

/// LIME over up to `config.samples` test traces, group summaries, forest
/// importance with class-frequency marks, and rules of a distilled tree.
ExplanationBundle explain_model(const TrainedModel& model, std::span<const SyscallTrace> train,
                                std::span<const SyscallTrace> test, const ExplainConfig& config,
                                std::uint64_t seed);

nlohmann::json to_json(const ExplanationBundle& bundle);
std::string render_explanations(const ExplanationBundle& bundle);

}  // namespace dynmal::pipeline
