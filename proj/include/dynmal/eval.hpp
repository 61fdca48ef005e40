#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dynmal/trace.hpp"

namespace dynmal::eval {

/// Labels and observation times of a dataset; samples live elsewhere and
/// are addressed by index.
struct LabeledIndex {
    std::vector<Label> labels;
    std::vector<std::int64_t> observed_at;

    std::size_t size() const noexcept { return labels.size(); }
    static LabeledIndex from_traces(std::span<const SyscallTrace> traces);
};

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Per-class counts for an explicit temporal split.
struct SplitCounts {
    std::size_t train_goodware = 0;
    std::size_t test_goodware = 0;
    std::size_t train_malware = 0;
    std::size_t test_malware = 0;
};

/// Temporal split: the earliest floor(fraction * N) samples train.
/// Equal timestamps keep their original index order.
Split split_sorted(const LabeledIndex& data, double train_fraction);

/// Temporal split honoring exact per-class counts; the earliest samples of
/// each class train, the next ones test. Throws if the result would not be
/// temporally ordered or a class has too few samples.
Split split_sorted(const LabeledIndex& data, const SplitCounts& counts);

/// Seeded k-fold partition, ignoring time.
std::vector<Split> split_kfold(const LabeledIndex& data, std::size_t k, std::uint64_t seed);

using TemporalCut = std::variant<double, SplitCounts>;

/// Test-set sizes after down-selection; nullopt keeps every sample of that class.
struct DownSelect {
    std::optional<std::size_t> goodware;
    std::optional<std::size_t> malware;
};

/// Temporal cut, then seeded random down-selection of the test set.
Split split_distributed(const LabeledIndex& data, const TemporalCut& cut, const DownSelect& target,
                        std::uint64_t seed);

// ---- metrics ----

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    std::size_t total() const noexcept { return tp + fp + tn + fn; }
    bool operator==(const ConfusionCounts&) const = default;
};

struct MetricSet {
    double acc = 0.0;
    double caa = 0.0;
    double mpr = 0.0;
    double mre = 0.0;
};

struct Metrics {
    MetricSet metrics;
    ConfusionCounts counts;
};

/// Malware is the positive class. Zero-denominator conventions:
///   mpr: tp+fp == 0 -> 1.0 when there is no malware, else 0.0
///   mre: tp+fn == 0 -> 1.0
///   caa: averaged over classes present in `truth` only
Metrics compute_metrics(std::span<const Label> predicted, std::span<const Label> truth);
MetricSet metrics_from_counts(const ConfusionCounts& counts);

/// Per-sample majority; an even split goes to malware.
std::vector<Label> majority_vote(std::span<const std::vector<Label>> per_model);

// ---- reports ----

struct ReportEntry {
    std::string model;
    std::string split;
    std::size_t length = 0;
    std::uint64_t seed = 0;
    MetricSet metrics;
    ConfusionCounts counts;
    std::vector<bool> correct;       // per test sample, in test order
    std::vector<std::string> sample_ids;
};

struct EvaluationReport {
    std::vector<ReportEntry> entries;
    std::string config_hash;
    std::optional<std::string> created_at;  // omitted for reproducible output
};

ReportEntry make_entry(std::string model, std::string split, std::size_t length,
                       std::uint64_t seed, std::span<const Label> predicted,
                       std::span<const Label> truth, std::vector<std::string> sample_ids = {});

/// Concatenates per-fold entries of one model into a single entry.
ReportEntry merge_entries(std::span<const ReportEntry> parts);

inline constexpr const char* kCsvHeader = "model,split,length,acc,caa,mpr,mre,tp,fp,tn,fn,seed";
std::string to_csv(const EvaluationReport& report);

void to_json(nlohmann::json& j, const EvaluationReport& report);
void from_json(const nlohmann::json& j, EvaluationReport& report);

// ---- sequence-length sweep ----

/// Trains on the given traces and returns a predictor.
using TraceModelFactory = std::function<std::function<Label(const SyscallTrace&)>(
    std::span<const SyscallTrace> train)>;

struct NamedFactory {
    std::string name;
    TraceModelFactory factory;
};

inline const std::vector<std::size_t> kDefaultSweepLengths = {100,  250,  500,  750, 1000,
                                                              2000, 3000, 4000, 5000};

/// For each length: truncate every trace, retrain each model from scratch
/// on the temporal split, and evaluate. One entry per (length, model).
std::vector<ReportEntry> sweep_sequence_length(std::span<const SyscallTrace> traces,
                                               std::span<const NamedFactory> models,
                                               std::span<const std::size_t> lengths,
                                               const TemporalCut& cut, std::uint64_t seed = 0);

/// LSB-first bitmap, base64 encoded.
std::string encode_bits(const std::vector<bool>& bits);
std::vector<bool> decode_bits(const std::string& text, std::size_t count);

}  // namespace dynmal::eval
