#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "dynmal/trace.hpp"

namespace dynmal::datagen {

struct Motif {
    std::vector<std::string> calls;
    double probability = 0.0;  // chance the motif is spliced into a trace
};

enum class LengthLaw { uniform, log_uniform };

/// Generating distribution for one family of executables.
struct ClassProfile {
    std::vector<std::pair<std::string, double>> call_frequencies;
    std::vector<Motif> motifs;
    std::size_t min_length = 1000;
    std::size_t max_length = 2000;
    LengthLaw length_law = LengthLaw::uniform;
    double burstiness = 1.0;  // mean calls per occupied millisecond
};

struct WeightedProfile {
    double weight = 1.0;
    ClassProfile profile;
};

enum class DriftMode { frequency_shift, motif_swap };

struct DriftSchedule {
    double magnitude = 0.0;
    DriftMode mode = DriftMode::frequency_shift;
};

/// A block of consecutive observation times holding fixed class counts.
/// Labels are shuffled within a segment; segments never interleave, so a
/// temporal cut at a segment boundary reproduces the segment counts exactly.
struct Segment {
    std::size_t goodware = 0;
    std::size_t malware = 0;
};

struct CorpusConfig {
    std::uint64_t seed = 0;
    std::size_t goodware_count = 0;
    std::size_t malware_count = 0;
    std::vector<Segment> segments;  // empty: one segment holding both counts
    std::vector<WeightedProfile> goodware;
    std::vector<WeightedProfile> malware;
    DriftSchedule drift;
    std::int64_t timestamp_begin = 0;
    std::int64_t timestamp_end = 1'000'000;

    const std::vector<WeightedProfile>& families(Label label) const {
        return label == Label::malware ? malware : goodware;
    }
};

/// Throws ValidationError describing the first violated invariant.
void validate(const CorpusConfig& config);

/// Goodware and two malware families over a shared 24-call set. Goodware is
/// issued in sparser bursts; the malware families shift call frequencies in
/// opposite directions on a few calls so the class boundary is not linear.
CorpusConfig default_config(std::uint64_t seed = 0, std::size_t goodware = 100,
                            std::size_t malware = 100);

/// Segment layout of the temporal splits used in the reference evaluation.
/// `shape` is "sorted" or "distributed"; every count is multiplied by
/// `scale` and rounded down (minimum 1).
CorpusConfig reference_shape(const std::string& shape, double scale = 1.0,
                          CorpusConfig base = default_config());

/// Train/test counts of one temporal split shape.
struct SplitShape {
    std::size_t train_goodware, test_goodware, train_malware, test_malware;
};
SplitShape reference_counts(const std::string& shape, double scale = 1.0);

/// Labels and observation times the generator would assign, without events.
struct Layout {
    std::vector<Label> labels;
    std::vector<std::int64_t> observed_at;
};
Layout layout(const CorpusConfig& config);

std::vector<SyscallTrace> generate_corpus(const CorpusConfig& config);

/// Drift position in [0, 1] of an observation time within the config's corpus.
double drift_position(const CorpusConfig& config, std::int64_t observed_at);

/// Call distribution of `profile` after drift at position `tau`.
std::vector<std::pair<std::string, double>> drifted_frequencies(const CorpusConfig& config,
                                                                Label label, std::size_t family,
                                                                double tau);

// ---- likelihood oracles ----

/// Per-class multinomial likelihood classifier over call counts.
class LikelihoodModel {
public:
    /// Uses the true generating profiles at drift position `tau` (mixture over families).
    static LikelihoodModel from_profiles(const CorpusConfig& config, double tau = 0.0);
    /// Estimates one multinomial per class from labeled traces (Laplace smoothing).
    static LikelihoodModel fit(std::span<const SyscallTrace> traces, double smoothing = 1.0);

    /// Log-likelihood ratio log P(malware) - log P(goodware); classes weighted equally.
    double log_odds(const SyscallTrace& trace) const;
    Label predict(const SyscallTrace& trace) const {
        return log_odds(trace) >= 0.0 ? Label::malware : Label::goodware;
    }

private:
    struct Component {
        double log_weight;
        std::vector<double> log_prob;  // indexed by vocabulary column
    };
    double class_log_likelihood(const std::vector<Component>& comps,
                                const std::vector<double>& counts) const;

    SyscallVocabulary vocab_;
    std::vector<Component> goodware_;
    std::vector<Component> malware_;
};

/// Trains on the first set of traces, returns a predictor.
using OracleFactory =
    std::function<std::function<Label(const SyscallTrace&)>(std::span<const SyscallTrace>)>;

struct DriftGap {
    double sorted_caa = 0.0;
    double shuffled_caa = 0.0;
};

/// Evaluates the same learner on a temporal split and on a shuffled split of
/// equal sizes. `train_fraction` applies to both.
DriftGap drift_gap_probe(std::span<const SyscallTrace> corpus, const OracleFactory& oracle,
                         std::uint64_t seed, double train_fraction = 0.8);

/// Factory that fits a LikelihoodModel on the training traces.
OracleFactory likelihood_oracle();

// ---- JSON config ----

void to_json(nlohmann::json& j, const CorpusConfig& config);
void from_json(const nlohmann::json& j, CorpusConfig& config);

}  // namespace dynmal::datagen
