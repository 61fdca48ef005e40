#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dynmal {

enum class Label : std::uint8_t { goodware = 0, malware = 1 };

std::string_view to_string(Label label);
Label label_from_string(std::string_view text);

inline Label flip(Label label) {
    return label == Label::malware ? Label::goodware : Label::malware;
}

struct SyscallEvent {
    std::int64_t time_step = 0;  // milliseconds since trace start
    std::string call;

    bool operator==(const SyscallEvent&) const = default;
};

struct SyscallTrace {
    std::string id;
    std::optional<Label> label;
    std::int64_t observed_at = 0;
    std::vector<SyscallEvent> events;

    bool operator==(const SyscallTrace&) const = default;
};

/// Throws ValidationError when time steps are negative or decreasing.
void validate(const SyscallTrace& trace);

/// Sorted set of known call names plus one trailing out-of-vocabulary slot.
class SyscallVocabulary {
public:
    SyscallVocabulary() = default;

    /// Names must be unique and lexicographically sorted.
    explicit SyscallVocabulary(std::vector<std::string> names);

    const std::vector<std::string>& names() const noexcept { return names_; }
    std::size_t size() const noexcept { return names_.size(); }
    /// Encoded vector width: known names plus the OOV slot.
    std::size_t width() const noexcept { return names_.size() + 1; }
    std::size_t oov_index() const noexcept { return names_.size(); }

    /// Position of `name`, or oov_index() when unknown.
    std::size_t index_of(std::string_view name) const;
    bool contains(std::string_view name) const;

    /// Display name for an encoded column (the OOV slot renders as "<oov>").
    std::string column_name(std::size_t column) const;

    bool operator==(const SyscallVocabulary& other) const { return names_ == other.names_; }

private:
    struct Hash {
        using is_transparent = void;
        std::size_t operator()(std::string_view s) const noexcept {
            return std::hash<std::string_view>{}(s);
        }
    };
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t, Hash, std::equal_to<>> index_;
};

SyscallVocabulary build_vocabulary(std::span<const SyscallTrace> corpus);

/// One name per line, line number = index.
void write_vocabulary(std::ostream& out, const SyscallVocabulary& vocab);
SyscallVocabulary read_vocabulary(std::istream& in);

class TruncationLimit {
public:
    explicit TruncationLimit(std::size_t n);
    std::size_t value() const noexcept { return n_; }

private:
    std::size_t n_;
};

inline constexpr std::size_t kDefaultTruncation = 1000;

SyscallTrace truncate(const SyscallTrace& trace, TruncationLimit limit);

/// Per-time-step call counts; one row per occupied time step.
struct MultiHotMatrix {
    std::size_t width = 0;
    std::vector<std::int64_t> time_steps;
    std::vector<std::uint32_t> counts;  // row-major, time_steps.size() x width

    std::size_t rows() const noexcept { return time_steps.size(); }
    std::span<const std::uint32_t> row(std::size_t r) const {
        return {counts.data() + r * width, width};
    }
    std::uint64_t total() const;
};

struct HistogramVector {
    std::vector<double> values;
    bool normalized = false;
};

MultiHotMatrix encode_multihot(const SyscallTrace& trace, const SyscallVocabulary& vocab);
HistogramVector encode_histogram(const SyscallTrace& trace, const SyscallVocabulary& vocab,
                                 bool normalize = true);

// ---- JSON Lines trace format ----

/// Parses one record. `line` is only used for error context.
SyscallTrace parse_trace(std::string_view record, std::size_t line = 0);
std::string serialize_trace(const SyscallTrace& trace);

/// Reads every non-blank line of a JSON Lines stream.
std::vector<SyscallTrace> read_traces(std::istream& in);
void write_traces(std::ostream& out, std::span<const SyscallTrace> traces);

std::vector<SyscallTrace> load_corpus(const std::string& path);
void save_corpus(const std::string& path, std::span<const SyscallTrace> traces);

}  // namespace dynmal
