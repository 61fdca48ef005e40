#include "dynmal/trace.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>

#include <nlohmann/json.hpp>

#include "dynmal/error.hpp"

namespace dynmal {

using nlohmann::json;

std::string_view to_string(Label label) {
    return label == Label::malware ? "malware" : "goodware";
}

Label label_from_string(std::string_view text) {
    if (text == "malware") return Label::malware;
    if (text == "goodware") return Label::goodware;
    throw ParseError("unknown label '" + std::string(text) + "'");
}

void validate(const SyscallTrace& trace) {
    std::int64_t previous = 0;
    for (std::size_t i = 0; i < trace.events.size(); ++i) {
        const auto step = trace.events[i].time_step;
        if (step < 0) {
            throw ValidationError("trace '" + trace.id + "': negative time step at event " +
                                  std::to_string(i));
        }
        if (step < previous) {
            throw ValidationError("trace '" + trace.id + "': time step decreases at event " +
                                  std::to_string(i));
        }
        previous = step;
    }
}

SyscallVocabulary::SyscallVocabulary(std::vector<std::string> names) : names_(std::move(names)) {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (i > 0 && !(names_[i - 1] < names_[i])) {
            throw ValidationError("vocabulary names must be unique and sorted (at '" + names_[i] +
                                  "')");
        }
        index_.emplace(names_[i], i);
    }
}

std::size_t SyscallVocabulary::index_of(std::string_view name) const {
    auto it = index_.find(name);
    return it == index_.end() ? oov_index() : it->second;
}

bool SyscallVocabulary::contains(std::string_view name) const {
    return index_.find(name) != index_.end();
}

std::string SyscallVocabulary::column_name(std::size_t column) const {
    if (column < names_.size()) return names_[column];
    if (column == oov_index()) return "<oov>";
    throw DimensionError("column " + std::to_string(column) + " outside vocabulary width " +
                         std::to_string(width()));
}

SyscallVocabulary build_vocabulary(std::span<const SyscallTrace> corpus) {
    std::set<std::string> names;
    for (const auto& trace : corpus) {
        for (const auto& event : trace.events) names.insert(event.call);
    }
    if (names.empty()) throw ValidationError("empty vocabulary");
    return SyscallVocabulary({names.begin(), names.end()});
}

void write_vocabulary(std::ostream& out, const SyscallVocabulary& vocab) {
    for (const auto& name : vocab.names()) out << name << '\n';
}

SyscallVocabulary read_vocabulary(std::istream& in) {
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        names.push_back(line);
    }
    if (names.empty()) throw ValidationError("empty vocabulary");
    return SyscallVocabulary(std::move(names));
}

TruncationLimit::TruncationLimit(std::size_t n) : n_(n) {
    if (n == 0) throw ValidationError("truncation limit must be at least 1");
}

SyscallTrace truncate(const SyscallTrace& trace, TruncationLimit limit) {
    SyscallTrace out;
    out.id = trace.id;
    out.label = trace.label;
    out.observed_at = trace.observed_at;
    const auto keep = std::min(limit.value(), trace.events.size());
    out.events.assign(trace.events.begin(), trace.events.begin() + static_cast<std::ptrdiff_t>(keep));
    return out;
}

std::uint64_t MultiHotMatrix::total() const {
    std::uint64_t sum = 0;
    for (auto c : counts) sum += c;
    return sum;
}

MultiHotMatrix encode_multihot(const SyscallTrace& trace, const SyscallVocabulary& vocab) {
    MultiHotMatrix m;
    m.width = vocab.width();
    for (const auto& event : trace.events) {
        if (m.time_steps.empty() || m.time_steps.back() != event.time_step) {
            if (!m.time_steps.empty() && event.time_step < m.time_steps.back()) {
                throw ValidationError("trace '" + trace.id + "': time step decreases");
            }
            m.time_steps.push_back(event.time_step);
            m.counts.resize(m.counts.size() + m.width, 0);
        }
        m.counts[(m.time_steps.size() - 1) * m.width + vocab.index_of(event.call)] += 1;
    }
    return m;
}

HistogramVector encode_histogram(const SyscallTrace& trace, const SyscallVocabulary& vocab,
                                 bool normalize) {
    HistogramVector h;
    h.normalized = normalize;
    h.values.assign(vocab.width(), 0.0);
    for (const auto& event : trace.events) h.values[vocab.index_of(event.call)] += 1.0;
    if (normalize && !trace.events.empty()) {
        const double total = static_cast<double>(trace.events.size());
        for (auto& v : h.values) v /= total;
    }
    return h;
}

SyscallTrace parse_trace(std::string_view record, std::size_t line) {
    json doc;
    try {
        doc = json::parse(record);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what(), line);
    }
    if (!doc.is_object()) throw ParseError("trace record must be a JSON object", line);

    SyscallTrace trace;
    auto field = [&](const char* name) -> const json& {
        auto it = doc.find(name);
        if (it == doc.end()) throw ParseError(std::string("missing field '") + name + "'", line);
        return *it;
    };

    const auto& id = field("id");
    if (!id.is_string()) throw ParseError("field 'id' must be a string", line);
    trace.id = id.get<std::string>();

    if (auto it = doc.find("label"); it != doc.end() && !it->is_null()) {
        if (!it->is_string()) throw ParseError("field 'label' must be a string or null", line);
        try {
            trace.label = label_from_string(it->get<std::string>());
        } catch (const ParseError& e) {
            throw ParseError(e.what(), line);
        }
    }

    const auto& observed = field("observed_at");
    if (!observed.is_number_integer()) throw ParseError("field 'observed_at' must be an integer", line);
    trace.observed_at = observed.get<std::int64_t>();

    const auto& events = field("events");
    if (!events.is_array()) throw ParseError("field 'events' must be an array", line);
    trace.events.reserve(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) {
        const auto& e = events[i];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_string()) {
            throw ParseError("event " + std::to_string(i) + " must be [int_ms, name]", line);
        }
        trace.events.push_back({e[0].get<std::int64_t>(), e[1].get<std::string>()});
    }
    validate(trace);
    return trace;
}

std::string serialize_trace(const SyscallTrace& trace) {
    json doc;
    doc["id"] = trace.id;
    doc["label"] = trace.label ? json(std::string(to_string(*trace.label))) : json(nullptr);
    doc["observed_at"] = trace.observed_at;
    json events = json::array();
    for (const auto& e : trace.events) events.push_back(json::array({e.time_step, e.call}));
    doc["events"] = std::move(events);
    return doc.dump();
}

std::vector<SyscallTrace> read_traces(std::istream& in) {
    std::vector<SyscallTrace> traces;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        traces.push_back(parse_trace(line, line_no));
    }
    return traces;
}

void write_traces(std::ostream& out, std::span<const SyscallTrace> traces) {
    for (const auto& t : traces) out << serialize_trace(t) << '\n';
}

std::vector<SyscallTrace> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open corpus '" + path + "'");
    return read_traces(in);
}

void save_corpus(const std::string& path, std::span<const SyscallTrace> traces) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write corpus '" + path + "'");
    write_traces(out, traces);
}

}  // namespace dynmal
