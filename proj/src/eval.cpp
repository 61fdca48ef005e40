#include "dynmal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "dynmal/error.hpp"
#include "dynmal/random.hpp"

namespace dynmal::eval {

using nlohmann::json;

LabeledIndex LabeledIndex::from_traces(std::span<const SyscallTrace> traces) {
    LabeledIndex index;
    index.labels.reserve(traces.size());
    index.observed_at.reserve(traces.size());
    for (const auto& t : traces) {
        if (!t.label) throw ValidationError("trace '" + t.id + "' has no label");
        index.labels.push_back(*t.label);
        index.observed_at.push_back(t.observed_at);
    }
    return index;
}

namespace {

std::vector<std::size_t> temporal_order(const LabeledIndex& data) {
    if (data.observed_at.size() != data.labels.size()) {
        throw DimensionError("labels and observation times differ in length");
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return data.observed_at[a] < data.observed_at[b];
    });
    return order;
}

void check_temporal(const LabeledIndex& data, const Split& split) {
    if (split.train.empty() || split.test.empty()) return;
    std::int64_t max_train = data.observed_at[split.train.front()];
    for (auto i : split.train) max_train = std::max(max_train, data.observed_at[i]);
    for (auto i : split.test) {
        if (data.observed_at[i] < max_train) {
            throw ValidationError("requested counts do not form a temporal split");
        }
    }
}

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_index(rng, i)]);
}

}  // namespace

Split split_sorted(const LabeledIndex& data, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ValidationError("train fraction must lie in (0, 1)");
    }
    const auto order = temporal_order(data);
    const auto cut = static_cast<std::size_t>(std::floor(train_fraction * order.size() + 1e-9));
    Split split;
    split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
    split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
    return split;
}

Split split_sorted(const LabeledIndex& data, const SplitCounts& counts) {
    const auto order = temporal_order(data);
    std::size_t seen_good = 0, seen_mal = 0;
    Split split;
    for (auto i : order) {
        if (data.labels[i] == Label::goodware) {
            if (seen_good < counts.train_goodware) split.train.push_back(i);
            else if (seen_good < counts.train_goodware + counts.test_goodware) split.test.push_back(i);
            ++seen_good;
        } else {
            if (seen_mal < counts.train_malware) split.train.push_back(i);
            else if (seen_mal < counts.train_malware + counts.test_malware) split.test.push_back(i);
            ++seen_mal;
        }
    }
    if (seen_good < counts.train_goodware + counts.test_goodware ||
        seen_mal < counts.train_malware + counts.test_malware) {
        throw ValidationError("not enough samples for the requested split counts");
    }
    check_temporal(data, split);
    return split;
}

std::vector<Split> split_kfold(const LabeledIndex& data, std::size_t k, std::uint64_t seed) {
    if (k < 2 || k > data.size()) {
        throw ValidationError("fold count must satisfy 2 <= k <= dataset size");
    }
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed, 0xF01D);
    shuffle(order, rng);
    std::vector<Split> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        const auto lo = f * order.size() / k;
        const auto hi = (f + 1) * order.size() / k;
        for (std::size_t p = 0; p < order.size(); ++p) {
            (p >= lo && p < hi ? folds[f].test : folds[f].train).push_back(order[p]);
        }
    }
    return folds;
}

Split split_distributed(const LabeledIndex& data, const TemporalCut& cut, const DownSelect& target,
                        std::uint64_t seed) {
    Split base = std::holds_alternative<double>(cut) ? split_sorted(data, std::get<double>(cut))
                                                     : split_sorted(data, std::get<SplitCounts>(cut));
    std::vector<std::size_t> pool[2];
    for (auto i : base.test) pool[static_cast<int>(data.labels[i])].push_back(i);
    const std::optional<std::size_t> wanted[2] = {target.goodware, target.malware};

    Rng rng = make_rng(seed, 0xD15C);
    std::vector<bool> keep(data.size(), false);
    for (int c = 0; c < 2; ++c) {
        const auto n = wanted[c].value_or(pool[c].size());
        if (n > pool[c].size()) {
            throw ValidationError(std::string("insufficient ") + std::string(to_string(static_cast<Label>(c))) +
                                  " samples after the temporal cut: need " + std::to_string(n) +
                                  ", have " + std::to_string(pool[c].size()));
        }
        auto chosen = pool[c];
        if (n < chosen.size()) {
            shuffle(chosen, rng);
            chosen.resize(n);
        }
        for (auto i : chosen) keep[i] = true;
    }
    Split out;
    out.train = std::move(base.train);
    for (auto i : base.test) {
        if (keep[i]) out.test.push_back(i);
    }
    return out;
}

MetricSet metrics_from_counts(const ConfusionCounts& c) {
    MetricSet m;
    const auto total = c.total();
    if (total == 0) throw ValidationError("metrics need at least one sample");
    m.acc = static_cast<double>(c.tp + c.tn) / static_cast<double>(total);
    const auto positives = c.tp + c.fn;
    const auto negatives = c.tn + c.fp;
    double class_sum = 0.0;
    int classes = 0;
    if (positives > 0) {
        class_sum += static_cast<double>(c.tp) / static_cast<double>(positives);
        ++classes;
    }
    if (negatives > 0) {
        class_sum += static_cast<double>(c.tn) / static_cast<double>(negatives);
        ++classes;
    }
    m.caa = class_sum / classes;
    if (c.tp + c.fp > 0) m.mpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
    else m.mpr = positives == 0 ? 1.0 : 0.0;
    m.mre = positives > 0 ? static_cast<double>(c.tp) / static_cast<double>(positives) : 1.0;
    return m;
}

Metrics compute_metrics(std::span<const Label> predicted, std::span<const Label> truth) {
    if (predicted.size() != truth.size()) throw DimensionError("prediction and label counts differ");
    if (truth.empty()) throw ValidationError("metrics need at least one sample");
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool p = predicted[i] == Label::malware;
        const bool t = truth[i] == Label::malware;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return {metrics_from_counts(c), c};
}

std::vector<Label> majority_vote(std::span<const std::vector<Label>> per_model) {
    if (per_model.empty()) throw ValidationError("majority vote needs at least one model");
    const auto n = per_model.front().size();
    for (const auto& p : per_model) {
        if (p.size() != n) throw DimensionError("ensemble members predicted different sample counts");
    }
    std::vector<Label> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t malware = 0;
        for (const auto& p : per_model) malware += p[i] == Label::malware;
        out[i] = 2 * malware >= per_model.size() ? Label::malware : Label::goodware;
    }
    return out;
}

ReportEntry make_entry(std::string model, std::string split, std::size_t length, std::uint64_t seed,
                       std::span<const Label> predicted, std::span<const Label> truth,
                       std::vector<std::string> sample_ids) {
    const auto m = compute_metrics(predicted, truth);
    ReportEntry e;
    e.model = std::move(model);
    e.split = std::move(split);
    e.length = length;
    e.seed = seed;
    e.metrics = m.metrics;
    e.counts = m.counts;
    e.correct.resize(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) e.correct[i] = predicted[i] == truth[i];
    e.sample_ids = std::move(sample_ids);
    return e;
}

ReportEntry merge_entries(std::span<const ReportEntry> parts) {
    if (parts.empty()) throw ValidationError("nothing to merge");
    ReportEntry out = parts.front();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const auto& e = parts[p];
        out.counts.tp += e.counts.tp;
        out.counts.fp += e.counts.fp;
        out.counts.tn += e.counts.tn;
        out.counts.fn += e.counts.fn;
        out.correct.insert(out.correct.end(), e.correct.begin(), e.correct.end());
        out.sample_ids.insert(out.sample_ids.end(), e.sample_ids.begin(), e.sample_ids.end());
    }
    out.metrics = metrics_from_counts(out.counts);
    return out;
}

std::string to_csv(const EvaluationReport& report) {
    std::ostringstream out;
    out << kCsvHeader << '\n';
    char buf[256];
    for (const auto& e : report.entries) {
        std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f", e.metrics.acc, e.metrics.caa,
                      e.metrics.mpr, e.metrics.mre);
        out << e.model << ',' << e.split << ',' << e.length << ',' << buf << ',' << e.counts.tp << ','
            << e.counts.fp << ',' << e.counts.tn << ',' << e.counts.fn << ',' << e.seed << '\n';
    }
    return out.str();
}

std::string encode_bits(const std::vector<bool>& bits) {
    std::vector<unsigned char> bytes((bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < bits.size(); ++i) {
        if (bits[i]) bytes[i / 8] |= static_cast<unsigned char>(1u << (i % 8));
    }
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<bool> decode_bits(const std::string& text, std::size_t count) {
    if (text.size() % 4 != 0) throw ParseError("bitmap is not valid base64");
    std::vector<unsigned char> bytes(text.size() / 4 * 3);
    const int n = EVP_DecodeBlock(bytes.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                  static_cast<int>(text.size()));
    if (n < 0) throw ParseError("bitmap is not valid base64");
    // EVP_DecodeBlock counts padding as decoded zero bytes.
    const auto padding = static_cast<std::size_t>(std::count(text.end() - std::min<std::ptrdiff_t>(2, static_cast<std::ptrdiff_t>(text.size())), text.end(), '='));
    const auto decoded = static_cast<std::size_t>(n) - padding;
    const auto needed = (count + 7) / 8;
    if (decoded < needed) throw ParseError("bitmap shorter than its sample count");
    std::vector<bool> bits(count);
    for (std::size_t i = 0; i < count; ++i) bits[i] = (bytes[i / 8] >> (i % 8)) & 1u;
    return bits;
}

void to_json(json& j, const EvaluationReport& report) {
    json entries = json::array();
    for (const auto& e : report.entries) {
        json entry = {{"model", e.model},
                      {"split", e.split},
                      {"length", e.length},
                      {"seed", e.seed},
                      {"acc", e.metrics.acc},
                      {"caa", e.metrics.caa},
                      {"mpr", e.metrics.mpr},
                      {"mre", e.metrics.mre},
                      {"tp", e.counts.tp},
                      {"fp", e.counts.fp},
                      {"tn", e.counts.tn},
                      {"fn", e.counts.fn},
                      {"samples", e.correct.size()},
                      {"correct", encode_bits(e.correct)}};
        if (!e.sample_ids.empty()) entry["sample_ids"] = e.sample_ids;
        entries.push_back(std::move(entry));
    }
    j = {{"format_version", 1},
         {"kind", "evaluation_report"},
         {"config_hash", report.config_hash},
         {"entries", entries}};
    if (report.created_at) j["created_at"] = *report.created_at;
}

void from_json(const json& j, EvaluationReport& report) {
    try {
        if (j.at("format_version").get<int>() != 1) throw ArchiveError("unsupported report format_version");
        report.config_hash = j.value("config_hash", std::string{});
        if (j.contains("created_at")) report.created_at = j.at("created_at").get<std::string>();
        report.entries.clear();
        for (const auto& e : j.at("entries")) {
            ReportEntry r;
            r.model = e.at("model").get<std::string>();
            r.split = e.at("split").get<std::string>();
            r.length = e.at("length").get<std::size_t>();
            r.seed = e.at("seed").get<std::uint64_t>();
            r.counts = {e.at("tp").get<std::size_t>(), e.at("fp").get<std::size_t>(),
                        e.at("tn").get<std::size_t>(), e.at("fn").get<std::size_t>()};
            r.metrics = {e.at("acc").get<double>(), e.at("caa").get<double>(), e.at("mpr").get<double>(),
                         e.at("mre").get<double>()};
            r.correct = decode_bits(e.at("correct").get<std::string>(), e.at("samples").get<std::size_t>());
            if (e.contains("sample_ids")) r.sample_ids = e.at("sample_ids").get<std::vector<std::string>>();
            report.entries.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("evaluation report: ") + e.what());
    }
}

std::vector<ReportEntry> sweep_sequence_length(std::span<const SyscallTrace> traces,
                                               std::span<const NamedFactory> models,
                                               std::span<const std::size_t> lengths,
                                               const TemporalCut& cut, std::uint64_t seed) {
    for (std::size_t i = 0; i < lengths.size(); ++i) {
        if (lengths[i] == 0) throw ValidationError("sweep lengths must be positive");
        if (i > 0 && lengths[i] <= lengths[i - 1]) throw ValidationError("sweep lengths must ascend");
    }
    const auto index = LabeledIndex::from_traces(traces);
    const Split split = std::holds_alternative<double>(cut) ? split_sorted(index, std::get<double>(cut))
                                                            : split_sorted(index, std::get<SplitCounts>(cut));
    std::vector<ReportEntry> rows;
    for (const auto length : lengths) {
        const TruncationLimit limit(length);
        std::vector<SyscallTrace> train, test;
        std::vector<Label> truth;
        std::vector<std::string> ids;
        for (auto i : split.train) train.push_back(truncate(traces[i], limit));
        for (auto i : split.test) {
            test.push_back(truncate(traces[i], limit));
            truth.push_back(index.labels[i]);
            ids.push_back(traces[i].id);
        }
        for (const auto& model : models) {
            const auto predict = model.factory(train);
            std::vector<Label> predicted;
            predicted.reserve(test.size());
            for (const auto& t : test) predicted.push_back(predict(t));
            rows.push_back(make_entry(model.name, "sorted", length, seed, predicted, truth, ids));
        }
    }
    return rows;
}

}  // namespace dynmal::eval
