#include "dynmal/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "dynmal/error.hpp"
#include "dynmal/eval.hpp"
#include "dynmal/parallel.hpp"
#include "dynmal/random.hpp"

namespace dynmal::datagen {

using nlohmann::json;

namespace {

constexpr std::uint64_t kLayoutStream = 0xA5A5'0000'0000'0000ULL;

void validate_profile(const ClassProfile& p, const std::string& where) {
    if (p.call_frequencies.empty()) throw ValidationError(where + ": no call frequencies");
    double total = 0.0;
    for (const auto& [name, f] : p.call_frequencies) {
        if (!(f >= 0.0) || !std::isfinite(f)) {
            throw ValidationError(where + ": frequency of '" + name + "' must be non-negative");
        }
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw ValidationError(where + ": call frequencies sum to " + std::to_string(total));
    }
    for (const auto& m : p.motifs) {
        if (!(m.probability >= 0.0 && m.probability <= 1.0)) {
            throw ValidationError(where + ": motif probability outside [0, 1]");
        }
        if (m.calls.empty()) throw ValidationError(where + ": empty motif");
    }
    if (p.min_length < 1 || p.max_length < p.min_length) {
        throw ValidationError(where + ": length range must satisfy 1 <= min <= max");
    }
    if (!(p.burstiness >= 1.0) || !std::isfinite(p.burstiness)) {
        throw ValidationError(where + ": burstiness must be >= 1 call per step");
    }
}

std::vector<std::string> union_names(const CorpusConfig& config) {
    std::set<std::string> names;
    for (const auto* families : {&config.goodware, &config.malware}) {
        for (const auto& wp : *families) {
            for (const auto& [name, f] : wp.profile.call_frequencies) names.insert(name);
            for (const auto& m : wp.profile.motifs) names.insert(m.calls.begin(), m.calls.end());
        }
    }
    return {names.begin(), names.end()};
}

std::size_t pick_weighted(Rng& rng, std::span<const double> cumulative) {
    const double u = uniform01(rng) * cumulative.back();
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()),
                                 cumulative.size() - 1);
}

// Knuth's multiplication method; means here are small.
std::size_t poisson(Rng& rng, double mean) {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    std::size_t k = 0;
    double p = uniform01(rng);
    while (p > limit) {
        ++k;
        p *= uniform01(rng);
    }
    return k;
}

std::size_t total_count(const CorpusConfig& c) { return c.goodware_count + c.malware_count; }

std::vector<Segment> effective_segments(const CorpusConfig& c) {
    if (!c.segments.empty()) return c.segments;
    return {Segment{c.goodware_count, c.malware_count}};
}

std::vector<double> cumulative_of(std::span<const std::pair<std::string, double>> freqs) {
    std::vector<double> cum(freqs.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < freqs.size(); ++i) cum[i] = (acc += freqs[i].second);
    return cum;
}

struct ActiveMotif {
    const Motif* motif;
    double probability;
};

std::vector<ActiveMotif> drifted_motifs(const CorpusConfig& config, Label label,
                                        std::size_t family, double tau) {
    const auto& own = config.families(label)[family].profile.motifs;
    std::vector<ActiveMotif> out;
    if (config.drift.mode != DriftMode::motif_swap || config.drift.magnitude == 0.0) {
        for (const auto& m : own) out.push_back({&m, m.probability});
        return out;
    }
    const double w = config.drift.magnitude * tau;
    for (const auto& m : own) out.push_back({&m, m.probability * (1.0 - w)});
    for (const auto& wp : config.families(flip(label))) {
        for (const auto& m : wp.profile.motifs) out.push_back({&m, m.probability * w});
    }
    return out;
}

SyscallTrace generate_one(const CorpusConfig& config, std::size_t ordinal, Label label,
                          std::int64_t observed_at) {
    Rng rng = make_rng(config.seed, ordinal);
    const auto& families = config.families(label);
    std::vector<double> family_cum(families.size());
    double acc = 0.0;
    for (std::size_t f = 0; f < families.size(); ++f) family_cum[f] = (acc += families[f].weight);
    const std::size_t family = pick_weighted(rng, family_cum);
    const auto& profile = families[family].profile;

    const double tau = drift_position(config, observed_at);
    const auto freqs = drifted_frequencies(config, label, family, tau);
    const auto cum = cumulative_of(freqs);

    std::size_t length = profile.min_length;
    if (profile.max_length > profile.min_length) {
        if (profile.length_law == LengthLaw::uniform) {
            length += uniform_index(rng, profile.max_length - profile.min_length + 1);
        } else {
            const double lo = std::log(static_cast<double>(profile.min_length));
            const double hi = std::log(static_cast<double>(profile.max_length) + 1.0);
            length = std::clamp<std::size_t>(
                static_cast<std::size_t>(std::exp(lo + uniform01(rng) * (hi - lo))),
                profile.min_length, profile.max_length);
        }
    }

    std::vector<std::vector<const std::string*>> bursts;
    std::size_t emitted = 0;
    while (emitted < length) {
        std::size_t burst = 1 + poisson(rng, profile.burstiness - 1.0);
        burst = std::min(burst, length - emitted);
        auto& step = bursts.emplace_back();
        for (std::size_t k = 0; k < burst; ++k) step.push_back(&freqs[pick_weighted(rng, cum)].first);
        emitted += burst;
    }

    for (const auto& active : drifted_motifs(config, label, family, tau)) {
        if (uniform01(rng) >= active.probability) continue;
        const auto at = static_cast<std::ptrdiff_t>(uniform_index(rng, bursts.size() + 1));
        std::vector<std::vector<const std::string*>> spliced;
        for (const auto& call : active.motif->calls) spliced.push_back({&call});
        bursts.insert(bursts.begin() + at, spliced.begin(), spliced.end());
    }

    SyscallTrace trace;
    trace.id = "t" + std::to_string(ordinal);
    trace.label = label;
    trace.observed_at = observed_at;
    trace.events.reserve(emitted);
    for (std::size_t step = 0; step < bursts.size(); ++step) {
        for (const auto* call : bursts[step]) {
            trace.events.push_back({static_cast<std::int64_t>(step), *call});
        }
    }
    return trace;
}

ClassProfile scaled_profile(const std::vector<std::pair<std::string, double>>& base,
                            const std::map<std::string, double>& multipliers, double burstiness) {
    ClassProfile p;
    double total = 0.0;
    for (const auto& [name, w] : base) {
        auto it = multipliers.find(name);
        const double v = w * (it == multipliers.end() ? 1.0 : it->second);
        p.call_frequencies.emplace_back(name, v);
        total += v;
    }
    for (auto& [name, v] : p.call_frequencies) v /= total;
    p.burstiness = burstiness;
    return p;
}

}  // namespace

void validate(const CorpusConfig& config) {
    if (config.goodware.empty() && config.goodware_count > 0) {
        throw ValidationError("goodware traces requested but no goodware profile configured");
    }
    if (config.malware.empty() && config.malware_count > 0) {
        throw ValidationError("malware traces requested but no malware profile configured");
    }
    for (const auto* families : {&config.goodware, &config.malware}) {
        double total = 0.0;
        for (std::size_t f = 0; f < families->size(); ++f) {
            const auto& wp = (*families)[f];
            if (!(wp.weight > 0.0)) throw ValidationError("family weights must be positive");
            total += wp.weight;
            validate_profile(wp.profile, std::string(families == &config.goodware ? "goodware" : "malware") +
                                             " family " + std::to_string(f));
        }
    }
    if (!(config.drift.magnitude >= 0.0 && config.drift.magnitude <= 1.0)) {
        throw ValidationError("drift magnitude must lie in [0, 1]");
    }
    if (!config.segments.empty()) {
        std::size_t g = 0, m = 0;
        for (const auto& s : config.segments) {
            g += s.goodware;
            m += s.malware;
        }
        if (g != config.goodware_count || m != config.malware_count) {
            throw ValidationError("segment counts do not add up to the class counts");
        }
    }
    const auto n = total_count(config);
    if (config.timestamp_end <= config.timestamp_begin ||
        static_cast<std::uint64_t>(config.timestamp_end - config.timestamp_begin) < n) {
        throw ValidationError("timestamp range too narrow for strictly increasing observation times");
    }
}

CorpusConfig default_config(std::uint64_t seed, std::size_t goodware, std::size_t malware) {
    // Rank-ordered so earlier names are more frequent, as in real traces.
    static const std::vector<std::string> kCalls = {
        "NtClose",
        "NtQueryValueKey",
        "NtOpenKey",
        "NtReadFile",
        "NtAllocateVirtualMemory",
        "NtQueryInformationFile",
        "NtCreateFile",
        "NtFreeVirtualMemory",
        "NtSetInformationFile",
        "NtQueryAttributesFile",
        "NtMapViewOfSection",
        "NtCreateEvent",
        "NtQueryInformationProcess",
        "NtFsControlFile",
        "NtOpenSection",
        "NtQuerySystemInformation",
        "NtCreateSection",
        "NtQuerySection",
        "NtQueryInformationToken",
        "NtRequestWaitReplyPort",
        "NtWriteFile",
        "NtDuplicateObject",
        "NtDeviceIoControlFile",
        "NtCreateSymbolicLinkObject",
    };
    std::vector<std::pair<std::string, double>> base;
    for (std::size_t i = 0; i < kCalls.size(); ++i) {
        base.emplace_back(kCalls[i], 1.0 / std::pow(static_cast<double>(i) + 3.0, 0.9));
    }

    CorpusConfig c;
    c.seed = seed;
    c.goodware_count = goodware;
    c.malware_count = malware;

    auto good = scaled_profile(base, {}, 1.5);
    good.motifs.push_back({{"NtOpenKey", "NtQueryValueKey", "NtClose"}, 0.3});
    c.goodware.push_back({1.0, good});

    // Two families pulling NtReadFile and NtSetInformationFile in opposite directions.
    auto fam_a = scaled_profile(base,
                                {{"NtFsControlFile", 2.0},
                                 {"NtAllocateVirtualMemory", 1.6},
                                 {"NtReadFile", 0.6},
                                 {"NtSetInformationFile", 1.8}},
                                2.5);
    fam_a.motifs.push_back({{"NtAllocateVirtualMemory", "NtMapViewOfSection", "NtFreeVirtualMemory"}, 0.3});
    auto fam_b = scaled_profile(base,
                                {{"NtQuerySystemInformation", 2.0},
                                 {"NtFreeVirtualMemory", 1.6},
                                 {"NtReadFile", 1.7},
                                 {"NtSetInformationFile", 0.6}},
                                2.5);
    fam_b.motifs.push_back({{"NtOpenSection", "NtQuerySection", "NtClose"}, 0.3});
    c.malware.push_back({1.0, fam_a});
    c.malware.push_back({1.0, fam_b});
    return c;
}

SplitShape reference_counts(const std::string& shape, double scale) {
    SplitShape s{};
    if (shape == "sorted") {
        s = {13265, 3220, 9092, 2044};
    } else if (shape == "distributed") {
        s = {11757, 4728, 11091, 45};
    } else {
        throw ValidationError("unknown split shape '" + shape + "' (expected sorted or distributed)");
    }
    if (!(scale > 0.0)) throw ValidationError("shape scale must be positive");
    auto apply = [scale](std::size_t v) {
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(v * scale + 1e-9)));
    };
    if (scale != 1.0) {
        s = {apply(s.train_goodware), apply(s.test_goodware), apply(s.train_malware),
             apply(s.test_malware)};
    }
    return s;
}

CorpusConfig reference_shape(const std::string& shape, double scale, CorpusConfig base) {
    const auto s = reference_counts(shape, scale);
    base.segments = {{s.train_goodware, s.train_malware}, {s.test_goodware, s.test_malware}};
    base.goodware_count = s.train_goodware + s.test_goodware;
    base.malware_count = s.train_malware + s.test_malware;
    const auto n = static_cast<std::int64_t>(total_count(base));
    if (base.timestamp_end - base.timestamp_begin < n) base.timestamp_end = base.timestamp_begin + 10 * n;
    return base;
}

Layout layout(const CorpusConfig& config) {
    validate(config);
    Layout out;
    const auto n = total_count(config);
    out.labels.reserve(n);
    std::uint64_t stream = kLayoutStream;
    for (const auto& segment : effective_segments(config)) {
        std::vector<Label> labels(segment.goodware, Label::goodware);
        labels.insert(labels.end(), segment.malware, Label::malware);
        Rng rng = make_rng(config.seed, stream++);
        for (std::size_t i = labels.size(); i > 1; --i) {
            std::swap(labels[i - 1], labels[uniform_index(rng, i)]);
        }
        out.labels.insert(out.labels.end(), labels.begin(), labels.end());
    }
    const auto range = static_cast<unsigned __int128>(config.timestamp_end - config.timestamp_begin);
    out.observed_at.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.observed_at[i] =
            config.timestamp_begin + static_cast<std::int64_t>(range * i / std::max<std::size_t>(n, 1));
    }
    return out;
}

double drift_position(const CorpusConfig& config, std::int64_t observed_at) {
    const auto n = total_count(config);
    if (n <= 1) return 0.0;
    // Last emitted observation time, so the final trace sits exactly at tau = 1.
    const auto range = static_cast<unsigned __int128>(config.timestamp_end - config.timestamp_begin);
    const auto last = config.timestamp_begin + static_cast<std::int64_t>(range * (n - 1) / n);
    const double span = static_cast<double>(last - config.timestamp_begin);
    return std::clamp(static_cast<double>(observed_at - config.timestamp_begin) / span, 0.0, 1.0);
}

std::vector<std::pair<std::string, double>> drifted_frequencies(const CorpusConfig& config,
                                                                Label label, std::size_t family,
                                                                double tau) {
    const auto& profile = config.families(label).at(family).profile;
    const double w = config.drift.magnitude * tau;
    if (config.drift.mode != DriftMode::frequency_shift || w == 0.0) return profile.call_frequencies;

    // Rotate the distribution half-way around the shared call list and blend.
    const auto names = union_names(config);
    const std::size_t k = names.size();
    std::vector<double> start(k, 0.0);
    for (const auto& [name, f] : profile.call_frequencies) {
        start[static_cast<std::size_t>(std::lower_bound(names.begin(), names.end(), name) - names.begin())] = f;
    }
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t i = 0; i < k; ++i) {
        const double v = (1.0 - w) * start[i] + w * start[(i + k / 2) % k];
        if (v > 0.0) out.emplace_back(names[i], v);
    }
    return out;
}

std::vector<SyscallTrace> generate_corpus(const CorpusConfig& config) {
    const auto plan = layout(config);
    std::vector<SyscallTrace> traces(plan.labels.size());
    parallel_for(traces.size(), [&](std::size_t i) {
        traces[i] = generate_one(config, i, plan.labels[i], plan.observed_at[i]);
    });
    return traces;
}

// ---- oracles ----

LikelihoodModel LikelihoodModel::from_profiles(const CorpusConfig& config, double tau) {
    LikelihoodModel model;
    model.vocab_ = SyscallVocabulary(union_names(config));
    const auto width = model.vocab_.width();
    for (const Label label : {Label::goodware, Label::malware}) {
        const auto& families = config.families(label);
        double total = 0.0;
        for (const auto& wp : families) total += wp.weight;
        auto& comps = label == Label::malware ? model.malware_ : model.goodware_;
        for (std::size_t f = 0; f < families.size(); ++f) {
            Component c{std::log(families[f].weight / total), std::vector<double>(width, std::log(1e-12))};
            for (const auto& [name, p] : drifted_frequencies(config, label, f, tau)) {
                if (p > 0.0) c.log_prob[model.vocab_.index_of(name)] = std::log(p);
            }
            comps.push_back(std::move(c));
        }
    }
    return model;
}

LikelihoodModel LikelihoodModel::fit(std::span<const SyscallTrace> traces, double smoothing) {
    LikelihoodModel model;
    model.vocab_ = build_vocabulary(traces);
    const auto width = model.vocab_.width();
    std::vector<double> counts[2] = {std::vector<double>(width, smoothing),
                                     std::vector<double>(width, smoothing)};
    bool seen[2] = {false, false};
    for (const auto& t : traces) {
        if (!t.label) throw ValidationError("likelihood fit requires labeled traces");
        const auto c = static_cast<std::size_t>(*t.label);
        seen[c] = true;
        for (const auto& e : t.events) counts[c][model.vocab_.index_of(e.call)] += 1.0;
    }
    if (!seen[0] || !seen[1]) throw ValidationError("likelihood fit requires both classes");
    for (std::size_t c = 0; c < 2; ++c) {
        const double total = std::accumulate(counts[c].begin(), counts[c].end(), 0.0);
        Component comp{0.0, std::vector<double>(width)};
        for (std::size_t i = 0; i < width; ++i) comp.log_prob[i] = std::log(counts[c][i] / total);
        (c == 1 ? model.malware_ : model.goodware_).push_back(std::move(comp));
    }
    return model;
}

double LikelihoodModel::class_log_likelihood(const std::vector<Component>& comps,
                                             const std::vector<double>& counts) const {
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    for (const auto& c : comps) {
        double ll = c.log_weight;
        for (std::size_t i = 0; i < counts.size(); ++i) {
            if (counts[i] > 0.0) ll += counts[i] * c.log_prob[i];
        }
        terms.push_back(ll);
        best = std::max(best, ll);
    }
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - best);
    return best + std::log(sum);
}

double LikelihoodModel::log_odds(const SyscallTrace& trace) const {
    const auto counts = encode_histogram(trace, vocab_, false).values;
    return class_log_likelihood(malware_, counts) - class_log_likelihood(goodware_, counts);
}

OracleFactory likelihood_oracle() {
    return [](std::span<const SyscallTrace> train) {
        auto model = std::make_shared<LikelihoodModel>(LikelihoodModel::fit(train));
        return std::function<Label(const SyscallTrace&)>(
            [model](const SyscallTrace& t) { return model->predict(t); });
    };
}

DriftGap drift_gap_probe(std::span<const SyscallTrace> corpus, const OracleFactory& oracle,
                         std::uint64_t seed, double train_fraction) {
    const auto index = eval::LabeledIndex::from_traces(corpus);
    auto score = [&](const eval::Split& split) {
        std::vector<SyscallTrace> train;
        for (auto i : split.train) train.push_back(corpus[i]);
        const auto predict = oracle(train);
        std::vector<Label> predicted, truth;
        for (auto i : split.test) {
            predicted.push_back(predict(corpus[i]));
            truth.push_back(index.labels[i]);
        }
        return eval::compute_metrics(predicted, truth).metrics.caa;
    };
    const auto sorted = eval::split_sorted(index, train_fraction);

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(seed, 0x5EED);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    eval::Split shuffled;
    shuffled.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(sorted.train.size()));
    shuffled.test.assign(order.begin() + static_cast<std::ptrdiff_t>(sorted.train.size()), order.end());

    return {score(sorted), score(shuffled)};
}

// ---- JSON ----

namespace {

std::string_view mode_name(DriftMode m) {
    return m == DriftMode::frequency_shift ? "frequency-shift" : "motif-swap";
}

DriftMode mode_from(const std::string& s) {
    if (s == "frequency-shift") return DriftMode::frequency_shift;
    if (s == "motif-swap") return DriftMode::motif_swap;
    throw ParseError("unknown drift mode '" + s + "'");
}

json profile_json(const WeightedProfile& wp) {
    const auto& p = wp.profile;
    json freqs = json::array();  // ordered: sampling depends on call order
    for (const auto& [name, f] : p.call_frequencies) freqs.push_back({name, f});
    json motifs = json::array();
    for (const auto& m : p.motifs) motifs.push_back({{"calls", m.calls}, {"probability", m.probability}});
    return {{"weight", wp.weight},
            {"call_frequencies", freqs},
            {"motifs", motifs},
            {"length",
             {{"min", p.min_length},
              {"max", p.max_length},
              {"law", p.length_law == LengthLaw::uniform ? "uniform" : "log-uniform"}}},
            {"burstiness", p.burstiness}};
}

WeightedProfile profile_from(const json& j) {
    WeightedProfile wp;
    wp.weight = j.value("weight", 1.0);
    auto& p = wp.profile;
    const auto& freqs = j.at("call_frequencies");
    if (freqs.is_object()) {
        for (const auto& [name, f] : freqs.items()) p.call_frequencies.emplace_back(name, f.get<double>());
    } else {
        for (const auto& e : freqs) p.call_frequencies.emplace_back(e.at(0).get<std::string>(), e.at(1).get<double>());
    }
    for (const auto& m : j.value("motifs", json::array())) {
        p.motifs.push_back({m.at("calls").get<std::vector<std::string>>(), m.at("probability").get<double>()});
    }
    if (auto it = j.find("length"); it != j.end()) {
        p.min_length = it->value("min", p.min_length);
        p.max_length = it->value("max", p.max_length);
        const auto law = it->value("law", std::string("uniform"));
        if (law == "uniform") p.length_law = LengthLaw::uniform;
        else if (law == "log-uniform") p.length_law = LengthLaw::log_uniform;
        else throw ParseError("unknown length law '" + law + "'");
    }
    p.burstiness = j.value("burstiness", p.burstiness);
    return wp;
}

}  // namespace

void to_json(json& j, const CorpusConfig& c) {
    json segments = json::array();
    for (const auto& s : c.segments) segments.push_back({{"goodware", s.goodware}, {"malware", s.malware}});
    json good = json::array(), mal = json::array();
    for (const auto& wp : c.goodware) good.push_back(profile_json(wp));
    for (const auto& wp : c.malware) mal.push_back(profile_json(wp));
    j = {{"seed", c.seed},
         {"goodware_count", c.goodware_count},
         {"malware_count", c.malware_count},
         {"segments", segments},
         {"profiles", {{"goodware", good}, {"malware", mal}}},
         {"drift", {{"magnitude", c.drift.magnitude}, {"mode", mode_name(c.drift.mode)}}},
         {"timestamp_range", {c.timestamp_begin, c.timestamp_end}}};
}

void from_json(const json& j, CorpusConfig& c) {
    try {
        c = default_config(j.value("seed", std::uint64_t{0}), j.value("goodware_count", std::size_t{100}),
                           j.value("malware_count", std::size_t{100}));
        if (auto it = j.find("profiles"); it != j.end()) {
            if (it->contains("goodware")) {
                c.goodware.clear();
                for (const auto& p : it->at("goodware")) c.goodware.push_back(profile_from(p));
            }
            if (it->contains("malware")) {
                c.malware.clear();
                for (const auto& p : it->at("malware")) c.malware.push_back(profile_from(p));
            }
        }
        if (auto it = j.find("drift"); it != j.end()) {
            c.drift.magnitude = it->value("magnitude", 0.0);
            c.drift.mode = mode_from(it->value("mode", std::string("frequency-shift")));
        }
        if (auto it = j.find("timestamp_range"); it != j.end()) {
            c.timestamp_begin = it->at(0).get<std::int64_t>();
            c.timestamp_end = it->at(1).get<std::int64_t>();
        }
        if (auto it = j.find("segments"); it != j.end()) {
            for (const auto& s : *it) c.segments.push_back({s.at("goodware").get<std::size_t>(), s.at("malware").get<std::size_t>()});
            if (!j.contains("goodware_count") && !j.contains("malware_count")) {
                c.goodware_count = c.malware_count = 0;
                for (const auto& s : c.segments) {
                    c.goodware_count += s.goodware;
                    c.malware_count += s.malware;
                }
            }
        }
        if (auto it = j.find("shape"); it != j.end()) {
            c = reference_shape(it->get<std::string>(), j.value("scale", 1.0), std::move(c));
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("corpus config: ") + e.what());
    }
    validate(c);
}

}  // namespace dynmal::datagen
