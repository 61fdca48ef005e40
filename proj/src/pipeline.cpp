#include "dynmal/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "dynmal/error.hpp"
#include "dynmal/parallel.hpp"
#include "dynmal/random.hpp"

namespace dynmal::pipeline {

using nlohmann::json;

namespace {

constexpr std::pair<ModelKind, const char*> kModelNames[] = {
    {ModelKind::hist_rf, "hist-rf"}, {ModelKind::lsm, "lsm"},           {ModelKind::linear, "linear"},
    {ModelKind::tree, "tree"},       {ModelKind::ensemble, "ensemble"},
};

std::vector<Label> labels_of(std::span<const SyscallTrace> traces) {
    std::vector<Label> out;
    out.reserve(traces.size());
    for (const auto& t : traces) {
        if (!t.label) throw ValidationError("trace " + t.id + " has no label");
        out.push_back(*t.label);
    }
    return out;
}

template <typename T>
std::vector<T> gather(std::span<const T> items, std::span<const std::size_t> idx) {
    std::vector<T> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(items[i]);
    return out;
}

Prediction vote(std::span<const Label> labels) {
    const auto malware = static_cast<double>(std::count(labels.begin(), labels.end(), Label::malware));
    return Prediction::from_score(malware / static_cast<double>(labels.size()));
}

}  // namespace

std::string to_string(ModelKind kind) {
    for (const auto& [k, name] : kModelNames)
        if (k == kind) return name;
    return "hist-rf";
}

ModelKind model_kind_from_string(const std::string& name) {
    for (const auto& [k, n] : kModelNames)
        if (name == n) return k;
    throw ValidationError("unknown model kind: " + name);
}

// ---- TrainedModel ----

TrainedModel::TrainedModel(ModelKind kind, Payload payload, SyscallVocabulary vocab, EncodingOptions encoding)
    : kind_(kind), payload_(std::move(payload)), vocab_(std::move(vocab)), encoding_(encoding) {
    const bool matches = std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, forest::RandomForest>) return kind == ModelKind::hist_rf;
            if constexpr (std::is_same_v<T, reservoir::LsmModel>) return kind == ModelKind::lsm;
            if constexpr (std::is_same_v<T, forest::LinearModel>) return kind == ModelKind::linear;
            if constexpr (std::is_same_v<T, forest::DecisionTree>) return kind == ModelKind::tree;
            if constexpr (std::is_same_v<T, Ensemble>) return kind == ModelKind::ensemble && !p.empty();
            return false;
        },
        payload_);
    if (!matches) throw ValidationError("model payload does not match kind " + to_string(kind));
    if (encoding_.truncation == 0) throw ValidationError("truncation must be positive");
}

std::vector<double> TrainedModel::histogram(const SyscallTrace& trace) const {
    return encode_histogram(truncate(trace, TruncationLimit(encoding_.truncation)), vocab_, encoding_.normalize)
        .values;
}

Prediction TrainedModel::predict(const SyscallTrace& trace) const {
    return std::visit(
        [&](const auto& p) -> Prediction {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, reservoir::LsmModel>) {
                return p.predict(encode_multihot(truncate(trace, TruncationLimit(encoding_.truncation)), vocab_));
            } else if constexpr (std::is_same_v<T, Ensemble>) {
                std::vector<Label> labels;
                for (const auto& m : p) labels.push_back(m.predict(trace).label);
                return vote(labels);
            } else {
                return p.predict(histogram(trace));
            }
        },
        payload_);
}

bool TrainedModel::histogram_native() const {
    if (const auto* members = std::get_if<Ensemble>(&payload_))
        return std::all_of(members->begin(), members->end(), [](const auto& m) { return m.histogram_native(); });
    return kind_ != ModelKind::lsm;
}

double TrainedModel::histogram_score(std::span<const double> h) const {
    if (h.size() != vocab_.width()) throw DimensionError("histogram width does not match vocabulary");
    return std::visit(
        [&](const auto& p) -> double {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, reservoir::LsmModel>) {
                return p.predict(spread_histogram(h, encoding_.normalize, encoding_.truncation, p.windows.horizon()))
                    .score;
            } else if constexpr (std::is_same_v<T, Ensemble>) {
                std::vector<Label> labels;
                for (const auto& m : p) labels.push_back(Prediction::from_score(m.histogram_score(h)).label);
                return vote(labels).score;
            } else {
                return p.predict(h).score;
            }
        },
        payload_);
}

MultiHotMatrix spread_histogram(std::span<const double> histogram, bool normalized, std::size_t total_calls,
                                std::size_t steps) {
    if (steps == 0) throw ValidationError("spreading needs at least one step");
    MultiHotMatrix m;
    m.width = histogram.size();
    std::vector<std::uint64_t> calls(histogram.size());
    for (std::size_t j = 0; j < histogram.size(); ++j) {
        const double c = normalized ? histogram[j] * static_cast<double>(total_calls) : histogram[j];
        calls[j] = c > 0.0 ? static_cast<std::uint64_t>(std::llround(c)) : 0;
    }
    std::vector<std::uint32_t> row(m.width);
    for (std::size_t t = 0; t < steps; ++t) {
        bool any = false;
        for (std::size_t j = 0; j < m.width; ++j) {
            row[j] = static_cast<std::uint32_t>((t + 1) * calls[j] / steps - t * calls[j] / steps);
            any = any || row[j] != 0;
        }
        if (!any) continue;
        m.time_steps.push_back(static_cast<std::int64_t>(t));
        m.counts.insert(m.counts.end(), row.begin(), row.end());
    }
    return m;
}

FeatureMatrix histogram_matrix(std::span<const SyscallTrace> traces, const SyscallVocabulary& vocab,
                               const EncodingOptions& encoding) {
    FeatureMatrix x(traces.size(), vocab.width());
    parallel_for(traces.size(), [&](std::size_t i) {
        const auto h =
            encode_histogram(truncate(traces[i], TruncationLimit(encoding.truncation)), vocab, encoding.normalize);
        std::copy(h.values.begin(), h.values.end(), x.row(i).begin());
    });
    return x;
}

std::vector<double> column_means(const FeatureMatrix& m) {
    std::vector<double> mean(m.cols(), 0.0);
    if (m.rows() == 0) return mean;
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) mean[c] += m(r, c);
    for (double& v : mean) v /= static_cast<double>(m.rows());
    return mean;
}

TrainedModel train_model(ModelKind kind, std::span<const SyscallTrace> train, const ModelParams& params,
                         const EncodingOptions& encoding, std::uint64_t seed) {
    if (train.empty()) throw ValidationError("cannot train on an empty set");
    const auto labels = labels_of(train);
    auto vocab = build_vocabulary(train);

    switch (kind) {
        case ModelKind::hist_rf: {
            auto p = params.forest;
            p.seed = derive_seed(seed, 1);
            auto model = forest::train_random_forest(histogram_matrix(train, vocab, encoding), labels, p);
            return {kind, std::move(model), std::move(vocab), encoding};
        }
        case ModelKind::tree: {
            auto p = params.tree;
            p.seed = derive_seed(seed, 2);
            auto model = forest::train_decision_tree(histogram_matrix(train, vocab, encoding), labels, p);
            return {kind, std::move(model), std::move(vocab), encoding};
        }
        case ModelKind::linear: {
            auto p = params.linear;
            p.seed = derive_seed(seed, 3);
            auto model = forest::train_linear(histogram_matrix(train, vocab, encoding), labels, p);
            return {kind, std::move(model), std::move(vocab), encoding};
        }
        case ModelKind::lsm: {
            reservoir::LsmModel model;
            model.topology = reservoir::build_liquid(params.liquid, vocab.width(), derive_seed(seed, 4));
            model.lif = params.lif;
            model.windows = params.windows;
            std::vector<MultiHotMatrix> inputs(train.size());
            parallel_for(train.size(), [&](std::size_t i) {
                inputs[i] = encode_multihot(truncate(train[i], TruncationLimit(encoding.truncation)), vocab);
            });
            const auto states = reservoir::liquid_states(model.topology, model.lif, inputs, model.windows);
            const auto malware = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Label::malware));
            const std::size_t folds = std::min({params.readout_folds, malware, labels.size() - malware});
            if (folds < 2) throw ValidationError("LSM readout needs at least two samples of each class");
            const auto search = params.readout == reservoir::ReadoutKind::linear
                                    ? reservoir::ReadoutSearch::linear_default()
                                    : reservoir::ReadoutSearch::rbf_default();
            model.readout = reservoir::train_readout(states, labels, search, folds, derive_seed(seed, 5));
            return {kind, std::move(model), std::move(vocab), encoding};
        }
        case ModelKind::ensemble: {
            if (params.ensemble_members.empty()) throw ValidationError("ensemble has no members");
            TrainedModel::Ensemble members;
            for (std::size_t i = 0; i < params.ensemble_members.size(); ++i) {
                const auto member = params.ensemble_members[i];
                if (member == ModelKind::ensemble) throw ValidationError("ensembles cannot nest");
                members.push_back(train_model(member, train, params, encoding, derive_seed(seed, 10 + i)));
            }
            return {kind, std::move(members), std::move(vocab), encoding};
        }
    }
    throw ValidationError("unknown model kind");
}

// ---- archives ----

std::string sha256_hex(const std::string& data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
        throw Error("SHA-256 computation failed");
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += kHex[digest[i] >> 4];
        out += kHex[digest[i] & 0xF];
    }
    return out;
}

std::string json_hash(const json& j) { return sha256_hex(j.dump()); }

namespace {

json encoding_json(const EncodingOptions& e) { return {{"truncation", e.truncation}, {"normalize", e.normalize}}; }

EncodingOptions encoding_from(const json& j) {
    EncodingOptions e;
    e.truncation = j.value("truncation", e.truncation);
    e.normalize = j.value("normalize", e.normalize);
    if (e.truncation == 0) throw ValidationError("truncation must be positive");
    return e;
}

json model_content(const TrainedModel& model) {
    json payload = std::visit(
        [](const auto& p) -> json {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, TrainedModel::Ensemble>) {
                json members = json::array();
                for (const auto& m : p) members.push_back(model_content(m));
                return {{"members", members}};
            } else if constexpr (std::is_same_v<T, reservoir::LsmModel>) {
                return reservoir::to_json(p);
            } else {
                return forest::to_json(p);
            }
        },
        model.payload());
    return {{"model_kind", to_string(model.kind())},
            {"payload", std::move(payload)},
            {"vocabulary", model.vocabulary().names()},
            {"encoding", encoding_json(model.encoding())}};
}

TrainedModel model_from_content(const json& j) {
    const auto kind = model_kind_from_string(j.at("model_kind").get<std::string>());
    SyscallVocabulary vocab(j.at("vocabulary").get<std::vector<std::string>>());
    const auto encoding = encoding_from(j.at("encoding"));
    const auto& p = j.at("payload");
    switch (kind) {
        case ModelKind::hist_rf: return {kind, forest::forest_from_json(p), std::move(vocab), encoding};
        case ModelKind::tree: return {kind, forest::tree_from_json(p), std::move(vocab), encoding};
        case ModelKind::linear: return {kind, forest::linear_from_json(p), std::move(vocab), encoding};
        case ModelKind::lsm: return {kind, reservoir::lsm_from_json(p), std::move(vocab), encoding};
        case ModelKind::ensemble: {
            TrainedModel::Ensemble members;
            for (const auto& m : p.at("members")) members.push_back(model_from_content(m));
            return {kind, std::move(members), std::move(vocab), encoding};
        }
    }
    throw ArchiveError("unknown model kind in archive");
}

}  // namespace

json to_archive(const TrainedModel& model, const Provenance& provenance) {
    json content = model_content(model);
    json prov = {{"config_hash", provenance.config_hash}, {"seed", provenance.seed}};
    if (provenance.created_at) prov["created_at"] = *provenance.created_at;
    json archive = {{"format_version", kArchiveVersion},
                    {"kind", "model_archive"},
                    {"checksum", json_hash(content)},
                    {"provenance", std::move(prov)}};
    archive["model"] = std::move(content);
    return archive;
}

TrainedModel from_archive(const json& archive, Provenance* provenance) {
    try {
        if (archive.value("kind", std::string{}) != "model_archive") throw ArchiveError("not a model archive");
        const int version = archive.at("format_version").get<int>();
        if (version != kArchiveVersion)
            throw ArchiveError("unsupported archive format_version " + std::to_string(version) + " (expected " +
                               std::to_string(kArchiveVersion) + ")");
        const auto& content = archive.at("model");
        if (json_hash(content) != archive.at("checksum").get<std::string>())
            throw ArchiveError("archive checksum mismatch: payload is corrupted");
        if (provenance) {
            const auto& p = archive.at("provenance");
            provenance->config_hash = p.value("config_hash", std::string{});
            provenance->seed = p.value("seed", std::uint64_t{0});
            provenance->created_at.reset();
            if (p.contains("created_at")) provenance->created_at = p.at("created_at").get<std::string>();
        }
        return model_from_content(content);
    } catch (const json::exception& e) {
        throw ArchiveError(std::string("malformed archive: ") + e.what());
    }
}

void save_model(const std::string& path, const TrainedModel& model, const Provenance& provenance) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << to_archive(model, provenance).dump() << '\n';
    if (!out) throw Error("failed writing " + path);
}

TrainedModel load_model(const std::string& path, Provenance* provenance) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ArchiveError(path + ": " + e.what());
    }
    return from_archive(j, provenance);
}

// ---- configuration ----

std::string to_string(SplitKind kind) {
    switch (kind) {
        case SplitKind::sorted: return "sorted";
        case SplitKind::cv: return "cv";
        case SplitKind::distributed: return "distributed";
    }
    return "sorted";
}

SplitKind split_kind_from_string(const std::string& name) {
    if (name == "sorted") return SplitKind::sorted;
    if (name == "cv") return SplitKind::cv;
    if (name == "distributed") return SplitKind::distributed;
    throw ValidationError("unknown split: " + name);
}

namespace {

json counts_json(const eval::SplitCounts& c) {
    return {{"train_goodware", c.train_goodware},
            {"test_goodware", c.test_goodware},
            {"train_malware", c.train_malware},
            {"test_malware", c.test_malware}};
}

eval::SplitCounts counts_from(const json& j) {
    return {j.at("train_goodware").get<std::size_t>(), j.at("test_goodware").get<std::size_t>(),
            j.at("train_malware").get<std::size_t>(), j.at("test_malware").get<std::size_t>()};
}

json params_json(const ModelParams& p) {
    json members = json::array();
    for (auto k : p.ensemble_members) members.push_back(to_string(k));
    return {
        {"forest",
         {{"trees", p.forest.trees},
          {"bootstrap", p.forest.bootstrap},
          {"max_features", p.forest.max_features},
          {"max_depth", p.forest.max_depth},
          {"min_samples_leaf", p.forest.min_samples_leaf}}},
        {"tree",
         {{"max_depth", p.tree.max_depth},
          {"min_samples_leaf", p.tree.min_samples_leaf},
          {"max_features", p.tree.max_features}}},
        {"linear", {{"learning_rate", p.linear.learning_rate}, {"epochs", p.linear.epochs}, {"l2", p.linear.l2}}},
        {"liquid",
         {{"neuron_count", p.liquid.neuron_count},
          {"input_fraction", p.liquid.input_fraction},
          {"input_weight_min", p.liquid.input_weight_min},
          {"input_weight_max", p.liquid.input_weight_max},
          {"recurrent", p.liquid.recurrent},
          {"recurrent_density", p.liquid.recurrent_density},
          {"excitatory_fraction", p.liquid.excitatory_fraction},
          {"spectral_radius", p.liquid.spectral_radius}}},
        {"lif",
         {{"membrane_time_constant", p.lif.membrane_time_constant},
          {"threshold", p.lif.threshold},
          {"reset_potential", p.lif.reset_potential},
          {"refractory_period", p.lif.refractory_period},
          {"simulation_step", p.lif.simulation_step}}},
        {"windows", {{"windows", p.windows.windows}, {"window_steps", p.windows.window_steps}}},
        {"readout", p.readout == reservoir::ReadoutKind::linear ? "linear" : "rbf-svm"},
        {"readout_folds", p.readout_folds},
        {"ensemble_members", members},
    };
}

template <typename T>
void read_opt(const json& j, const char* key, T& field) {
    if (j.contains(key)) field = j.at(key).get<T>();
}

ModelParams params_from(const json& j) {
    ModelParams p;
    if (j.contains("forest")) {
        const auto& f = j.at("forest");
        read_opt(f, "trees", p.forest.trees);
        read_opt(f, "bootstrap", p.forest.bootstrap);
        read_opt(f, "max_features", p.forest.max_features);
        read_opt(f, "max_depth", p.forest.max_depth);
        read_opt(f, "min_samples_leaf", p.forest.min_samples_leaf);
        if (p.forest.trees == 0) throw ValidationError("forest needs at least one tree");
    }
    if (j.contains("tree")) {
        const auto& t = j.at("tree");
        read_opt(t, "max_depth", p.tree.max_depth);
        read_opt(t, "min_samples_leaf", p.tree.min_samples_leaf);
        read_opt(t, "max_features", p.tree.max_features);
    }
    if (j.contains("linear")) {
        const auto& l = j.at("linear");
        read_opt(l, "learning_rate", p.linear.learning_rate);
        read_opt(l, "epochs", p.linear.epochs);
        read_opt(l, "l2", p.linear.l2);
    }
    if (j.contains("liquid")) {
        const auto& l = j.at("liquid");
        read_opt(l, "neuron_count", p.liquid.neuron_count);
        read_opt(l, "input_fraction", p.liquid.input_fraction);
        read_opt(l, "input_weight_min", p.liquid.input_weight_min);
        read_opt(l, "input_weight_max", p.liquid.input_weight_max);
        read_opt(l, "recurrent", p.liquid.recurrent);
        read_opt(l, "recurrent_density", p.liquid.recurrent_density);
        read_opt(l, "excitatory_fraction", p.liquid.excitatory_fraction);
        read_opt(l, "spectral_radius", p.liquid.spectral_radius);
    }
    if (j.contains("lif")) {
        const auto& l = j.at("lif");
        read_opt(l, "membrane_time_constant", p.lif.membrane_time_constant);
        read_opt(l, "threshold", p.lif.threshold);
        read_opt(l, "reset_potential", p.lif.reset_potential);
        read_opt(l, "refractory_period", p.lif.refractory_period);
        read_opt(l, "simulation_step", p.lif.simulation_step);
        reservoir::validate(p.lif);
    }
    if (j.contains("windows")) {
        read_opt(j.at("windows"), "windows", p.windows.windows);
        read_opt(j.at("windows"), "window_steps", p.windows.window_steps);
        if (p.windows.windows == 0 || p.windows.window_steps == 0)
            throw ValidationError("state windows must be non-empty");
    }
    if (j.contains("readout")) {
        const auto r = j.at("readout").get<std::string>();
        if (r == "linear")
            p.readout = reservoir::ReadoutKind::linear;
        else if (r == "rbf-svm")
            p.readout = reservoir::ReadoutKind::rbf_svm;
        else
            throw ValidationError("unknown readout: " + r);
    }
    read_opt(j, "readout_folds", p.readout_folds);
    if (j.contains("ensemble_members")) {
        p.ensemble_members.clear();
        for (const auto& m : j.at("ensemble_members")) p.ensemble_members.push_back(model_kind_from_string(m));
    }
    return p;
}

}  // namespace

void to_json(json& j, const PipelineConfig& c) {
    json models = json::array();
    for (auto k : c.models) models.push_back(to_string(k));
    json split = {{"kind", to_string(c.split.kind)},
                  {"train_fraction", c.split.train_fraction},
                  {"folds", c.split.folds}};
    if (c.split.counts) split["counts"] = counts_json(*c.split.counts);
    json target = json::object();
    if (c.split.target.goodware) target["goodware"] = *c.split.target.goodware;
    if (c.split.target.malware) target["malware"] = *c.split.target.malware;
    split["target"] = target;
    j = {{"seed", c.seed},
         {"paths",
          {{"corpus", c.paths.corpus},
           {"vocabulary", c.paths.vocabulary},
           {"model_store", c.paths.model_store},
           {"report_dir", c.paths.report_dir}}},
         {"encoding", encoding_json(c.encoding)},
         {"models", models},
         {"params", params_json(c.params)},
         {"split", split},
         {"alpha", c.alpha},
         {"explain",
          {{"perturbations", c.explain.lime.perturbations},
           {"kernel_width", c.explain.lime.kernel_width},
           {"ridge", c.explain.lime.ridge},
           {"mask_probability", c.explain.lime.mask_probability},
           {"samples", c.explain.samples},
           {"top_k", c.explain.top_k},
           {"table_features", c.explain.table_features},
           {"tie_tolerance", c.explain.tie_tolerance},
           {"rule_depth", c.explain.rule_depth}}}};
    if (c.corpus) j["corpus"] = *c.corpus;
}

void from_json(const json& j, PipelineConfig& c) {
    c = PipelineConfig{};
    read_opt(j, "seed", c.seed);
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        read_opt(p, "corpus", c.paths.corpus);
        read_opt(p, "vocabulary", c.paths.vocabulary);
        read_opt(p, "model_store", c.paths.model_store);
        read_opt(p, "report_dir", c.paths.report_dir);
    }
    if (j.contains("encoding")) c.encoding = encoding_from(j.at("encoding"));
    if (j.contains("models")) {
        c.models.clear();
        for (const auto& m : j.at("models")) c.models.push_back(model_kind_from_string(m));
    }
    if (j.contains("params")) c.params = params_from(j.at("params"));
    if (j.contains("split")) {
        const auto& s = j.at("split");
        if (s.contains("kind")) c.split.kind = split_kind_from_string(s.at("kind"));
        read_opt(s, "train_fraction", c.split.train_fraction);
        read_opt(s, "folds", c.split.folds);
        if (s.contains("counts")) c.split.counts = counts_from(s.at("counts"));
        if (s.contains("target")) {
            const auto& t = s.at("target");
            if (t.contains("goodware")) c.split.target.goodware = t.at("goodware").get<std::size_t>();
            if (t.contains("malware")) c.split.target.malware = t.at("malware").get<std::size_t>();
        }
    }
    read_opt(j, "alpha", c.alpha);
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
    if (j.contains("explain")) {
        const auto& e = j.at("explain");
        read_opt(e, "perturbations", c.explain.lime.perturbations);
        read_opt(e, "kernel_width", c.explain.lime.kernel_width);
        read_opt(e, "ridge", c.explain.lime.ridge);
        read_opt(e, "mask_probability", c.explain.lime.mask_probability);
        read_opt(e, "samples", c.explain.samples);
        read_opt(e, "top_k", c.explain.top_k);
        read_opt(e, "table_features", c.explain.table_features);
        read_opt(e, "tie_tolerance", c.explain.tie_tolerance);
        read_opt(e, "rule_depth", c.explain.rule_depth);
    }
    if (j.contains("corpus")) c.corpus = j.at("corpus").get<datagen::CorpusConfig>();
}

std::string config_hash(const PipelineConfig& config) { return json_hash(json(config)); }

// ---- evaluation ----

eval::Split make_split(std::span<const SyscallTrace> corpus, const SplitConfig& split, std::uint64_t seed) {
    const auto index = eval::LabeledIndex::from_traces(corpus);
    switch (split.kind) {
        case SplitKind::sorted:
            return split.counts ? eval::split_sorted(index, *split.counts)
                                : eval::split_sorted(index, split.train_fraction);
        case SplitKind::distributed: {
            eval::TemporalCut cut = split.train_fraction;
            if (split.counts) cut = *split.counts;
            return eval::split_distributed(index, cut, split.target, derive_seed(seed, kSplitStream));
        }
        case SplitKind::cv: break;
    }
    throw ValidationError("cross-validation has no single split");
}

namespace {

std::vector<eval::Split> make_splits(std::span<const SyscallTrace> corpus, const SplitConfig& split,
                                     std::uint64_t seed) {
    if (split.kind != SplitKind::cv) return {make_split(corpus, split, seed)};
    return eval::split_kfold(eval::LabeledIndex::from_traces(corpus), split.folds, derive_seed(seed, kSplitStream));
}

std::vector<std::string> ids_of(std::span<const SyscallTrace> traces) {
    std::vector<std::string> ids;
    for (const auto& t : traces) ids.push_back(t.id);
    return ids;
}

std::vector<Label> predict_all(const TrainedModel& model, std::span<const SyscallTrace> traces) {
    std::vector<Label> out(traces.size());
    parallel_for(traces.size(), [&](std::size_t i) { out[i] = model.predict(traces[i]).label; });
    return out;
}

}  // namespace

std::vector<eval::ReportEntry> evaluate_models(std::span<const SyscallTrace> corpus,
                                               std::span<const ModelKind> models, const SplitConfig& split,
                                               const ModelParams& params, const EncodingOptions& encoding,
                                               std::uint64_t seed) {
    if (models.empty()) throw ValidationError("no models requested");
    const auto splits = make_splits(corpus, split, seed);

    std::vector<ModelKind> needed;
    auto need = [&](ModelKind k) {
        if (std::find(needed.begin(), needed.end(), k) == needed.end()) needed.push_back(k);
    };
    for (auto k : models) {
        if (k == ModelKind::ensemble) {
            if (params.ensemble_members.empty()) throw ValidationError("ensemble has no members");
            for (auto m : params.ensemble_members) {
                if (m == ModelKind::ensemble) throw ValidationError("ensembles cannot nest");
                need(m);
            }
        } else {
            need(k);
        }
    }

    std::vector<std::vector<eval::ReportEntry>> parts(models.size());
    const std::uint64_t model_seed = derive_seed(seed, kModelStream);
    for (std::size_t f = 0; f < splits.size(); ++f) {
        const auto train = gather<SyscallTrace>(corpus, splits[f].train);
        const auto test = gather<SyscallTrace>(corpus, splits[f].test);
        if (test.empty()) throw ValidationError("split has an empty test set");
        const auto truth = labels_of(test);
        const auto ids = ids_of(test);

        std::vector<std::vector<Label>> predictions(needed.size());
        for (std::size_t n = 0; n < needed.size(); ++n) {
            const auto s = derive_seed(model_seed, static_cast<std::uint64_t>(needed[n]) * 1000 + f);
            predictions[n] = predict_all(train_model(needed[n], train, params, encoding, s), test);
        }
        auto predictions_of = [&](ModelKind k) -> const std::vector<Label>& {
            return predictions[static_cast<std::size_t>(std::find(needed.begin(), needed.end(), k) - needed.begin())];
        };
        for (std::size_t m = 0; m < models.size(); ++m) {
            std::vector<Label> predicted;
            if (models[m] == ModelKind::ensemble) {
                std::vector<std::vector<Label>> votes;
                for (auto k : params.ensemble_members) votes.push_back(predictions_of(k));
                predicted = eval::majority_vote(votes);
            } else {
                predicted = predictions_of(models[m]);
            }
            parts[m].push_back(eval::make_entry(to_string(models[m]), to_string(split.kind), encoding.truncation,
                                                seed, predicted, truth, ids));
        }
    }

    std::vector<eval::ReportEntry> out;
    for (auto& p : parts) out.push_back(p.size() == 1 ? std::move(p.front()) : eval::merge_entries(p));
    return out;
}

eval::ReportEntry evaluate_trained(const TrainedModel& model, std::span<const SyscallTrace> corpus,
                                   const SplitConfig& split, std::uint64_t seed) {
    std::vector<std::size_t> test;
    if (split.kind == SplitKind::cv) {
        test.resize(corpus.size());
        std::iota(test.begin(), test.end(), std::size_t{0});
    } else {
        test = make_split(corpus, split, seed).test;
    }
    const auto traces = gather<SyscallTrace>(corpus, test);
    return eval::make_entry(to_string(model.kind()), to_string(split.kind), model.encoding().truncation, seed,
                            predict_all(model, traces), labels_of(traces), ids_of(traces));
}

eval::NamedFactory sweep_factory(ModelKind kind, const ModelParams& params, bool normalize, std::uint64_t seed) {
    return {to_string(kind), [=](std::span<const SyscallTrace> train) {
                auto model = std::make_shared<TrainedModel>(
                    train_model(kind, train, params, EncodingOptions{kNoTruncation, normalize}, seed));
                return std::function<Label(const SyscallTrace&)>(
                    [model](const SyscallTrace& t) { return model->predict(t).label; });
            }};
}

stats::CorrectnessMatrix correctness_matrix(const eval::EvaluationReport& report, const std::string& split) {
    std::vector<std::string> names;
    std::vector<std::vector<bool>> columns;
    const eval::ReportEntry* first = nullptr;
    for (const auto& e : report.entries) {
        if (e.split != split) continue;
        if (first) {
            if (e.correct.size() != first->correct.size())
                throw DimensionError("report entries cover different sample counts");
            if (!e.sample_ids.empty() && !first->sample_ids.empty() && e.sample_ids != first->sample_ids)
                throw ValidationError("report entries cover different samples");
        } else {
            first = &e;
        }
        names.push_back(e.model);
        columns.push_back(e.correct);
    }
    if (names.empty()) throw ValidationError("report has no entries for split " + split);
    return stats::CorrectnessMatrix(std::move(names), std::move(columns));
}

std::string render_report(const eval::EvaluationReport& report) {
    std::ostringstream out;
    out << "config " << (report.config_hash.empty() ? "-" : report.config_hash.substr(0, 16)) << "\n";
    char line[256];
    std::snprintf(line, sizeof line, "%-10s %-12s %7s %8s %8s %8s %8s %7s %7s %7s %7s\n", "model", "split", "length",
                  "acc", "caa", "mpr", "mre", "tp", "fp", "tn", "fn");
    out << line;
    for (const auto& e : report.entries) {
        std::snprintf(line, sizeof line, "%-10s %-12s %7zu %8.4f %8.4f %8.4f %8.4f %7zu %7zu %7zu %7zu\n",
                      e.model.c_str(), e.split.c_str(), e.length, e.metrics.acc, e.metrics.caa, e.metrics.mpr,
                      e.metrics.mre, e.counts.tp, e.counts.fp, e.counts.tn, e.counts.fn);
        out << line;
    }
    return out.str();
}

// ---- explanations ----

ExplanationBundle explain_model(const TrainedModel& model, std::span<const SyscallTrace> train,
                                std::span<const SyscallTrace> test, const ExplainConfig& config,
                                std::uint64_t seed) {
    if (train.empty()) throw ValidationError("explanations need training samples");
    ExplanationBundle b;
    const auto& vocab = model.vocabulary();
    for (std::size_t c = 0; c < vocab.width(); ++c) b.names.push_back(vocab.column_name(c));

    const auto train_x = histogram_matrix(train, vocab, model.encoding());
    const auto background = column_means(train_x);
    auto score = [&model](std::span<const double> h) { return model.histogram_score(h); };

    std::vector<std::size_t> order(test.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng = make_rng(seed, kExplainStream);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    order.resize(std::min(order.size(), config.samples));
    std::sort(order.begin(), order.end());

    for (std::size_t n = 0; n < order.size(); ++n) {
        const auto& trace = test[order[n]];
        auto lime = config.lime;
        lime.seed = derive_seed(seed, 100 + n);
        lime.top_k = config.top_k;
        auto e = explain::lime_explain(score, model.histogram(trace), background, lime);
        e.sample_id = trace.id;
        e.true_label = trace.label;
        e.approximate_input = !model.histogram_native();
        b.local.push_back(std::move(e));
    }
    for (auto g : {explain::Group::all, explain::Group::correct_malware, explain::Group::misclassified_malware}) {
        const bool any = std::any_of(b.local.begin(), b.local.end(), [&](const auto& e) { return explain::in_group(e, g); });
        if (any) b.summaries.push_back(explain::summarize_explanations(b.local, g, config.top_k));
    }

    forest::TreeParams tp;
    tp.max_depth = config.rule_depth;
    tp.seed = derive_seed(seed, 7);
    forest::DecisionTree distilled;
    if (const auto* rf = std::get_if<forest::RandomForest>(&model.payload())) {
        distilled = explain::distill_tree(*rf, train_x, tp);
        b.importance = forest::gini_importance(*rf);
    } else {
        std::vector<Label> teacher(train_x.rows());
        for (std::size_t r = 0; r < train_x.rows(); ++r)
            teacher[r] = Prediction::from_score(model.histogram_score(train_x.row(r))).label;
        distilled = forest::train_decision_tree(train_x, teacher, tp);
        if (const auto* tree = std::get_if<forest::DecisionTree>(&model.payload()))
            b.importance = forest::gini_importance(*tree);
        else
            b.importance = forest::gini_importance(distilled);
    }
    b.rules = explain::extract_rules(distilled);

    const auto normalized =
        model.encoding().normalize ? train_x
                                   : histogram_matrix(train, vocab, EncodingOptions{model.encoding().truncation, true});
    const auto top = explain::top_features(b.importance, config.table_features);
    b.marks = explain::class_frequency_marks(normalized, labels_of(train), top, config.tie_tolerance);
    return b;
}

json to_json(const ExplanationBundle& b) {
    json local = json::array();
    for (const auto& e : b.local) local.push_back(explain::to_json(e, b.names));
    json summaries = json::array();
    for (const auto& s : b.summaries) summaries.push_back(explain::to_json(s, b.names));
    json rules = json::array();
    for (const auto& r : b.rules) {
        json conditions = json::array();
        for (const auto& c : r.conditions)
            conditions.push_back(
                {{"feature", b.names.at(c.feature)}, {"op", c.greater ? ">" : "<="}, {"threshold", c.threshold}});
        rules.push_back({{"conditions", conditions},
                         {"class", to_string(r.predicted)},
                         {"counts", {{"goodware", r.counts[0]}, {"malware", r.counts[1]}}}});
    }
    json table = json::array();
    for (const auto& m : b.marks) {
        const char* mark = m.mark == explain::Mark::goodware ? "goodware"
                           : m.mark == explain::Mark::malware ? "malware"
                                                              : "tie";
        table.push_back({{"feature", b.names.at(m.feature)},
                         {"importance", b.importance.at(m.feature)},
                         {"mark", mark},
                         {"goodware_mean", m.goodware_mean},
                         {"malware_mean", m.malware_mean}});
    }
    return {{"kind", "explanations"},
            {"local", local},
            {"summaries", summaries},
            {"rules", rules},
            {"frequency_table", table}};
}

std::string render_explanations(const ExplanationBundle& b) {
    std::string out;
    for (const auto& s : b.summaries) out += explain::render_bars(s, b.names) + "\n";
    out += explain::render_importance_table(b.marks, b.importance, b.names) + "\n";
    out += explain::render_rules(b.rules, b.names);
    return out;
}

}  // namespace dynmal::pipeline
