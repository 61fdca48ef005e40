#include <sstream>

#include <nlohmann/json.hpp>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dynmal/datagen.hpp"
#include "dynmal/error.hpp"
#include "dynmal/eval.hpp"
#include "dynmal/explain.hpp"
#include "dynmal/pipeline.hpp"
#include "dynmal/reservoir.hpp"
#include "dynmal/stats.hpp"
#include "dynmal/trace.hpp"

namespace py = pybind11;
using nlohmann::json;
using namespace dynmal;

namespace {

// JSON documents cross the boundary as text; the Python package decodes them.
pipeline::PipelineConfig config_from(const std::string& text) {
    return json::parse(text.empty() ? "{}" : text).get<pipeline::PipelineConfig>();
}

std::vector<Label> labels_from(const std::vector<int>& values) {
    std::vector<Label> out;
    out.reserve(values.size());
    for (int v : values) {
        if (v != 0 && v != 1) throw ValidationError("labels must be 0 (goodware) or 1 (malware)");
        out.push_back(static_cast<Label>(v));
    }
    return out;
}

json metrics_json(const eval::Metrics& m) {
    return {{"acc", m.metrics.acc}, {"caa", m.metrics.caa}, {"mpr", m.metrics.mpr}, {"mre", m.metrics.mre},
            {"tp", m.counts.tp},    {"fp", m.counts.fp},    {"tn", m.counts.tn},    {"fn", m.counts.fn}};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Native core of the dynmal malware-detection toolkit";

    static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
    static py::exception<ParseError> parse(m, "ParseError", base.ptr());
    static py::exception<ValidationError> validation(m, "ValidationError", base.ptr());
    static py::exception<DimensionError> dimension(m, "DimensionError", base.ptr());
    static py::exception<ArchiveError> archive(m, "ArchiveError", base.ptr());
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ParseError& e) {
            parse(e.what());
        } catch (const ValidationError& e) {
            validation(e.what());
        } catch (const DimensionError& e) {
            dimension(e.what());
        } catch (const ArchiveError& e) {
            archive(e.what());
        } catch (const Error& e) {
            base(e.what());
        } catch (const json::exception& e) {
            parse(e.what());
        }
    });

    // ---- traces ----

    py::class_<SyscallTrace>(m, "Trace")
        .def(py::init([](std::string id, std::optional<std::string> label, std::int64_t observed_at,
                         std::vector<std::pair<std::int64_t, std::string>> events) {
                 SyscallTrace t;
                 t.id = std::move(id);
                 if (label) t.label = label_from_string(*label);
                 t.observed_at = observed_at;
                 for (auto& [step, call] : events) t.events.push_back({step, std::move(call)});
                 validate(t);
                 return t;
             }),
             py::arg("id"), py::arg("label") = py::none(), py::arg("observed_at") = 0,
             py::arg("events") = std::vector<std::pair<std::int64_t, std::string>>{})
        .def_readonly("id", &SyscallTrace::id)
        .def_readonly("observed_at", &SyscallTrace::observed_at)
        .def_property_readonly("label",
                               [](const SyscallTrace& t) -> std::optional<std::string> {
                                   if (!t.label) return std::nullopt;
                                   return std::string(to_string(*t.label));
                               })
        .def_property_readonly("events",
                               [](const SyscallTrace& t) {
                                   std::vector<std::pair<std::int64_t, std::string>> out;
                                   for (const auto& e : t.events) out.emplace_back(e.time_step, e.call);
                                   return out;
                               })
        .def("__len__", [](const SyscallTrace& t) { return t.events.size(); })
        .def("__eq__", [](const SyscallTrace& a, const SyscallTrace& b) { return a == b; })
        .def("truncate", [](const SyscallTrace& t, std::size_t n) { return truncate(t, TruncationLimit(n)); })
        .def("to_json", &serialize_trace)
        .def("__repr__", [](const SyscallTrace& t) {
            return "<Trace " + t.id + " " + (t.label ? std::string(to_string(*t.label)) : "unlabeled") + ", " +
                   std::to_string(t.events.size()) + " calls>";
        });

    m.def("parse_trace", [](const std::string& record) { return parse_trace(record); });
    m.def("read_traces", [](const std::string& text) {
        std::istringstream in(text);
        return read_traces(in);
    }, "Parse JSON Lines text into traces.");
    m.def("write_traces", [](const std::vector<SyscallTrace>& traces) {
        std::ostringstream out;
        write_traces(out, traces);
        return out.str();
    }, "Serialize traces as JSON Lines text.");
    m.def("vocabulary", [](const std::vector<SyscallTrace>& traces) { return build_vocabulary(traces).names(); },
          "Sorted call names seen in the corpus.");

    // ---- synthetic corpora ----

    m.def("default_corpus_config", [](std::uint64_t seed, std::size_t goodware, std::size_t malware) {
        return json(datagen::default_config(seed, goodware, malware)).dump();
    }, py::arg("seed") = 0, py::arg("goodware") = 100, py::arg("malware") = 100);
    m.def("reference_corpus_config", [](const std::string& shape, double scale, std::uint64_t seed) {
        return json(datagen::reference_shape(shape, scale, datagen::default_config(seed))).dump();
    }, py::arg("shape"), py::arg("scale") = 1.0, py::arg("seed") = 0);
    m.def("generate_corpus", [](const std::string& config) {
        const auto c = json::parse(config).get<datagen::CorpusConfig>();
        py::gil_scoped_release release;
        return datagen::generate_corpus(c);
    });

    // ---- metrics and statistics ----

    m.def("compute_metrics", [](const std::vector<int>& predicted, const std::vector<int>& truth) {
        return metrics_json(eval::compute_metrics(labels_from(predicted), labels_from(truth))).dump();
    });
    m.def("chi_square_sf", &stats::chi_square_sf, py::arg("x"), py::arg("df"));
    m.def("sidak_alpha", &stats::sidak_alpha, py::arg("alpha"), py::arg("m"));
    m.def("cochran_q", [](const std::vector<std::vector<bool>>& columns) {
        std::vector<std::string> names;
        for (std::size_t i = 0; i < columns.size(); ++i) names.push_back("m" + std::to_string(i));
        const auto r = stats::cochran_q(stats::CorrectnessMatrix(names, columns));
        return std::make_pair(r.statistic, r.p_value);
    }, "Q statistic and p-value over per-model correctness columns.");
    m.def("mcnemar", [](const std::vector<bool>& a, const std::vector<bool>& b) {
        const auto r = stats::mcnemar(a, b);
        return json{{"statistic", r.statistic}, {"p_value", r.p_value}, {"b", r.b}, {"c", r.c}, {"exact", r.exact}}
            .dump();
    });
    m.def("pairwise_significance",
          [](const std::vector<std::string>& names, const std::vector<std::vector<bool>>& columns, double alpha) {
              return stats::to_json(stats::pairwise_significance(stats::CorrectnessMatrix(names, columns), alpha))
                  .dump();
          },
          py::arg("names"), py::arg("columns"), py::arg("alpha") = 0.05);

    // ---- models ----

    py::class_<pipeline::TrainedModel>(m, "Model")
        .def_property_readonly("kind", [](const pipeline::TrainedModel& t) { return pipeline::to_string(t.kind()); })
        .def_property_readonly("vocabulary",
                               [](const pipeline::TrainedModel& t) { return t.vocabulary().names(); })
        .def("predict",
             [](const pipeline::TrainedModel& t, const SyscallTrace& trace) {
                 const auto p = t.predict(trace);
                 return std::make_pair(std::string(to_string(p.label)), p.score);
             },
             "Label and malware score of one trace.")
        .def("histogram", &pipeline::TrainedModel::histogram)
        .def("histogram_score",
             [](const pipeline::TrainedModel& t, const std::vector<double>& h) { return t.histogram_score(h); })
        .def("save",
             [](const pipeline::TrainedModel& t, const std::string& path, const std::string& config_hash,
                std::uint64_t seed) { pipeline::save_model(path, t, {config_hash, seed, std::nullopt}); },
             py::arg("path"), py::arg("config_hash") = "", py::arg("seed") = 0);

    m.def("load_model", [](const std::string& path) { return pipeline::load_model(path); });
    m.def("train_model",
          [](const std::string& kind, const std::vector<SyscallTrace>& traces, const std::string& config,
             std::uint64_t seed) {
              const auto cfg = config_from(config);
              const auto k = pipeline::model_kind_from_string(kind);
              py::gil_scoped_release release;
              return pipeline::train_model(k, traces, cfg.params, cfg.encoding, seed);
          },
          py::arg("kind"), py::arg("traces"), py::arg("config") = "", py::arg("seed") = 0);
    m.def("evaluate",
          [](const std::vector<SyscallTrace>& traces, const std::string& config) {
              const auto cfg = config_from(config);
              eval::EvaluationReport report;
              {
                  py::gil_scoped_release release;
                  report.entries =
                      pipeline::evaluate_models(traces, cfg.models, cfg.split, cfg.params, cfg.encoding, cfg.seed);
              }
              report.config_hash = pipeline::config_hash(cfg);
              return json(report).dump();
          },
          py::arg("traces"), py::arg("config") = "",
          "Evaluation report for the models and split named in a pipeline configuration.");
    m.def("explain_model",
          [](const pipeline::TrainedModel& model, const std::vector<SyscallTrace>& train,
             const std::vector<SyscallTrace>& test, const std::string& config, std::uint64_t seed) {
              const auto cfg = config_from(config);
              return pipeline::to_json(pipeline::explain_model(model, train, test, cfg.explain, seed)).dump();
          },
          py::arg("model"), py::arg("train"), py::arg("test"), py::arg("config") = "", py::arg("seed") = 0);

    // ---- explanation primitives ----

    m.def("lime_explain",
          [](const std::function<double(std::vector<double>)>& model, const std::vector<double>& sample,
             const std::vector<double>& background, std::size_t perturbations, std::uint64_t seed) {
              explain::LimeConfig cfg;
              cfg.perturbations = perturbations;
              cfg.seed = seed;
              const auto e = explain::lime_explain(
                  [&](std::span<const double> x) { return model(std::vector<double>(x.begin(), x.end())); }, sample,
                  background, cfg);
              json j{{"slopes", e.slopes}, {"weights", e.weights}, {"intercept", e.intercept}, {"score", e.score}};
              j["fidelity"] = e.fidelity ? json(*e.fidelity) : json(nullptr);
              return j.dump();
          },
          py::arg("model"), py::arg("sample"), py::arg("background"), py::arg("perturbations") = 1000,
          py::arg("seed") = 0);

    // ---- liquid state machine ----

    m.def("liquid_state",
          [](const std::vector<std::pair<std::int64_t, std::vector<std::uint32_t>>>& rows, std::size_t channels,
             std::uint64_t seed) {
              MultiHotMatrix input;
              input.width = channels;
              for (const auto& [step, counts] : rows) {
                  if (counts.size() != channels) throw DimensionError("every row needs one count per channel");
                  input.time_steps.push_back(step);
                  input.counts.insert(input.counts.end(), counts.begin(), counts.end());
              }
              const auto topo = reservoir::build_liquid({}, channels, seed);
              return reservoir::run_liquid(topo, {}, input).features;
          },
          py::arg("rows"), py::arg("channels"), py::arg("seed") = 0,
          "Windowed spike counts of the default liquid driven by (time_step, counts) rows.");
}
