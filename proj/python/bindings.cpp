// Python bindings: accountant, clipping and noise, data helpers, metrics,
// and train / load / evaluate through the run configuration.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <map>
#include <string>
#include <vector>

#include "dpfl/accountant.hpp"
#include "dpfl/data.hpp"
#include "dpfl/dp_engine.hpp"
#include "dpfl/errors.hpp"
#include "dpfl/experiment.hpp"
#include "dpfl/metrics.hpp"

namespace py = pybind11;
using namespace dpfl;

namespace {

using RecordDict = std::map<std::string, std::string>;

SentimentRecord to_record(const RecordDict& d) {
  auto get = [&](const char* key) {
    auto it = d.find(key);
    if (it == d.end()) throw InputError(std::string("record is missing '") + key + "'");
    return it->second;
  };
  auto label = parse_label(get("output"));
  if (!label) throw InputError("unknown label '" + get("output") + "'");
  return {get("instruction"), get("input"), *label};
}

RecordDict from_record(const SentimentRecord& r) {
  return {{"instruction", r.instruction}, {"input", r.input}, {"output", std::string(label_name(r.output))}};
}

std::vector<SentimentRecord> to_records(const std::vector<RecordDict>& ds) {
  std::vector<SentimentRecord> out;
  out.reserve(ds.size());
  for (const auto& d : ds) out.push_back(to_record(d));
  return out;
}

std::vector<RecordDict> from_records(const std::vector<SentimentRecord>& rs) {
  std::vector<RecordDict> out;
  out.reserve(rs.size());
  for (const auto& r : rs) out.push_back(from_record(r));
  return out;
}

RunConfig make_config(const std::map<std::string, std::string>& settings) {
  RunConfig c;
  for (const auto& [k, v] : settings) c.set(k, v);
  return c;
}

py::dict report_dict(const MetricsReport& r) {
  py::dict d;
  d["accuracy"] = r.accuracy;
  d["f1_micro"] = r.f1_micro;
  d["f1_macro"] = r.f1_macro;
  d["f1_weighted"] = r.f1_weighted;
  d["n_examples"] = r.n_examples;
  d["n_invalid"] = r.n_invalid;
  return d;
}

struct PyModel {
  ModelWeights<float> weights;
  AdapterSet<float> adapters;
  std::optional<double> epsilon;
  std::optional<double> sigma;

  const AdapterSet<float>* adapter_ptr() const { return adapters.empty() ? nullptr : &adapters; }
};

AccountantConfig accountant_config(double delta, const std::string& mode) {
  AccountantConfig c;
  c.delta = delta;
  c.mode = parse_accountant_mode(mode);
  return c;
}

}  // namespace

PYBIND11_MODULE(_dpfl, m) {
  m.doc() = "Differentially private LoRA fine-tuning of a small decoder";

  static py::exception<Error> error(m, "Error");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      error(e.what());
    }
  });

  m.def("epsilon_spent",
        [](double q, double sigma, std::size_t steps, double delta, const std::string& mode) {
          return epsilon_spent(q, sigma, steps, accountant_config(delta, mode)).epsilon;
        },
        py::arg("q"), py::arg("sigma"), py::arg("steps"), py::arg("delta"),
        py::arg("mode") = "numerical");
  m.def("calibrate_sigma",
        [](double epsilon, double q, std::size_t steps, double delta, const std::string& mode) {
          return calibrate_sigma(epsilon, q, steps, accountant_config(delta, mode));
        },
        py::arg("epsilon"), py::arg("q"), py::arg("steps"), py::arg("delta"),
        py::arg("mode") = "numerical");
  m.def("rdp_subsampled_gaussian", &rdp_subsampled_gaussian, py::arg("q"), py::arg("sigma"),
        py::arg("order"));
  m.def("default_delta", &default_delta, py::arg("dataset_size"));

  m.def("clip_gradient",
        [](const std::vector<double>& g, double clip) { return clip_gradient(g, clip); },
        py::arg("grad"), py::arg("clip_norm"));
  m.def("noisy_aggregate",
        [](const std::vector<std::vector<double>>& clipped, double clip, double sigma,
           std::size_t lot_size, std::uint64_t seed) {
          RngStream rng(seed, static_cast<std::uint64_t>(Stream::kNoise));
          return noisy_aggregate(clipped, clip, sigma, lot_size, rng);
        },
        py::arg("clipped"), py::arg("clip_norm"), py::arg("sigma"), py::arg("lot_size"),
        py::arg("seed") = 0);

  m.def("synth_dataset",
        [](std::size_t n_per_class, std::uint64_t seed) {
          return from_records(synth_dataset(n_per_class, seed));
        },
        py::arg("n_per_class"), py::arg("seed") = 1);
  m.def("parse_jsonl", [](const std::string& text) { return from_records(parse_jsonl(text)); },
        py::arg("text"));
  m.def("render_prompt",
        [](const RecordDict& d) {
          auto r = render_prompt(to_record(d));
          return std::make_pair(r.prompt, r.answer);
        },
        py::arg("record"));
  m.def("tokenize_example",
        [](const std::string& prompt, const std::string& answer, std::size_t max_seq_len) {
          auto ex = tokenize_example(prompt, answer, max_seq_len);
          return std::make_pair(ex.token_ids, std::vector<int>(ex.loss_mask.begin(), ex.loss_mask.end()));
        },
        py::arg("prompt"), py::arg("answer"), py::arg("max_seq_len"));

  m.def("extract_label",
        [](const std::string& text) { return std::string(prediction_name(extract_label(text))); },
        py::arg("text"));
  m.def("scores",
        [](const std::vector<std::string>& golds, const std::vector<std::string>& preds) {
          std::vector<Label> g;
          std::vector<Prediction> p;
          for (const auto& s : golds) {
            auto l = parse_label(s);
            if (!l) throw InputError("unknown gold label '" + s + "'");
            g.push_back(*l);
          }
          for (const auto& s : preds) {
            auto l = parse_label(s);
            p.push_back(l ? to_prediction(*l) : Prediction::kInvalid);
          }
          return report_dict(scores(confusion(g, p)));
        },
        py::arg("golds"), py::arg("preds"));

  py::class_<PyModel>(m, "Model")
      .def_property_readonly("epsilon", [](const PyModel& pm) { return pm.epsilon; })
      .def_property_readonly("sigma", [](const PyModel& pm) { return pm.sigma; })
      .def_property_readonly("adapter_parameters",
                             [](const PyModel& pm) { return pm.adapters.parameter_count(); })
      .def("generate",
           [](const PyModel& pm, const std::string& prompt, std::size_t max_new) {
             const auto ids = prompt_ids(prompt, pm.weights.config.max_seq_len,
                                         std::max(max_new, kAnswerReserve));
             // Generated bytes need not be valid UTF-8.
             const auto text = Tokenizer::decode(greedy_decode(pm.weights, pm.adapter_ptr(), ids, max_new));
             return py::reinterpret_steal<py::str>(
                 PyUnicode_DecodeUTF8(text.data(), static_cast<Py_ssize_t>(text.size()), "replace"));
           },
           py::arg("prompt"), py::arg("max_new") = 8)
      .def("evaluate",
           [](const PyModel& pm, const std::vector<RecordDict>& records) {
             const auto recs = to_records(records);
             MetricsReport report;
             {
               py::gil_scoped_release release;
               report = evaluate(pm.weights, pm.adapter_ptr(), recs).report;
             }
             return report_dict(report);
           },
           py::arg("records"))
      .def("save",
           [](const PyModel& pm, const std::string& path) {
             if (!pm.adapters.empty()) {
               throw UsageError("only base models can be saved from Python; use train(out=...)");
             }
             save_checkpoint(path, make_base_checkpoint(pm.weights));
           },
           py::arg("path"));

  m.def("load_model",
        [](const std::string& path) {
          auto lm = load_model(path);
          return PyModel{std::move(lm.weights), std::move(lm.adapters), lm.epsilon, lm.sigma};
        },
        py::arg("path"));

  m.def("build_base",
        [](const std::map<std::string, std::string>& settings) {
          const auto c = make_config(settings);
          py::gil_scoped_release release;
          return PyModel{build_base(c), {}, std::nullopt, std::nullopt};
        },
        py::arg("settings") = std::map<std::string, std::string>{});

  m.def("train",
        [](const PyModel& base, const std::vector<RecordDict>& records,
           const std::map<std::string, std::string>& settings, const std::string& out) {
          const auto c = make_config(settings);
          const auto recs = to_records(records);
          RunResult r;
          {
            py::gil_scoped_release release;
            r = run_training(c, base.weights, recs);
          }
          if (!out.empty()) save_checkpoint(out, make_checkpoint(c, base.weights, r, recs.size()));
          PyModel trained{base.weights, std::move(r.adapters), r.train.epsilon, r.sigma};
          py::dict info;
          info["epsilon"] = r.train.epsilon;
          info["sigma"] = r.sigma;
          info["delta"] = r.delta;
          info["q"] = r.q;
          info["steps"] = r.train.state.step;
          info["step_log_csv"] = step_log_csv(r.train.log);
          return std::make_pair(std::move(trained), info);
        },
        py::arg("base"), py::arg("records"), py::arg("settings"), py::arg("out") = "");
}
