#include "dpfl/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>

#include "json.hpp"

#include "dpfl/parallel.hpp"

namespace dpfl {

Prediction to_prediction(Label label) { return static_cast<Prediction>(label); }

std::string_view prediction_name(Prediction pred) {
  if (pred == Prediction::kInvalid) return "invalid";
  return label_name(static_cast<Label>(pred));
}

Prediction extract_label(std::string_view generated_text) {
  std::string lower(generated_text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (Label l : {Label::kNegative, Label::kNeutral, Label::kPositive}) {
    if (lower.find(label_name(l)) != std::string::npos) return to_prediction(l);
  }
  return Prediction::kInvalid;
}

void ConfusionMatrix::add(Label gold, Prediction pred) {
  ++counts_[static_cast<std::size_t>(pred)][static_cast<std::size_t>(gold)];
  ++total_;
}

std::size_t ConfusionMatrix::invalid() const { return predicted(Prediction::kInvalid); }

std::size_t ConfusionMatrix::gold_support(Label gold) const {
  std::size_t n = 0;
  for (const auto& row : counts_) n += row[static_cast<std::size_t>(gold)];
  return n;
}

std::size_t ConfusionMatrix::predicted(Prediction pred) const {
  std::size_t n = 0;
  for (std::size_t c : counts_[static_cast<std::size_t>(pred)]) n += c;
  return n;
}

ConfusionMatrix confusion(std::span<const Label> golds, std::span<const Prediction> preds) {
  if (golds.size() != preds.size()) {
    throw InputError("confusion: " + std::to_string(golds.size()) + " golds but " +
                     std::to_string(preds.size()) + " predictions");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < golds.size(); ++i) cm.add(golds[i], preds[i]);
  return cm;
}

namespace {

// F1 from counts: 2TP / (2TP + FP + FN), zero when TP is zero.
double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp == 0) return 0.0;
  return static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport scores(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw InputError("cannot score an empty confusion matrix");
  MetricsReport r;
  r.n_examples = cm.total();
  r.n_invalid = cm.invalid();
  std::size_t tp_all = 0, fp_all = 0, fn_all = 0;
  double macro = 0.0, weighted = 0.0;
  for (std::size_t k = 0; k < kLabelCount; ++k) {
    const Label l = static_cast<Label>(k);
    const std::size_t tp = cm.count(to_prediction(l), l);
    const std::size_t pred = cm.predicted(to_prediction(l));
    const std::size_t support = cm.gold_support(l);
    LabelScores& s = r.per_label[k];
    s.support = support;
    s.precision = ratio(tp, pred);
    s.recall = ratio(tp, support);
    s.f1 = f1_from_counts(tp, pred - tp, support - tp);
    tp_all += tp;
    fp_all += pred - tp;
    fn_all += support - tp;
    macro += s.f1;
    weighted += static_cast<double>(support) * s.f1;
  }
  r.accuracy = ratio(tp_all, cm.total());
  r.f1_micro = f1_from_counts(tp_all, fp_all, fn_all);
  r.f1_macro = macro / static_cast<double>(kLabelCount);
  r.f1_weighted = weighted / static_cast<double>(cm.total());
  return r;
}

template <typename T>
Evaluation evaluate(const ModelWeights<T>& weights, const AdapterSet<T>* adapters,
                    const std::vector<SentimentRecord>& records, DecoderParams params) {
  if (records.empty()) throw InputError("evaluate: empty dataset");
  Evaluation ev;
  ev.golds.resize(records.size());
  ev.preds.assign(records.size(), Prediction::kInvalid);
  ev.generations.resize(records.size());
  parallel_for(
      0, records.size(),
      [&](std::size_t i) {
        ev.golds[i] = records[i].output;
        try {
          const auto prompt = render_prompt(records[i]).prompt;
          const auto ids = prompt_ids(prompt, weights.config.max_seq_len,
                                     std::max(params.max_new, kAnswerReserve));
          ev.generations[i] = Tokenizer::decode(greedy_decode(weights, adapters, ids, params.max_new));
          ev.preds[i] = extract_label(ev.generations[i]);
        } catch (const Error&) {
          ev.preds[i] = Prediction::kInvalid;
        }
      },
      worker_count());
  ev.report = scores(confusion(ev.golds, ev.preds));
  return ev;
}

template <typename T>
ZeroShotTable zero_shot_matrix(const std::vector<FineTunedModel<T>>& models,
                               const std::vector<NamedDataset>& datasets,
                               DecoderParams params) {
  if (datasets.size() < 2) throw InputError("zero-shot matrix needs at least two datasets");
  if (models.size() != datasets.size()) {
    throw InputError("zero-shot matrix needs one fine-tuned model per dataset");
  }
  const std::size_t n = datasets.size();
  ZeroShotTable t;
  for (const auto& d : datasets) t.datasets.push_back(d.name);
  t.cells.assign(n, std::vector<std::optional<double>>(n));
  t.base.assign(n, std::nullopt);
  auto cell = [&](const ModelWeights<T>& w, const AdapterSet<T>* a,
                  const NamedDataset& d) -> std::optional<double> {
    try {
      return evaluate(w, a, d.records, params).report.f1_weighted;
    } catch (const Error&) {
      return std::nullopt;
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (!models[i].weights) continue;
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) t.cells[i][j] = cell(*models[i].weights, models[i].adapters, datasets[j]);
    }
    t.base[i] = cell(*models[i].weights, nullptr, datasets[i]);
  }
  return t;
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string report_to_json(const MetricsReport& report, const std::string& model,
                           const std::string& dataset) {
  nlohmann::ordered_json j;
  j["model"] = model;
  j["dataset"] = dataset;
  j["n_examples"] = report.n_examples;
  j["n_invalid"] = report.n_invalid;
  j["accuracy"] = report.accuracy;
  j["f1_micro"] = report.f1_micro;
  j["f1_macro"] = report.f1_macro;
  j["f1_weighted"] = report.f1_weighted;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < kLabelCount; ++k) {
    const auto& s = report.per_label[k];
    per[std::string(label_name(static_cast<Label>(k)))] = {
        {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}};
  }
  j["per_label"] = per;
  return j.dump(2) + "\n";
}

std::string report_csv_header() {
  return "model,dataset,n_examples,n_invalid,accuracy,f1_micro,f1_macro,f1_weighted\n";
}

std::string report_to_csv_row(const MetricsReport& report, const std::string& model,
                              const std::string& dataset) {
  return model + "," + dataset + "," + std::to_string(report.n_examples) + "," +
         std::to_string(report.n_invalid) + "," + fmt(report.accuracy) + "," +
         fmt(report.f1_micro) + "," + fmt(report.f1_macro) + "," + fmt(report.f1_weighted) +
         "\n";
}

std::string zero_shot_to_csv(const ZeroShotTable& table) {
  std::string out = "fine_tuned_on";
  for (const auto& d : table.datasets) out += "," + d;
  out += ",base\n";
  for (std::size_t i = 0; i < table.datasets.size(); ++i) {
    out += table.datasets[i];
    for (std::size_t j = 0; j < table.datasets.size(); ++j) {
      out += ",";
      if (i == j) {
        out += "-";
      } else if (table.cells[i][j]) {
        out += fmt(*table.cells[i][j]);
      }
    }
    out += ",";
    if (table.base[i]) out += fmt(*table.base[i]);
    out += "\n";
  }
  return out;
}

template Evaluation evaluate(const ModelWeights<float>&, const AdapterSet<float>*,
                             const std::vector<SentimentRecord>&, DecoderParams);
template Evaluation evaluate(const ModelWeights<double>&, const AdapterSet<double>*,
                             const std::vector<SentimentRecord>&, DecoderParams);
template ZeroShotTable zero_shot_matrix(const std::vector<FineTunedModel<float>>&,
                                        const std::vector<NamedDataset>&, DecoderParams);
template ZeroShotTable zero_shot_matrix(const std::vector<FineTunedModel<double>>&,
                                        const std::vector<NamedDataset>&, DecoderParams);

}  // namespace dpfl
