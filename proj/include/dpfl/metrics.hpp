#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dpfl/data.hpp"

namespace dpfl {

// A decoded prediction: one of the three labels or kInvalid when the
// generated text names none of them.
enum class Prediction : std::uint8_t { kNegative = 0, kNeutral = 1, kPositive = 2, kInvalid = 3 };
inline constexpr std::size_t kPredictionCount = 4;

Prediction to_prediction(Label label);
std::string_view prediction_name(Prediction pred);

// Lowercases and returns the first of negative, neutral, positive (searched
// in that order) occurring as a substring.
Prediction extract_label(std::string_view generated_text);

class ConfusionMatrix {
 public:
  void add(Label gold, Prediction pred);
  std::size_t count(Prediction pred, Label gold) const {
    return counts_[static_cast<std::size_t>(pred)][static_cast<std::size_t>(gold)];
  }
  std::size_t total() const { return total_; }
  std::size_t invalid() const;
  std::size_t gold_support(Label gold) const;
  std::size_t predicted(Prediction pred) const;

 private:
  std::array<std::array<std::size_t, kLabelCount>, kPredictionCount> counts_{};
  std::size_t total_ = 0;
};

ConfusionMatrix confusion(std::span<const Label> golds, std::span<const Prediction> preds);

struct LabelScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;
};

struct MetricsReport {
  double accuracy = 0.0;
  double f1_micro = 0.0;
  double f1_macro = 0.0;
  double f1_weighted = 0.0;
  std::array<LabelScores, kLabelCount> per_label{};
  std::size_t n_examples = 0;
  std::size_t n_invalid = 0;
};

MetricsReport scores(const ConfusionMatrix& cm);

struct DecoderParams {
  std::size_t max_new = 8;
};

struct Evaluation {
  MetricsReport report;
  std::vector<Label> golds;
  std::vector<Prediction> preds;
  std::vector<std::string> generations;
};

// Greedy-decodes every record's prompt and scores the extracted labels.
// Examples that fail to decode count as invalid predictions.
template <typename T>
Evaluation evaluate(const ModelWeights<T>& weights, const AdapterSet<T>* adapters,
                    const std::vector<SentimentRecord>& records, DecoderParams params = {});

// One fine-tuned model per dataset; a null `weights` marks a missing model.
template <typename T>
struct FineTunedModel {
  std::string name;
  const ModelWeights<T>* weights = nullptr;
  const AdapterSet<T>* adapters = nullptr;
};

struct NamedDataset {
  std::string name;
  std::vector<SentimentRecord> records;
};

// Weighted F1 of model i (fine-tuned on dataset i) on every other dataset j.
// The diagonal is left empty; `base` holds the adapter-free model of row i
// evaluated on dataset i. Missing models or failed cells stay empty.
struct ZeroShotTable {
  std::vector<std::string> datasets;
  std::vector<std::vector<std::optional<double>>> cells;
  std::vector<std::optional<double>> base;
};

template <typename T>
ZeroShotTable zero_shot_matrix(const std::vector<FineTunedModel<T>>& models,
                               const std::vector<NamedDataset>& datasets,
                               DecoderParams params = {});

std::string report_to_json(const MetricsReport& report, const std::string& model,
                           const std::string& dataset);
std::string report_csv_header();
std::string report_to_csv_row(const MetricsReport& report, const std::string& model,
                              const std::string& dataset);
std::string zero_shot_to_csv(const ZeroShotTable& table);

}  // namespace dpfl
