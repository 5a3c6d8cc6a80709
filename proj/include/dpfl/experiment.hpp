#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dpfl/accountant.hpp"
#include "dpfl/checkpoint.hpp"
#include "dpfl/data.hpp"
#include "dpfl/dp_engine.hpp"
#include "dpfl/lora.hpp"
#include "dpfl/metrics.hpp"
#include "dpfl/model.hpp"

namespace dpfl {

// Everything a training run needs. Defaults are the synthetic-corpus recipe:
// a clip bound below typical per-sample norms so clipping binds, and a large
// constant step size to offset the small clipped magnitudes.
struct RunConfig {
  ModelConfig model;
  LoraConfig lora;

  std::optional<double> epsilon;
  std::optional<double> sigma;
  double clip = 0.1;
  double lot_size = 120.0;
  std::size_t microbatch = 8;
  std::size_t steps = 300;
  double learning_rate = 2.0;
  std::optional<double> delta;  // unset means 1/N
  AccountantMode accountant = AccountantMode::kNumerical;
  std::optional<double> epsilon_ceiling;
  std::uint64_t seed = 5;

  std::string data;
  std::string test_data;
  std::string out = ".";
  // Base checkpoint to start from; when empty the base is built per
  // base_seed / pretrain_steps / pretrain_records.
  std::string base;
  std::uint64_t base_seed = 7;
  std::size_t pretrain_steps = 800;
  std::size_t pretrain_records = 2000;
  bool merged = false;

  // Sets one key from its text form. Throws ConfigError naming the key for an
  // unknown key or an unparsable value.
  void set(const std::string& key, const std::string& value);

  // Range checks. With `need_privacy`, exactly one of epsilon / sigma must be
  // set.
  void validate(bool need_privacy = true) const;
  // IoError naming the first configured path that cannot be opened.
  void check_paths() const;

  double resolved_delta(std::size_t dataset_size) const;
  AccountantConfig accountant_config(std::size_t dataset_size) const;

  std::string to_json() const;
};

// Flat key=value text, '#' starts a comment, blank lines ignored.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::string& path, RunConfig base = {});

// Records of `test` whose input text does not occur in `train`.
std::vector<SentimentRecord> drop_overlap(const std::vector<SentimentRecord>& test,
                                          const std::vector<SentimentRecord>& train);

std::vector<TokenizedExample> tokenize_records(const std::vector<SentimentRecord>& records,
                                               std::size_t max_seq_len);

using ProgressFn = std::function<void(const std::string&)>;

// Base decoder for a run: loaded from `config.base` when set, otherwise
// initialized from base_seed and, if pretrain_steps > 0, pretrained on the
// public corpora (random-label answer format plus the price-direction task).
ModelWeights<float> build_base(const RunConfig& config, const ProgressFn& progress = {});

struct RunResult {
  AdapterSet<float> adapters;
  TrainResult train;
  double sigma = 0.0;
  double delta = 0.0;
  double q = 0.0;
};

// Fresh adapters from config.seed, σ from config.sigma or calibrated to
// config.epsilon, then DP training on `records`.
RunResult run_training(const RunConfig& config, const ModelWeights<float>& base,
                       const std::vector<SentimentRecord>& records,
                       const TrainOptions& extra = {});

// Deterministic metadata JSON: config echo, model and adapter shape, privacy
// outcome. Holds no timestamps so reruns produce identical files.
std::string run_metadata(const RunConfig& config, const RunResult& result,
                         std::size_t dataset_size);
Checkpoint make_checkpoint(const RunConfig& config, const ModelWeights<float>& base,
                           const RunResult& result, std::size_t dataset_size);

struct LoadedModel {
  ModelWeights<float> weights;
  AdapterSet<float> adapters;  // empty for a base-only checkpoint
  std::optional<double> epsilon;
  std::optional<double> sigma;
};

// Checkpoints from make_checkpoint or a base-only checkpoint; shapes come
// from the metadata.
LoadedModel load_model(const std::string& path);
Checkpoint make_base_checkpoint(const ModelWeights<float>& base);

struct SweepRow {
  double epsilon = 0.0;
  std::optional<double> sigma;
  std::optional<MetricsReport> report;
  std::string error;
};

// One run per ε from the same base, adapter initialization and seed; only ε
// changes. A failing ε leaves an empty row and the sweep continues.
std::vector<SweepRow> run_sweep(const RunConfig& config, const ModelWeights<float>& base,
                                const std::vector<SentimentRecord>& train,
                                const std::vector<SentimentRecord>& test,
                                const std::vector<double>& epsilons,
                                const ProgressFn& progress = {});
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

}  // namespace dpfl
