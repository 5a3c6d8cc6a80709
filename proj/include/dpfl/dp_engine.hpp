#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dpfl/accountant.hpp"
#include "dpfl/lora.hpp"
#include "dpfl/rng.hpp"
#include "dpfl/transformer.hpp"

namespace dpfl {

struct PrivacyParams {
  double clip_norm = 1.0;          // C
  double noise_scale = 1.0;        // σ, noise multiplier
  double lot_size = 60.0;          // expected L; q = L / N
  std::size_t microbatch_size = 8; // B, physical chunk inside a lot
  std::size_t steps = 300;         // T
  double learning_rate = 0.5;      // η, constant
  double delta = 1e-5;
  std::size_t dataset_size = 0;    // N

  double sampling_rate() const { return lot_size / static_cast<double>(dataset_size); }
  void validate() const;
};

// θ_t (flattened adapters), the step counter, and the two private streams.
struct TrainState {
  std::vector<double> theta;
  std::size_t step = 0;
  RngStream sampling;
  RngStream noise;
  PrivacyLedger ledger;
  double q = 0.0;
  double sigma = 0.0;
};

struct GradientResult {
  std::vector<double> grad;
  double loss = 0.0;
};

// Gradient of one example's loss with respect to the adapter parameters,
// flattened in AdapterSet order.
template <typename T>
GradientResult per_sample_gradient(const ModelWeights<T>& weights,
                                   const AdapterSet<T>& adapters,
                                   const TokenizedExample& example);

// g / max(1, ‖g‖₂ / C).
std::vector<double> clip_gradient(std::span<const double> g, double clip_norm);

// (Σ clipped + N(0, σ²C²I)) / L_actual with one noise draw per coordinate.
std::vector<double> noisy_aggregate(std::span<const std::vector<double>> clipped,
                                    double clip_norm, double sigma, std::size_t lot_actual,
                                    RngStream& rng);

// Poisson sampling: each of the `dataset_size` indices independently with
// probability q.
std::vector<std::size_t> sample_lot(std::size_t dataset_size, double q, RngStream& rng);

// θ ← θ − η·g̃, advance the counter, record one (q, σ) composition.
void step(TrainState& state, std::span<const double> noisy_grad, double learning_rate);

struct StepLog {
  std::size_t step = 0;
  std::size_t lot_size = 0;
  double median_grad_norm = 0.0;  // pre-clip; NaN for an empty lot
  double loss = 0.0;              // mean lot loss before the update; NaN when empty
  double epsilon = 0.0;
};

// Details of one finished step, handed to TrainOptions::on_step.
struct StepInfo {
  const StepLog* log = nullptr;
  std::span<const std::size_t> lot;
  std::span<const double> pre_clip_norms;
  std::span<const double> clipped_norms;
  std::span<const double> theta;
};

struct TrainOptions {
  AccountantConfig accountant;
  std::optional<double> epsilon_ceiling;
  std::size_t workers = 1;
  std::function<void(const StepInfo&)> on_step;
};

struct TrainResult {
  TrainState state;
  std::vector<StepLog> log;
  double epsilon = 0.0;
  std::size_t samples_clipped = 0;
  double max_clipped_norm = 0.0;
};

// Runs `params.steps` DP-SGD steps on the adapters, which hold θ_T on
// return. The base weights are only read. Throws BudgetExceededError before
// a step that would push ε past the ceiling.
template <typename T>
TrainResult train(const ModelWeights<T>& weights, AdapterSet<T>& adapters,
                  const std::vector<TokenizedExample>& dataset, const PrivacyParams& params,
                  std::uint64_t seed, const TrainOptions& options = {});

std::string step_log_csv(const std::vector<StepLog>& log);

}  // namespace dpfl
