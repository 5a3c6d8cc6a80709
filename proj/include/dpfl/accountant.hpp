#pragma once

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace dpfl {

enum class AccountantMode {
  // σ ≥ c2·q·sqrt(T·ln(1/δ))/ε inverted for ε; an order-of-magnitude figure.
  kClosedForm,
  // Rényi-divergence composition of the Poisson-subsampled Gaussian,
  // optimized over a fixed grid of orders and converted to (ε, δ).
  kNumerical,
};

std::string to_string(AccountantMode mode);
AccountantMode parse_accountant_mode(const std::string& text);

struct AccountantConfig {
  double delta = 1e-5;
  double c1 = 1.0;
  double c2 = 1.0;
  AccountantMode mode = AccountantMode::kNumerical;

  void validate() const;
};

struct StepRecord {
  double q = 0.0;
  double sigma = 0.0;
  friend bool operator==(const StepRecord&, const StepRecord&) = default;
};

struct EpsilonResult {
  double epsilon = 0.0;
  AccountantMode mode = AccountantMode::kNumerical;
  // Closed form only: whether ε < c1·q²·T held for the reported ε.
  bool closed_form_valid = true;
  // Numerical only: the Rényi order achieving the minimum (0 when unused).
  double best_order = 0.0;
};

inline constexpr double kInfiniteEpsilon = std::numeric_limits<double>::infinity();

// Append-only list of (q, σ) compositions. ε is cached per (δ, mode) and
// recomputed lazily after appends.
class PrivacyLedger {
 public:
  void record(double q, double sigma);
  std::size_t size() const { return records_.size(); }
  std::span<const StepRecord> records() const { return records_; }

  EpsilonResult epsilon(const AccountantConfig& config) const;

 private:
  std::vector<StepRecord> records_;
  mutable bool cache_valid_ = false;
  mutable AccountantConfig cache_config_;
  mutable EpsilonResult cache_;
};

// Orders used by the numerical accountant, ascending from 1.5. The usual
// 1.5..256 range is extended to 65536 so that very large σ reaches ε ≈ 0.
std::span<const double> rdp_orders();

// Rényi DP of one Poisson-subsampled Gaussian step (sensitivity 1, noise
// multiplier σ) at order `order` > 1.
double rdp_subsampled_gaussian(double q, double sigma, double order);

EpsilonResult epsilon_spent(const PrivacyLedger& ledger, const AccountantConfig& config);
// Uniform shortcut: `steps` compositions at (q, σ).
EpsilonResult epsilon_spent(double q, double sigma, std::size_t steps,
                            const AccountantConfig& config);

// Smallest σ with epsilon_spent(q, σ, steps) <= target. Exact in closed form;
// bisection to 1e-7 in numerical mode.
double calibrate_sigma(double target_epsilon, double q, std::size_t steps,
                       const AccountantConfig& config);

// 1/N, the conventional δ for a dataset of N records.
double default_delta(std::size_t dataset_size);

}  // namespace dpfl
