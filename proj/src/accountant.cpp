#include "dpfl/accountant.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "dpfl/errors.hpp"

namespace dpfl {

std::string to_string(AccountantMode mode) {
  return mode == AccountantMode::kClosedForm ? "closed_form" : "numerical";
}

AccountantMode parse_accountant_mode(const std::string& text) {
  if (text == "closed_form" || text == "theorem1_closed_form") return AccountantMode::kClosedForm;
  if (text == "numerical") return AccountantMode::kNumerical;
  throw ConfigError("unknown accountant mode '" + text + "'");
}

void AccountantConfig::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) {
    throw ParameterError("delta must lie in (0, 1), got " + std::to_string(delta));
  }
  if (!(c1 > 0.0) || !(c2 > 0.0)) throw ParameterError("c1 and c2 must be positive");
}

namespace {

void check_step(double q, double sigma) {
  if (!(q > 0.0 && q <= 1.0)) {
    throw ParameterError("sampling rate q must lie in (0, 1], got " + std::to_string(q));
  }
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("noise multiplier must be finite and >= 0, got " +
                         std::to_string(sigma));
  }
}

double log_add(double a, double b) {
  if (a == -INFINITY) return b;
  if (b == -INFINITY) return a;
  double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

// log(exp(a) - exp(b)), requires a >= b.
double log_sub(double a, double b) {
  if (b == -INFINITY) return a;
  if (a <= b) return -INFINITY;
  return a + std::log1p(-std::exp(b - a));
}

double log_erfc(double x) {
  if (x < 20.0) return std::log(std::erfc(x));
  // Asymptotic expansion of erfc for large arguments.
  const double x2 = x * x;
  double series = 1.0 - 1.0 / (2.0 * x2) + 3.0 / (4.0 * x2 * x2) - 15.0 / (8.0 * x2 * x2 * x2);
  return -x2 - std::log(x) - 0.5 * std::log(M_PI) + std::log(series);
}

double log_a_integer(double q, double sigma, long alpha) {
  double log_a = -INFINITY;
  const double lq = std::log(q), l1q = std::log1p(-q);
  double log_binom = 0.0;  // log C(alpha, i), updated incrementally
  for (long i = 0; i <= alpha; ++i) {
    const double di = static_cast<double>(i);
    double log_coef = log_binom + di * lq + static_cast<double>(alpha - i) * l1q;
    log_a = log_add(log_a, log_coef + (di * di - di) / (2.0 * sigma * sigma));
    log_binom += std::log(static_cast<double>(alpha - i)) - std::log(di + 1.0);
  }
  return log_a;
}

double log_a_fractional(double q, double sigma, double alpha) {
  double log_a0 = -INFINITY, log_a1 = -INFINITY;
  const double z0 = sigma * sigma * std::log(1.0 / q - 1.0) + 0.5;
  const double lq = std::log(q), l1q = std::log1p(-q);
  // Generalized binomial coefficient tracked as (log|c|, sign).
  double log_abs_coef = 0.0;
  int sign = 1;
  for (long i = 0;; ++i) {
    const double di = static_cast<double>(i);
    const double j = alpha - di;
    double log_t0 = log_abs_coef + di * lq + j * l1q;
    double log_t1 = log_abs_coef + j * lq + di * l1q;
    double log_e0 = std::log(0.5) + log_erfc((di - z0) / (std::sqrt(2.0) * sigma));
    double log_e1 = std::log(0.5) + log_erfc((z0 - j) / (std::sqrt(2.0) * sigma));
    double log_s0 = log_t0 + (di * di - di) / (2.0 * sigma * sigma) + log_e0;
    double log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
    if (sign > 0) {
      log_a0 = log_add(log_a0, log_s0);
      log_a1 = log_add(log_a1, log_s1);
    } else {
      log_a0 = log_sub(log_a0, log_s0);
      log_a1 = log_sub(log_a1, log_s1);
    }
    if (std::max(log_s0, log_s1) < -30.0 || i > 100000) break;
    // c(i+1) = c(i)·(alpha − i)/(i + 1)
    double factor = (alpha - di) / (di + 1.0);
    if (factor == 0.0) break;
    if (factor < 0.0) sign = -sign;
    log_abs_coef += std::log(std::fabs(factor));
  }
  return log_add(log_a0, log_a1);
}

constexpr double kOrders[] = {
    1.5,   1.75,  2.0,   2.25,  2.5,   3.0,   3.5,   4.0,   4.5,    5.0,    6.0,
    7.0,   8.0,   10.0,  12.0,  14.0,  16.0,  20.0,  24.0,  28.0,   32.0,   40.0,
    48.0,  56.0,  64.0,  80.0,  96.0,  112.0, 128.0, 160.0, 192.0,  224.0,  256.0,
    384.0, 512.0, 768.0, 1024.0, 2048.0, 4096.0, 8192.0, 16384.0, 32768.0, 65536.0};

EpsilonResult numerical_epsilon(std::span<const StepRecord> records,
                                const AccountantConfig& config) {
  std::map<std::pair<double, double>, std::size_t> counts;
  for (const auto& r : records) ++counts[{r.q, r.sigma}];
  EpsilonResult best;
  best.mode = AccountantMode::kNumerical;
  best.epsilon = kInfiniteEpsilon;
  for (double order : kOrders) {
    double rdp = 0.0;
    for (const auto& [key, n] : counts) {
      rdp += static_cast<double>(n) * rdp_subsampled_gaussian(key.first, key.second, order);
    }
    if (!std::isfinite(rdp)) continue;
    double eps = rdp + std::log((order - 1.0) / order) -
                 (std::log(config.delta) + std::log(order)) / (order - 1.0);
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.best_order = order;
    }
  }
  best.epsilon = std::max(best.epsilon, 0.0);
  return best;
}

EpsilonResult closed_form_epsilon(std::span<const StepRecord> records,
                                  const AccountantConfig& config) {
  EpsilonResult res;
  res.mode = AccountantMode::kClosedForm;
  double ratio_sq = 0.0, q_sq = 0.0;
  for (const auto& r : records) {
    if (r.sigma == 0.0) {
      res.epsilon = kInfiniteEpsilon;
      res.closed_form_valid = false;
      return res;
    }
    ratio_sq += (r.q * r.q) / (r.sigma * r.sigma);
    q_sq += r.q * r.q;
  }
  // Uniform steps reduce this to c2·q·sqrt(T·ln(1/δ))/σ.
  res.epsilon = config.c2 * std::sqrt(ratio_sq * std::log(1.0 / config.delta));
  res.closed_form_valid = res.epsilon < config.c1 * q_sq;
  return res;
}

EpsilonResult compute_epsilon(std::span<const StepRecord> records,
                              const AccountantConfig& config) {
  config.validate();
  EpsilonResult res;
  res.mode = config.mode;
  if (records.empty()) return res;
  for (const auto& r : records) check_step(r.q, r.sigma);
  return config.mode == AccountantMode::kClosedForm ? closed_form_epsilon(records, config)
                                                    : numerical_epsilon(records, config);
}

}  // namespace

std::span<const double> rdp_orders() { return kOrders; }

double rdp_subsampled_gaussian(double q, double sigma, double order) {
  check_step(q, sigma);
  if (!(order > 1.0)) throw ParameterError("Renyi order must exceed 1");
  if (sigma == 0.0) return INFINITY;
  if (q == 1.0) return order / (2.0 * sigma * sigma);
  double log_a = (order == std::floor(order))
                     ? log_a_integer(q, sigma, static_cast<long>(order))
                     : log_a_fractional(q, sigma, order);
  return std::max(log_a, 0.0) / (order - 1.0);
}

void PrivacyLedger::record(double q, double sigma) {
  check_step(q, sigma);
  records_.push_back({q, sigma});
  cache_valid_ = false;
}

EpsilonResult PrivacyLedger::epsilon(const AccountantConfig& config) const {
  if (cache_valid_ && cache_config_.delta == config.delta && cache_config_.c1 == config.c1 &&
      cache_config_.c2 == config.c2 && cache_config_.mode == config.mode) {
    return cache_;
  }
  cache_ = compute_epsilon(records_, config);
  cache_config_ = config;
  cache_valid_ = true;
  return cache_;
}

EpsilonResult epsilon_spent(const PrivacyLedger& ledger, const AccountantConfig& config) {
  return ledger.epsilon(config);
}

EpsilonResult epsilon_spent(double q, double sigma, std::size_t steps,
                            const AccountantConfig& config) {
  config.validate();
  check_step(q, sigma);
  if (steps == 0) {
    EpsilonResult r;
    r.mode = config.mode;
    return r;
  }
  std::vector<StepRecord> records(steps, StepRecord{q, sigma});
  if (config.mode == AccountantMode::kClosedForm) return closed_form_epsilon(records, config);
  // Uniform steps compose by multiplication; skip the per-record loop.
  EpsilonResult best;
  best.mode = AccountantMode::kNumerical;
  best.epsilon = kInfiniteEpsilon;
  for (double order : kOrders) {
    double rdp = static_cast<double>(steps) * rdp_subsampled_gaussian(q, sigma, order);
    if (!std::isfinite(rdp)) continue;
    double eps = rdp + std::log((order - 1.0) / order) -
                 (std::log(config.delta) + std::log(order)) / (order - 1.0);
    if (eps < best.epsilon) {
      best.epsilon = eps;
      best.best_order = order;
    }
  }
  best.epsilon = std::max(best.epsilon, 0.0);
  return best;
}

double calibrate_sigma(double target_epsilon, double q, std::size_t steps,
                       const AccountantConfig& config) {
  config.validate();
  if (!(target_epsilon > 0.0) || !std::isfinite(target_epsilon)) {
    throw ParameterError("target epsilon must be positive and finite");
  }
  check_step(q, 1.0);
  if (steps == 0) return 0.0;
  if (config.mode == AccountantMode::kClosedForm) {
    return config.c2 * q * std::sqrt(static_cast<double>(steps) * std::log(1.0 / config.delta)) /
           target_epsilon;
  }
  auto eps_at = [&](double sigma) { return epsilon_spent(q, sigma, steps, config).epsilon; };
  double hi = 1.0;
  while (eps_at(hi) > target_epsilon) {
    hi *= 2.0;
    if (hi > 1e8) throw ParameterError("target epsilon unreachable for any noise level");
  }
  double lo = 0.0;
  while (hi - lo > 1e-7 * std::max(1.0, hi)) {
    double mid = 0.5 * (lo + hi);
    if (eps_at(mid) > target_epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

double default_delta(std::size_t dataset_size) {
  if (dataset_size == 0) throw ParameterError("dataset size must be at least 1");
  return 1.0 / static_cast<double>(dataset_size);
}

}  // namespace dpfl
