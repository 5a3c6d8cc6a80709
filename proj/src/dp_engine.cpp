#include "dpfl/dp_engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "dpfl/errors.hpp"
#include "dpfl/parallel.hpp"

namespace dpfl {

void PrivacyParams::validate() const {
  if (!(clip_norm > 0.0) || !std::isfinite(clip_norm)) {
    throw ParameterError("clip norm C must be positive");
  }
  if (!(noise_scale >= 0.0) || !std::isfinite(noise_scale)) {
    throw ParameterError("noise multiplier must be finite and >= 0");
  }
  if (dataset_size == 0) throw ParameterError("dataset size N must be at least 1");
  const double q = sampling_rate();
  if (!(q > 0.0 && q <= 1.0)) {
    throw ParameterError("sampling rate q = L/N must lie in (0, 1], got " + std::to_string(q));
  }
  if (microbatch_size == 0) throw ParameterError("microbatch size must be at least 1");
  if (steps == 0) throw ParameterError("steps T must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ParameterError("learning rate must be finite and >= 0");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw ParameterError("delta must lie in (0, 1)");
}

template <typename T>
GradientResult per_sample_gradient(const ModelWeights<T>& weights,
                                   const AdapterSet<T>& adapters,
                                   const TokenizedExample& example) {
  Tape<T> tape;
  auto loss = record_loss(tape, weights, &adapters, example);
  tape.backward(loss);
  GradientResult out;
  out.loss = static_cast<double>(tape.value(loss).item());
  out.grad.reserve(adapters.parameter_count());
  for (const auto& [name, t] : adapters.named()) {
    const std::vector<T>* g = tape.grad_of(*t);
    if (g) {
      out.grad.insert(out.grad.end(), g->begin(), g->end());
    } else {
      out.grad.insert(out.grad.end(), t->size(), 0.0);
    }
  }
  return out;
}

std::vector<double> clip_gradient(std::span<const double> g, double clip_norm) {
  if (!(clip_norm > 0.0)) throw ParameterError("clip norm C must be positive");
  const double norm = l2_norm(g);
  const double factor = std::max(1.0, norm / clip_norm);
  std::vector<double> out(g.begin(), g.end());
  if (factor > 1.0) {
    for (double& v : out) v /= factor;
  }
  return out;
}

namespace {

void add_noise_and_average(std::vector<double>& sum, double clip_norm, double sigma,
                           std::size_t lot_actual, RngStream& rng) {
  const double stddev = sigma * clip_norm;
  const double inv = 1.0 / static_cast<double>(lot_actual);
  for (double& v : sum) {
    if (stddev > 0.0) v += stddev * rng.normal();
    v *= inv;
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

}  // namespace

std::vector<double> noisy_aggregate(std::span<const std::vector<double>> clipped,
                                    double clip_norm, double sigma, std::size_t lot_actual,
                                    RngStream& rng) {
  if (lot_actual == 0) throw ParameterError("noisy_aggregate needs a non-empty lot");
  if (!(clip_norm > 0.0)) throw ParameterError("clip norm C must be positive");
  if (!(sigma >= 0.0)) throw ParameterError("noise multiplier must be >= 0");
  if (clipped.empty()) throw InputError("noisy_aggregate: no gradients given");
  const std::size_t n = clipped.front().size();
  std::vector<double> sum(n, 0.0);
  for (const auto& g : clipped) {
    if (g.size() != n) throw DimensionError("noisy_aggregate: gradient lengths differ");
    for (std::size_t i = 0; i < n; ++i) sum[i] += g[i];
  }
  add_noise_and_average(sum, clip_norm, sigma, lot_actual, rng);
  return sum;
}

std::vector<std::size_t> sample_lot(std::size_t dataset_size, double q, RngStream& rng) {
  if (!(q > 0.0 && q <= 1.0)) throw ParameterError("sampling rate q must lie in (0, 1]");
  std::vector<std::size_t> lot;
  for (std::size_t i = 0; i < dataset_size; ++i) {
    if (rng.bernoulli(q)) lot.push_back(i);
  }
  return lot;
}

void step(TrainState& state, std::span<const double> noisy_grad, double learning_rate) {
  if (noisy_grad.size() != state.theta.size()) {
    throw DimensionError("step: gradient has " + std::to_string(noisy_grad.size()) +
                         " entries, parameters " + std::to_string(state.theta.size()));
  }
  for (std::size_t i = 0; i < noisy_grad.size(); ++i) {
    state.theta[i] -= learning_rate * noisy_grad[i];
  }
  ++state.step;
  state.ledger.record(state.q, state.sigma);
}

template <typename T>
TrainResult train(const ModelWeights<T>& weights, AdapterSet<T>& adapters,
                  const std::vector<TokenizedExample>& dataset, const PrivacyParams& params,
                  std::uint64_t seed, const TrainOptions& options) {
  params.validate();
  options.accountant.validate();
  if (dataset.empty()) throw InputError("train: empty dataset");
  if (dataset.size() != params.dataset_size) {
    throw ParameterError("dataset size N = " + std::to_string(params.dataset_size) +
                         " does not match the " + std::to_string(dataset.size()) +
                         " examples given");
  }
  if (adapters.empty()) throw ConfigError("train: no adapters attached");

  TrainResult res;
  TrainState& st = res.state;
  RngState rng(seed);
  st.sampling = rng.stream(Stream::kSampling);
  st.noise = rng.stream(Stream::kNoise);
  st.q = params.sampling_rate();
  st.sigma = params.noise_scale;
  st.theta = adapters.flatten();
  const std::size_t n_params = st.theta.size();
  const std::size_t workers = std::max<std::size_t>(1, options.workers);
  const double bound = params.clip_norm + 1e-6;

  std::vector<GradientResult> chunk(params.microbatch_size);
  std::vector<double> pre_norms, post_norms;
  for (std::size_t t = 0; t < params.steps; ++t) {
    if (options.epsilon_ceiling) {
      PrivacyLedger next = st.ledger;
      next.record(st.q, st.sigma);
      const double eps = next.epsilon(options.accountant).epsilon;
      if (eps > *options.epsilon_ceiling) {
        throw BudgetExceededError(eps, *options.epsilon_ceiling, st.step + 1);
      }
    }
    const auto lot = sample_lot(dataset.size(), st.q, st.sampling);
    StepLog entry;
    entry.step = st.step + 1;
    entry.lot_size = lot.size();
    pre_norms.clear();
    post_norms.clear();
    if (lot.empty()) {
      // Nothing to average: no update, but the release still counts.
      ++st.step;
      st.ledger.record(st.q, st.sigma);
      entry.median_grad_norm = std::numeric_limits<double>::quiet_NaN();
      entry.loss = std::numeric_limits<double>::quiet_NaN();
    } else {
      std::vector<double> sum(n_params, 0.0);
      double loss_sum = 0.0;
      for (std::size_t begin = 0; begin < lot.size(); begin += params.microbatch_size) {
        const std::size_t end = std::min(lot.size(), begin + params.microbatch_size);
        parallel_for(
            begin, end,
            [&](std::size_t i) {
              chunk[i - begin] = per_sample_gradient(weights, adapters, dataset[lot[i]]);
            },
            workers);
        // Ordered reduction in lot order, independent of the chunking.
        for (std::size_t i = begin; i < end; ++i) {
          GradientResult& g = chunk[i - begin];
          pre_norms.push_back(l2_norm(g.grad));
          auto clipped = clip_gradient(g.grad, params.clip_norm);
          const double cn = l2_norm(clipped);
          if (!(cn <= bound)) {
            throw NumericError("clipped gradient norm " + std::to_string(cn) +
                               " exceeds C + 1e-6");
          }
          post_norms.push_back(cn);
          res.max_clipped_norm = std::max(res.max_clipped_norm, cn);
          ++res.samples_clipped;
          for (std::size_t k = 0; k < n_params; ++k) sum[k] += clipped[k];
          loss_sum += g.loss;
        }
      }
      add_noise_and_average(sum, params.clip_norm, st.sigma, lot.size(), st.noise);
      step(st, sum, params.learning_rate);
      adapters.unflatten(st.theta);
      entry.median_grad_norm = median(pre_norms);
      entry.loss = loss_sum / static_cast<double>(lot.size());
    }
    entry.epsilon = st.ledger.epsilon(options.accountant).epsilon;
    res.log.push_back(entry);
    if (options.on_step) {
      StepInfo info;
      info.log = &res.log.back();
      info.lot = lot;
      info.pre_clip_norms = pre_norms;
      info.clipped_norms = post_norms;
      info.theta = st.theta;
      options.on_step(info);
    }
  }
  res.epsilon = st.ledger.epsilon(options.accountant).epsilon;
  return res;
}

std::string step_log_csv(const std::vector<StepLog>& log) {
  std::string out = "step,lot_size,median_grad_norm,loss,epsilon\n";
  char buf[160];
  for (const auto& e : log) {
    auto num = [](double v) -> std::string {
      if (std::isnan(v)) return "";
      char b[32];
      std::snprintf(b, sizeof b, "%.10g", v);
      return b;
    };
    std::snprintf(buf, sizeof buf, "%zu,%zu,", e.step, e.lot_size);
    out += buf;
    out += num(e.median_grad_norm) + "," + num(e.loss) + "," + num(e.epsilon) + "\n";
  }
  return out;
}

template GradientResult per_sample_gradient(const ModelWeights<float>&,
                                            const AdapterSet<float>&,
                                            const TokenizedExample&);
template GradientResult per_sample_gradient(const ModelWeights<double>&,
                                            const AdapterSet<double>&,
                                            const TokenizedExample&);
template TrainResult train(const ModelWeights<float>&, AdapterSet<float>&,
                           const std::vector<TokenizedExample>&, const PrivacyParams&,
                           std::uint64_t, const TrainOptions&);
template TrainResult train(const ModelWeights<double>&, AdapterSet<double>&,
                           const std::vector<TokenizedExample>&, const PrivacyParams&,
                           std::uint64_t, const TrainOptions&);

}  // namespace dpfl
