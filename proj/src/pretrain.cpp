#include "dpfl/pretrain.hpp"

#include <algorithm>
#include <cmath>

#include "dpfl/errors.hpp"
#include "dpfl/parallel.hpp"
#include "dpfl/rng.hpp"

namespace dpfl {

template <typename T>
std::vector<double> pretrain(ModelWeights<T>& weights,
                             const std::vector<TokenizedExample>& corpus,
                             const PretrainParams& params, std::uint64_t seed,
                             std::size_t workers,
                             const std::function<void(std::size_t, double)>& on_step) {
  if (corpus.empty()) throw InputError("pretrain: empty corpus");
  if (params.batch_size == 0) throw ParameterError("pretrain: batch size must be at least 1");
  if (!(params.learning_rate > 0.0)) throw ParameterError("pretrain: learning rate must be positive");

  std::vector<TokenizedExample> examples = corpus;
  if (params.full_sequence) {
    for (auto& ex : examples) {
      std::fill(ex.loss_mask.begin(), ex.loss_mask.end(), std::uint8_t{1});
      if (!ex.loss_mask.empty()) ex.loss_mask.front() = 0;
    }
  }

  auto named = weights.named();
  std::vector<std::size_t> offsets{0};
  for (const auto& [name, t] : named) offsets.push_back(offsets.back() + t->size());
  const std::size_t n_params = offsets.back();
  std::vector<double> m(n_params, 0.0), v(n_params, 0.0);

  const bool was_trainable = named.front().second->trainable();
  weights.set_trainable(true);

  RngState rng(seed);
  RngStream& pick = rng.stream(Stream::kSampling);
  std::vector<std::vector<double>> grads(params.batch_size);
  std::vector<double> losses(params.batch_size);
  std::vector<double> history;
  history.reserve(params.steps);

  for (std::size_t step = 0; step < params.steps; ++step) {
    std::vector<std::size_t> batch(params.batch_size);
    for (auto& b : batch) b = pick.below(examples.size());
    parallel_for(
        0, batch.size(),
        [&](std::size_t i) {
          Tape<T> tape;
          auto loss = record_loss<T>(tape, weights, nullptr, examples[batch[i]]);
          tape.backward(loss);
          losses[i] = static_cast<double>(tape.value(loss).item());
          auto& g = grads[i];
          g.assign(n_params, 0.0);
          for (std::size_t k = 0; k < named.size(); ++k) {
            if (const std::vector<T>* gt = tape.grad_of(*named[k].second)) {
              std::copy(gt->begin(), gt->end(), g.begin() + static_cast<std::ptrdiff_t>(offsets[k]));
            }
          }
        },
        workers);
    double mean_loss = 0.0;
    for (double l : losses) mean_loss += l;
    mean_loss /= static_cast<double>(batch.size());
    history.push_back(mean_loss);

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    const double t1 = static_cast<double>(step + 1);
    const double c1 = 1.0 - std::pow(params.beta1, t1);
    const double c2 = 1.0 - std::pow(params.beta2, t1);
    for (std::size_t k = 0; k < named.size(); ++k) {
      auto vals = named[k].second->values();
      for (std::size_t j = 0; j < vals.size(); ++j) {
        const std::size_t p = offsets[k] + j;
        double g = 0.0;
        for (const auto& gi : grads) g += gi[p];
        g *= inv_b;
        m[p] = params.beta1 * m[p] + (1.0 - params.beta1) * g;
        v[p] = params.beta2 * v[p] + (1.0 - params.beta2) * g * g;
        const double upd = params.learning_rate * (m[p] / c1) / (std::sqrt(v[p] / c2) + params.adam_eps);
        vals[j] = static_cast<T>(static_cast<double>(vals[j]) - upd);
      }
    }
    if (on_step) on_step(step + 1, mean_loss);
  }
  weights.set_trainable(was_trainable);
  return history;
}

template std::vector<double> pretrain(ModelWeights<float>&, const std::vector<TokenizedExample>&,
                                      const PretrainParams&, std::uint64_t, std::size_t,
                                      const std::function<void(std::size_t, double)>&);
template std::vector<double> pretrain(ModelWeights<double>&, const std::vector<TokenizedExample>&,
                                      const PretrainParams&, std::uint64_t, std::size_t,
                                      const std::function<void(std::size_t, double)>&);

}  // namespace dpfl
