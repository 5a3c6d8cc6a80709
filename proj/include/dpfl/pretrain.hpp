#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "dpfl/transformer.hpp"

namespace dpfl {

// Non-private full-parameter training of the base model on public text. Used
// to give the desk-scale decoder the answer format before private LoRA
// fine-tuning; this stands in for a pretrained foundation model.
struct PretrainParams {
  std::size_t steps = 400;
  std::size_t batch_size = 16;
  double learning_rate = 3e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  // Supervise every next-token position rather than just the answer.
  bool full_sequence = true;
};

// Adam on every base tensor over uniformly drawn batches. Returns the mean
// batch loss per step.
template <typename T>
std::vector<double> pretrain(ModelWeights<T>& weights,
                             const std::vector<TokenizedExample>& corpus,
                             const PretrainParams& params, std::uint64_t seed,
                             std::size_t workers = 1,
                             const std::function<void(std::size_t, double)>& on_step = {});

}  // namespace dpfl
