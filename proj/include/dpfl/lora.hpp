#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "dpfl/model.hpp"
#include "dpfl/rng.hpp"
#include "dpfl/tensor.hpp"

namespace dpfl {

// Low-rank update ΔW = (alpha / rank) · B·A of a frozen [d x k] base matrix.
template <typename T>
struct LoraAdapter {
  std::string target;
  Tensor<T> a;  // [rank x k]
  Tensor<T> b;  // [d x rank]
  std::size_t rank = 0;
  double alpha = 0.0;

  double scale() const { return alpha / static_cast<double>(rank); }
  std::size_t parameter_count() const { return a.size() + b.size(); }
};

// Adapters keyed by target name. Iteration order (and therefore the flat
// parameter order: each target's A then B) follows the sorted target names.
template <typename T>
class AdapterSet {
 public:
  void add(LoraAdapter<T> adapter);
  const LoraAdapter<T>* find(const std::string& target) const;
  LoraAdapter<T>* find(const std::string& target);

  std::size_t size() const { return adapters_.size(); }
  bool empty() const { return adapters_.empty(); }
  std::size_t parameter_count() const;
  std::vector<std::string> targets() const;

  std::vector<double> flatten() const;
  void unflatten(std::span<const double> theta);

  // Ordered (name, tensor) pairs: "lora/<target>/A", "lora/<target>/B".
  std::vector<std::pair<std::string, const Tensor<T>*>> named() const;
  std::vector<std::pair<std::string, Tensor<T>*>> named();

  auto begin() const { return adapters_.begin(); }
  auto end() const { return adapters_.end(); }

  template <typename U>
  AdapterSet<U> cast() const;

 private:
  std::map<std::string, LoraAdapter<T>> adapters_;
};

struct LoraConfig {
  std::size_t rank = 8;
  double alpha = 16.0;
  // Either per-layer kinds ("wq", "wv", ...) applied to every layer, or fully
  // qualified names such as "layers.0.wq".
  std::vector<std::string> targets = {"wq", "wv"};
};

// h = W0·x + (alpha/rank)·B·(A·x), without materializing B·A.
template <typename T>
Tensor<T> lora_forward(const Tensor<T>& w0, const LoraAdapter<T>& adapter,
                       const Tensor<T>& x);

// Dense W0 + (alpha/rank)·B·A.
template <typename T>
Tensor<T> merge(const Tensor<T>& w0, const LoraAdapter<T>& adapter);

// One adapter per resolved target: A ~ Uniform(-1/sqrt(k), 1/sqrt(k)) from
// `rng`, B = 0. Rank must satisfy 1 <= rank <= min(d, k) / 2.
template <typename T>
AdapterSet<T> attach(const ModelWeights<T>& weights, const LoraConfig& config,
                     RngStream& rng);

// Target names `config.targets` expands to, sorted. Throws ConfigError for
// names that do not resolve to an attention or FFN matrix of the model.
std::vector<std::string> resolve_targets(const ModelConfig& model,
                                         const std::vector<std::string>& targets);

// Copy of `weights` with every adapted matrix replaced by its merged form.
template <typename T>
ModelWeights<T> merged_weights(const ModelWeights<T>& weights,
                               const AdapterSet<T>& adapters);

}  // namespace dpfl
