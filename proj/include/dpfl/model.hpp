#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpfl/rng.hpp"
#include "dpfl/tensor.hpp"

namespace dpfl {

// Tokens reserved ahead of the 256 byte values.
inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kSepId = 3;
inline constexpr int kByteOffset = 4;

struct ModelConfig {
  std::size_t vocab_size = 260;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t n_kv_groups = 2;
  std::size_t ffn_hidden = 128;
  std::size_t max_seq_len = 128;
  double rope_base = 10000.0;
  double rmsnorm_eps = 1e-5;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t kv_dim() const { return n_kv_groups * head_dim(); }
  // Throws ConfigError naming the first violated constraint.
  void validate() const;
};

template <typename T>
struct LayerWeights {
  Tensor<T> attn_norm;  // [d_model]
  Tensor<T> wq;         // [n_heads·d_head x d_model]
  Tensor<T> wk;         // [n_kv_groups·d_head x d_model]
  Tensor<T> wv;         // [n_kv_groups·d_head x d_model]
  Tensor<T> wo;         // [d_model x n_heads·d_head]
  Tensor<T> ffn_norm;   // [d_model]
  Tensor<T> w_gate;     // [ffn_hidden x d_model]
  Tensor<T> w_up;       // [ffn_hidden x d_model]
  Tensor<T> w_down;     // [d_model x ffn_hidden]
};

// Base parameters of the decoder. Projection matrices are stored [out x in],
// so a projection of row-stacked activations X is X·Wᵀ.
template <typename T>
struct ModelWeights {
  ModelConfig config;
  Tensor<T> embedding;  // [vocab x d_model]
  std::vector<LayerWeights<T>> layers;
  Tensor<T> final_norm;  // [d_model]
  Tensor<T> lm_head;     // [d_model x vocab]

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) matrices, unit norm gains.
  static ModelWeights init(const ModelConfig& config, RngStream& rng);

  // Stable (name, tensor) listing used by checkpoints and optimizers.
  std::vector<std::pair<std::string, Tensor<T>*>> named();
  std::vector<std::pair<std::string, const Tensor<T>*>> named() const;
  Tensor<T>* find(const std::string& name);
  const Tensor<T>* find(const std::string& name) const;

  std::size_t parameter_count() const;
  void set_trainable(bool on);
  // Throws DimensionError if any tensor disagrees with `config`.
  void check_shapes() const;

  template <typename U>
  ModelWeights<U> cast() const;
};

}  // namespace dpfl
