#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dpfl/lora.hpp"
#include "dpfl/model.hpp"
#include "dpfl/tape.hpp"

namespace dpfl {

// Token ids plus a per-position flag marking supervised positions (the answer
// bytes and the closing EOS).
struct TokenizedExample {
  std::vector<int> token_ids;
  std::vector<std::uint8_t> loss_mask;
};

// Records the decoder on `tape` and returns the [T x vocab] logits, or only
// the last row when `last_row_only` is set. Adapters, when given, add their
// low-rank term to the matrices they target.
template <typename T>
typename Tape<T>::Var record_logits(Tape<T>& tape, const ModelWeights<T>& weights,
                                    const AdapterSet<T>* adapters,
                                    std::span<const int> token_ids,
                                    bool last_row_only = false);

// Records the masked next-token loss of one example and returns the scalar.
template <typename T>
typename Tape<T>::Var record_loss(Tape<T>& tape, const ModelWeights<T>& weights,
                                  const AdapterSet<T>* adapters,
                                  const TokenizedExample& example);

// The projection X·W0ᵀ plus the adapter term when one targets `name`.
template <typename T>
typename Tape<T>::Var record_projection(Tape<T>& tape, typename Tape<T>::Var x,
                                        const Tensor<T>& w0, const std::string& name,
                                        const AdapterSet<T>* adapters);

// softmax(Q·Kᵀ/sqrt(d_k) + mask)·V for a single head.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    bool causal);

// Attention block of layer `layer`: projections, rotary on Q and K, grouped
// scoring with causal mask, and the output projection.
template <typename T>
Tensor<T> grouped_query_attention(const Tensor<T>& x, const ModelWeights<T>& weights,
                                  std::size_t layer,
                                  std::span<const std::size_t> positions,
                                  const AdapterSet<T>* adapters = nullptr);

template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, double eps);

template <typename T>
Tensor<T> swiglu_ffn(const Tensor<T>& x, const Tensor<T>& w_gate, const Tensor<T>& w_up,
                     const Tensor<T>& w_down);

// x is [T x d_head] (or [T x n·d_head] for several heads).
template <typename T>
Tensor<T> apply_rotary(const Tensor<T>& x, std::span<const std::size_t> positions,
                       std::size_t head_dim, double base);

template <typename T>
Tensor<T> forward_logits(const ModelWeights<T>& weights, const AdapterSet<T>* adapters,
                         std::span<const int> token_ids);

template <typename T>
double loss_per_example(const ModelWeights<T>& weights, const AdapterSet<T>* adapters,
                        const TokenizedExample& example);

// Appends the argmax token until EOS (kept as the last element) or max_new.
template <typename T>
std::vector<int> greedy_decode(const ModelWeights<T>& weights,
                               const AdapterSet<T>* adapters,
                               std::span<const int> prompt_ids, std::size_t max_new);

}  // namespace dpfl
