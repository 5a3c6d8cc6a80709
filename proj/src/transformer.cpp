#include "dpfl/transformer.hpp"

#include <algorithm>
#include <numeric>

namespace dpfl {

namespace {

std::vector<std::size_t> iota_positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  return p;
}

template <typename T>
typename Tape<T>::Var record_attention_block(Tape<T>& tape, typename Tape<T>::Var x,
                                             const ModelWeights<T>& weights,
                                             std::size_t layer,
                                             std::span<const std::size_t> positions,
                                             const AdapterSet<T>* adapters) {
  const ModelConfig& cfg = weights.config;
  const LayerWeights<T>& L = weights.layers.at(layer);
  const std::string p = "layers." + std::to_string(layer) + ".";
  auto q = record_projection(tape, x, L.wq, p + "wq", adapters);
  auto k = record_projection(tape, x, L.wk, p + "wk", adapters);
  auto v = record_projection(tape, x, L.wv, p + "wv", adapters);
  q = tape.rotary(q, cfg.head_dim(), positions, cfg.rope_base);
  k = tape.rotary(k, cfg.head_dim(), positions, cfg.rope_base);
  auto heads = tape.attention(q, k, v, cfg.n_heads, cfg.n_kv_groups, true);
  return record_projection(tape, heads, L.wo, p + "wo", adapters);
}

template <typename T>
typename Tape<T>::Var record_ffn_block(Tape<T>& tape, typename Tape<T>::Var x,
                                       const ModelWeights<T>& weights, std::size_t layer,
                                       const AdapterSet<T>* adapters) {
  const LayerWeights<T>& L = weights.layers.at(layer);
  const std::string p = "layers." + std::to_string(layer) + ".";
  auto gate = record_projection(tape, x, L.w_gate, p + "w_gate", adapters);
  auto up = record_projection(tape, x, L.w_up, p + "w_up", adapters);
  return record_projection(tape, tape.swiglu(gate, up), L.w_down, p + "w_down", adapters);
}

}  // namespace

template <typename T>
typename Tape<T>::Var record_projection(Tape<T>& tape, typename Tape<T>::Var x,
                                        const Tensor<T>& w0, const std::string& name,
                                        const AdapterSet<T>* adapters) {
  auto base = tape.matmul_nt(x, tape.leaf(w0));
  const LoraAdapter<T>* ad = adapters ? adapters->find(name) : nullptr;
  if (!ad) return base;
  auto low = tape.matmul_nt(x, tape.leaf(ad->a));
  auto delta = tape.matmul_nt(low, tape.leaf(ad->b));
  return tape.add(base, tape.scale(delta, static_cast<T>(ad->scale())));
}

template <typename T>
typename Tape<T>::Var record_logits(Tape<T>& tape, const ModelWeights<T>& weights,
                                    const AdapterSet<T>* adapters,
                                    std::span<const int> token_ids, bool last_row_only) {
  const ModelConfig& cfg = weights.config;
  if (token_ids.empty()) throw InputError("empty token sequence");
  if (token_ids.size() > cfg.max_seq_len) {
    throw InputError("sequence of " + std::to_string(token_ids.size()) +
                     " tokens exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  const auto positions = iota_positions(token_ids.size());
  const T eps = static_cast<T>(cfg.rmsnorm_eps);
  auto h = tape.embedding(tape.leaf(weights.embedding), token_ids);
  for (std::size_t l = 0; l < weights.layers.size(); ++l) {
    const LayerWeights<T>& L = weights.layers[l];
    auto a = tape.rmsnorm_rows(h, tape.leaf(L.attn_norm), eps);
    h = tape.add(h, record_attention_block(tape, a, weights, l, positions, adapters));
    auto f = tape.rmsnorm_rows(h, tape.leaf(L.ffn_norm), eps);
    h = tape.add(h, record_ffn_block(tape, f, weights, l, adapters));
  }
  if (last_row_only) h = tape.slice_rows(h, token_ids.size() - 1, 1);
  auto out = tape.rmsnorm_rows(h, tape.leaf(weights.final_norm), eps);
  return tape.matmul(out, tape.leaf(weights.lm_head));
}

template <typename T>
typename Tape<T>::Var record_loss(Tape<T>& tape, const ModelWeights<T>& weights,
                                  const AdapterSet<T>* adapters,
                                  const TokenizedExample& example) {
  const auto& ids = example.token_ids;
  if (ids.size() != example.loss_mask.size()) {
    throw DimensionError("token ids and loss mask lengths differ");
  }
  if (ids.size() < 2) throw InputError("empty target: example has fewer than two tokens");
  // Position t predicts token t+1, so the last token is never an input.
  std::span<const int> inputs(ids.data(), ids.size() - 1);
  std::span<const int> targets(ids.data() + 1, ids.size() - 1);
  std::span<const std::uint8_t> mask(example.loss_mask.data() + 1, ids.size() - 1);
  if (std::none_of(mask.begin(), mask.end(), [](auto m) { return m != 0; })) {
    throw InputError("empty target: loss mask covers no predicted token");
  }
  auto logits = record_logits(tape, weights, adapters, inputs);
  return tape.cross_entropy(logits, targets, mask);
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    bool causal) {
  Tape<T> tape;
  auto out = tape.attention(tape.leaf(q), tape.leaf(k), tape.leaf(v), 1, 1, causal);
  return tape.value(out);
}

template <typename T>
Tensor<T> grouped_query_attention(const Tensor<T>& x, const ModelWeights<T>& weights,
                                  std::size_t layer,
                                  std::span<const std::size_t> positions,
                                  const AdapterSet<T>* adapters) {
  weights.config.validate();
  if (layer >= weights.layers.size()) throw ConfigError("layer index out of range");
  Tape<T> tape;
  auto out = record_attention_block(tape, tape.leaf(x), weights, layer, positions, adapters);
  return tape.value(out);
}

template <typename T>
Tensor<T> rmsnorm(const Tensor<T>& x, const Tensor<T>& gain, double eps) {
  Tape<T> tape;
  Tensor<T> x2 = x.rank() == 2 ? x : Tensor<T>(Shape{1, x.size()}, x.elems());
  auto out = tape.rmsnorm_rows(tape.leaf(x2), tape.leaf(gain), static_cast<T>(eps));
  return Tensor<T>(x.shape(), tape.value(out).elems());
}

template <typename T>
Tensor<T> swiglu_ffn(const Tensor<T>& x, const Tensor<T>& w_gate, const Tensor<T>& w_up,
                     const Tensor<T>& w_down) {
  Tape<T> tape;
  Tensor<T> x2 = x.rank() == 2 ? x : Tensor<T>(Shape{1, x.size()}, x.elems());
  auto xin = tape.leaf(x2);
  auto gate = tape.matmul_nt(xin, tape.leaf(w_gate));
  auto up = tape.matmul_nt(xin, tape.leaf(w_up));
  auto out = tape.matmul_nt(tape.swiglu(gate, up), tape.leaf(w_down));
  const Tensor<T>& o = tape.value(out);
  if (x.rank() == 2) return o;
  return Tensor<T>(Shape{o.size()}, o.elems());
}

template <typename T>
Tensor<T> apply_rotary(const Tensor<T>& x, std::span<const std::size_t> positions,
                       std::size_t head_dim, double base) {
  Tape<T> tape;
  auto out = tape.rotary(tape.leaf(x), head_dim, positions, base);
  return tape.value(out);
}

template <typename T>
Tensor<T> forward_logits(const ModelWeights<T>& weights, const AdapterSet<T>* adapters,
                         std::span<const int> token_ids) {
  Tape<T> tape;
  return tape.value(record_logits(tape, weights, adapters, token_ids));
}

template <typename T>
double loss_per_example(const ModelWeights<T>& weights, const AdapterSet<T>* adapters,
                        const TokenizedExample& example) {
  Tape<T> tape;
  return static_cast<double>(tape.value(record_loss(tape, weights, adapters, example)).item());
}

template <typename T>
std::vector<int> greedy_decode(const ModelWeights<T>& weights,
                               const AdapterSet<T>* adapters,
                               std::span<const int> prompt_ids, std::size_t max_new) {
  const std::size_t limit = weights.config.max_seq_len;
  if (prompt_ids.empty()) throw InputError("empty prompt");
  if (prompt_ids.size() + max_new > limit) {
    throw InputError("prompt of " + std::to_string(prompt_ids.size()) + " tokens plus " +
                     std::to_string(max_new) + " new tokens exceeds max_seq_len " +
                     std::to_string(limit));
  }
  std::vector<int> seq(prompt_ids.begin(), prompt_ids.end());
  std::vector<int> generated;
  for (std::size_t step = 0; step < max_new; ++step) {
    Tape<T> tape;
    const Tensor<T>& logits = tape.value(record_logits(tape, weights, adapters, seq, true));
    auto vals = logits.values();
    // First maximal index wins ties.
    int next = static_cast<int>(std::max_element(vals.begin(), vals.end()) - vals.begin());
    generated.push_back(next);
    if (next == kEosId) break;
    seq.push_back(next);
  }
  return generated;
}

#define DPFL_INSTANTIATE(T)                                                               \
  template Tape<T>::Var record_logits(Tape<T>&, const ModelWeights<T>&,                   \
                                      const AdapterSet<T>*, std::span<const int>, bool);  \
  template Tape<T>::Var record_loss(Tape<T>&, const ModelWeights<T>&,                     \
                                    const AdapterSet<T>*, const TokenizedExample&);       \
  template Tape<T>::Var record_projection(Tape<T>&, Tape<T>::Var, const Tensor<T>&,       \
                                          const std::string&, const AdapterSet<T>*);      \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                               bool);                                                     \
  template Tensor<T> grouped_query_attention(const Tensor<T>&, const ModelWeights<T>&,    \
                                             std::size_t, std::span<const std::size_t>,   \
                                             const AdapterSet<T>*);                       \
  template Tensor<T> rmsnorm(const Tensor<T>&, const Tensor<T>&, double);                 \
  template Tensor<T> swiglu_ffn(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                const Tensor<T>&);                                        \
  template Tensor<T> apply_rotary(const Tensor<T>&, std::span<const std::size_t>,         \
                                  std::size_t, double);                                   \
  template Tensor<T> forward_logits(const ModelWeights<T>&, const AdapterSet<T>*,         \
                                    std::span<const int>);                                \
  template double loss_per_example(const ModelWeights<T>&, const AdapterSet<T>*,          \
                                   const TokenizedExample&);                              \
  template std::vector<int> greedy_decode(const ModelWeights<T>&, const AdapterSet<T>*,   \
                                          std::span<const int>, std::size_t);

DPFL_INSTANTIATE(float)
DPFL_INSTANTIATE(double)

#undef DPFL_INSTANTIATE

}  // namespace dpfl
