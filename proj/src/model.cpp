#include "dpfl/model.hpp"

#include <cmath>

namespace dpfl {

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (d_model == 0 || n_heads == 0 || n_kv_groups == 0 || n_layers == 0)
    fail("d_model, n_heads, n_kv_groups and n_layers must be positive");
  if (d_model % n_heads != 0) fail("d_model must be divisible by n_heads");
  if (n_heads % n_kv_groups != 0) fail("n_heads must be divisible by n_kv_groups");
  if (head_dim() % 2 != 0) fail("d_head must be even for rotary pairs");
  if (vocab_size < static_cast<std::size_t>(kByteOffset) + 256)
    fail("vocab_size must cover 4 special tokens plus 256 bytes");
  if (ffn_hidden == 0) fail("ffn_hidden must be positive");
  if (max_seq_len < 2) fail("max_seq_len must be at least 2");
  if (!(rope_base > 1.0)) fail("rope_base must exceed 1");
  if (!(rmsnorm_eps > 0.0)) fail("rmsnorm_eps must be positive");
}

namespace {

template <typename T>
Tensor<T> uniform_matrix(RngStream& rng, std::size_t rows, std::size_t cols,
                         std::size_t fan_in) {
  Tensor<T> t(Shape{rows, cols});
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>((2.0 * rng.uniform() - 1.0) * bound);
  return t;
}

template <typename T>
Tensor<T> ones(std::size_t n) {
  Tensor<T> t(Shape{n});
  for (auto& v : t.values()) v = T{1};
  return t;
}

void expect_shape(const std::string& name, const Shape& got, const Shape& want) {
  if (got != want) {
    throw DimensionError(name + " has shape " + shape_to_string(got) + ", expected " +
                         shape_to_string(want));
  }
}

}  // namespace

template <typename T>
ModelWeights<T> ModelWeights<T>::init(const ModelConfig& config, RngStream& rng) {
  config.validate();
  const std::size_t d = config.d_model, kv = config.kv_dim(), f = config.ffn_hidden;
  ModelWeights<T> w;
  w.config = config;
  w.embedding = uniform_matrix<T>(rng, config.vocab_size, d, d);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights<T> layer;
    layer.attn_norm = ones<T>(d);
    layer.wq = uniform_matrix<T>(rng, d, d, d);
    layer.wk = uniform_matrix<T>(rng, kv, d, d);
    layer.wv = uniform_matrix<T>(rng, kv, d, d);
    layer.wo = uniform_matrix<T>(rng, d, d, d);
    layer.ffn_norm = ones<T>(d);
    layer.w_gate = uniform_matrix<T>(rng, f, d, d);
    layer.w_up = uniform_matrix<T>(rng, f, d, d);
    layer.w_down = uniform_matrix<T>(rng, d, f, f);
    w.layers.push_back(std::move(layer));
  }
  w.final_norm = ones<T>(d);
  w.lm_head = uniform_matrix<T>(rng, d, config.vocab_size, d);
  return w;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> ModelWeights<T>::named() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  out.emplace_back("embedding", &embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    auto& L = layers[l];
    out.emplace_back(p + "attn_norm", &L.attn_norm);
    out.emplace_back(p + "wq", &L.wq);
    out.emplace_back(p + "wk", &L.wk);
    out.emplace_back(p + "wv", &L.wv);
    out.emplace_back(p + "wo", &L.wo);
    out.emplace_back(p + "ffn_norm", &L.ffn_norm);
    out.emplace_back(p + "w_gate", &L.w_gate);
    out.emplace_back(p + "w_up", &L.w_up);
    out.emplace_back(p + "w_down", &L.w_down);
  }
  out.emplace_back("final_norm", &final_norm);
  out.emplace_back("lm_head", &lm_head);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> ModelWeights<T>::named() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& [name, t] : const_cast<ModelWeights<T>*>(this)->named())
    out.emplace_back(name, t);
  return out;
}

template <typename T>
Tensor<T>* ModelWeights<T>::find(const std::string& name) {
  for (auto& [n, t] : named())
    if (n == name) return t;
  return nullptr;
}

template <typename T>
const Tensor<T>* ModelWeights<T>::find(const std::string& name) const {
  return const_cast<ModelWeights<T>*>(this)->find(name);
}

template <typename T>
std::size_t ModelWeights<T>::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named()) n += t->size();
  return n;
}

template <typename T>
void ModelWeights<T>::set_trainable(bool on) {
  for (auto& [name, t] : named()) t->set_trainable(on);
}

template <typename T>
void ModelWeights<T>::check_shapes() const {
  config.validate();
  const std::size_t d = config.d_model, kv = config.kv_dim(), f = config.ffn_hidden;
  if (layers.size() != config.n_layers) {
    throw DimensionError("model has " + std::to_string(layers.size()) +
                         " layers, config says " + std::to_string(config.n_layers));
  }
  expect_shape("embedding", embedding.shape(), {config.vocab_size, d});
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    const auto& L = layers[l];
    expect_shape(p + "attn_norm", L.attn_norm.shape(), {d});
    expect_shape(p + "wq", L.wq.shape(), {d, d});
    expect_shape(p + "wk", L.wk.shape(), {kv, d});
    expect_shape(p + "wv", L.wv.shape(), {kv, d});
    expect_shape(p + "wo", L.wo.shape(), {d, d});
    expect_shape(p + "ffn_norm", L.ffn_norm.shape(), {d});
    expect_shape(p + "w_gate", L.w_gate.shape(), {f, d});
    expect_shape(p + "w_up", L.w_up.shape(), {f, d});
    expect_shape(p + "w_down", L.w_down.shape(), {d, f});
  }
  expect_shape("final_norm", final_norm.shape(), {d});
  expect_shape("lm_head", lm_head.shape(), {d, config.vocab_size});
}

template <typename T>
template <typename U>
ModelWeights<U> ModelWeights<T>::cast() const {
  ModelWeights<U> out;
  out.config = config;
  out.embedding = embedding.template cast<U>();
  for (const auto& L : layers) {
    LayerWeights<U> c;
    c.attn_norm = L.attn_norm.template cast<U>();
    c.wq = L.wq.template cast<U>();
    c.wk = L.wk.template cast<U>();
    c.wv = L.wv.template cast<U>();
    c.wo = L.wo.template cast<U>();
    c.ffn_norm = L.ffn_norm.template cast<U>();
    c.w_gate = L.w_gate.template cast<U>();
    c.w_up = L.w_up.template cast<U>();
    c.w_down = L.w_down.template cast<U>();
    out.layers.push_back(std::move(c));
  }
  out.final_norm = final_norm.template cast<U>();
  out.lm_head = lm_head.template cast<U>();
  return out;
}

template struct ModelWeights<float>;
template struct ModelWeights<double>;
template ModelWeights<double> ModelWeights<float>::cast<double>() const;
template ModelWeights<float> ModelWeights<double>::cast<float>() const;
template ModelWeights<float> ModelWeights<float>::cast<float>() const;
template ModelWeights<double> ModelWeights<double>::cast<double>() const;

}  // namespace dpfl
