#pragma once

// Small models and naive reference implementations shared by the tests. The
// oracles use plain loops at 64-bit precision and no library kernels.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dpfl/data.hpp"
#include "dpfl/lora.hpp"
#include "dpfl/metrics.hpp"
#include "dpfl/model.hpp"
#include "dpfl/rng.hpp"
#include "dpfl/tape.hpp"
#include "dpfl/tensor.hpp"
#include "dpfl/transformer.hpp"

namespace dpfl::testing {

inline ModelConfig micro_config(std::size_t n_heads = 2, std::size_t n_kv_groups = 1,
                                std::size_t n_layers = 1) {
  ModelConfig c;
  c.d_model = 16;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.n_kv_groups = n_kv_groups;
  c.ffn_hidden = 32;
  c.max_seq_len = 24;
  return c;
}

template <typename T>
Tensor<T> random_tensor(RngStream& rng, Shape shape, double scale = 1.0) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(scale * (2.0 * rng.uniform() - 1.0));
  return t;
}

// Replaces every B with random values so adapter gradients are not trivially
// zero.
template <typename T>
void randomize_b(AdapterSet<T>& adapters, RngStream& rng, double scale = 0.1) {
  for (auto& [name, t] : adapters.named()) {
    if (name.size() > 2 && name.substr(name.size() - 2) == "/B") {
      for (auto& v : t->values()) v = static_cast<T>(scale * (2.0 * rng.uniform() - 1.0));
    }
  }
}

using Mat = std::vector<std::vector<double>>;

template <typename T>
Mat to_mat(const Tensor<T>& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = static_cast<double>(t(r, c));
  return m;
}

inline Mat naive_matmul(const Mat& a, const Mat& b) {
  Mat out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j)
      for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
  return out;
}

inline Mat transpose(const Mat& a) {
  Mat out(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) out[j][i] = a[i][j];
  return out;
}

inline std::vector<double> naive_softmax(const std::vector<double>& x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double s = 0.0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) s += out[i] = std::exp(x[i] - m);
  for (auto& v : out) v /= s;
  return out;
}

// Rotates pairs (2j, 2j+1) of each head block of row r by pos[r]·base^(-2j/hd).
inline Mat naive_rotary(const Mat& x, const std::vector<std::size_t>& pos, std::size_t hd,
                        double base) {
  Mat out = x;
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t h0 = 0; h0 < x[r].size(); h0 += hd) {
      for (std::size_t j = 0; j < hd / 2; ++j) {
        const double ang = static_cast<double>(pos[r]) * std::pow(base, -2.0 * j / hd);
        const double a = x[r][h0 + 2 * j], b = x[r][h0 + 2 * j + 1];
        out[r][h0 + 2 * j] = a * std::cos(ang) - b * std::sin(ang);
        out[r][h0 + 2 * j + 1] = a * std::sin(ang) + b * std::cos(ang);
      }
    }
  }
  return out;
}

// Causal single-head attention by explicit per-position loops.
inline Mat naive_attention(const Mat& q, const Mat& k, const Mat& v, bool causal) {
  const std::size_t n = q.size(), dk = q[0].size();
  Mat out(n, std::vector<double>(v[0].size(), 0.0));
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t visible = causal ? t + 1 : k.size();
    std::vector<double> s(visible);
    for (std::size_t u = 0; u < visible; ++u) {
      double d = 0.0;
      for (std::size_t c = 0; c < dk; ++c) d += q[t][c] * k[u][c];
      s[u] = d / std::sqrt(static_cast<double>(dk));
    }
    const auto w = naive_softmax(s);
    for (std::size_t u = 0; u < visible; ++u)
      for (std::size_t c = 0; c < v[0].size(); ++c) out[t][c] += w[u] * v[u][c];
  }
  return out;
}

inline Mat columns(const Mat& m, std::size_t begin, std::size_t count) {
  Mat out(m.size(), std::vector<double>(count));
  for (std::size_t r = 0; r < m.size(); ++r)
    for (std::size_t c = 0; c < count; ++c) out[r][c] = m[r][begin + c];
  return out;
}

// Plain multi-head attention block with every K/V group explicitly copied to
// the heads that read it, so each head owns a full K and V.
template <typename T>
Mat reference_attention_block(const Mat& x, const ModelWeights<T>& w, std::size_t layer) {
  const ModelConfig& c = w.config;
  const auto& L = w.layers[layer];
  const std::size_t hd = c.head_dim();
  std::vector<std::size_t> pos(x.size());
  for (std::size_t i = 0; i < pos.size(); ++i) pos[i] = i;
  const Mat q = naive_rotary(naive_matmul(x, transpose(to_mat(L.wq))), pos, hd, c.rope_base);
  const Mat k = naive_rotary(naive_matmul(x, transpose(to_mat(L.wk))), pos, hd, c.rope_base);
  const Mat v = naive_matmul(x, transpose(to_mat(L.wv)));
  const std::size_t per_group = c.n_heads / c.n_kv_groups;
  Mat k_full(x.size()), v_full(x.size());
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const Mat kh = columns(k, (h / per_group) * hd, hd);
    const Mat vh = columns(v, (h / per_group) * hd, hd);
    for (std::size_t r = 0; r < x.size(); ++r) {
      k_full[r].insert(k_full[r].end(), kh[r].begin(), kh[r].end());
      v_full[r].insert(v_full[r].end(), vh[r].begin(), vh[r].end());
    }
  }
  Mat concat(x.size());
  for (std::size_t h = 0; h < c.n_heads; ++h) {
    const Mat o = naive_attention(columns(q, h * hd, hd), columns(k_full, h * hd, hd),
                                  columns(v_full, h * hd, hd), true);
    for (std::size_t r = 0; r < x.size(); ++r)
      concat[r].insert(concat[r].end(), o[r].begin(), o[r].end());
  }
  return naive_matmul(concat, transpose(to_mat(L.wo)));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Mat& b) {
  double m = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c)
      m = std::max(m, std::abs(static_cast<double>(a(r, c)) - b[r][c]));
  return m;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

// |a - n| / max(|a|, |n|, floor): relative error that tolerates entries where
// both values sit at round-off scale.
inline double rel_err(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Plain full-batch SGD on the mean loss, with the gradient taken from one
// tape over the whole batch rather than from per-sample gradients.
inline std::vector<double> sgd_oracle_step(const ModelWeights<double>& w,
                                           AdapterSet<double>& ad,
                                           const std::vector<TokenizedExample>& data,
                                           double eta) {
  Tape<double> tape;
  auto total = record_loss<double>(tape, w, &ad, data[0]);
  for (std::size_t i = 1; i < data.size(); ++i) {
    total = tape.add(total, record_loss<double>(tape, w, &ad, data[i]));
  }
  tape.backward(tape.scale(total, 1.0 / static_cast<double>(data.size())));
  std::vector<double> theta = ad.flatten();
  std::size_t k = 0;
  for (const auto& [name, t] : ad.named()) {
    const auto* g = tape.grad_of(*t);
    for (std::size_t j = 0; j < t->size(); ++j, ++k) theta[k] -= eta * (*g)[j];
  }
  ad.unflatten(theta);
  return theta;
}

// Independent oracle: per-class precision and recall from raw lists, F1 as
// their harmonic mean, micro F1 from pooled precision and recall.
struct MetricsOracle {
  double accuracy, micro, macro, weighted;
};

inline MetricsOracle metrics_oracle(const std::vector<Label>& g,
                                    const std::vector<Prediction>& p) {
  MetricsOracle o{};
  double correct = 0, tp_all = 0, pred_all = 0;
  for (std::size_t i = 0; i < g.size(); ++i)
    correct += static_cast<int>(g[i]) == static_cast<int>(p[i]);
  o.accuracy = correct / g.size();
  for (int c = 0; c < 3; ++c) {
    double tp = 0, pred = 0, gold = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      tp += static_cast<int>(g[i]) == c && static_cast<int>(p[i]) == c;
      pred += static_cast<int>(p[i]) == c;
      gold += static_cast<int>(g[i]) == c;
    }
    const double prec = pred > 0 ? tp / pred : 0.0;
    const double rec = gold > 0 ? tp / gold : 0.0;
    const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
    o.macro += f1 / 3.0;
    o.weighted += f1 * gold / g.size();
    tp_all += tp;
    pred_all += pred;
  }
  const double prec = pred_all > 0 ? tp_all / pred_all : 0.0;
  const double rec = tp_all / g.size();
  o.micro = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
  return o;
}

}  // namespace dpfl::testing
