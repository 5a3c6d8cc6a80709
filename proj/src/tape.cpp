#include "dpfl/tape.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>

namespace dpfl {

namespace {

std::atomic<std::uint64_t> g_next_tape_id{1};

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
MatMap<T> as_mat(std::vector<T>& buf, std::size_t rows, std::size_t cols) {
  return MatMap<T>(buf.data(), rows, cols);
}

template <typename T>
void require_rank2(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got " +
                         shape_to_string(t.shape()));
  }
}

}  // namespace

template <typename T>
Tape<T>::Tape() : id_(g_next_tape_id.fetch_add(1)) {}

template <typename T>
typename Tape<T>::Node& Tape<T>::node(Var v) {
  if (v.tape_id != id_ || v.index >= nodes_.size()) {
    throw UsageError("variable does not belong to this tape");
  }
  return nodes_[v.index];
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
  if (v.tape_id != id_ || v.index >= nodes_.size()) {
    throw UsageError("variable does not belong to this tape");
  }
  return nodes_[v.index];
}

template <typename T>
std::vector<T>& Tape<T>::grad_buf(std::size_t index) {
  Node& n = nodes_[index];
  if (n.grad.empty()) n.grad.assign(n.value().size(), T{0});
  return n.grad;
}

template <typename T>
typename Tape<T>::Var Tape<T>::push(std::string op, Tensor<T> value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError(op + " produced a non-finite value");
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  n.op = std::move(op);
  nodes_.push_back(std::move(n));
  return Var{id_, nodes_.size() - 1};
}

template <typename T>
typename Tape<T>::Var Tape<T>::leaf(const Tensor<T>& t) {
  if (auto it = leaves_.find(&t); it != leaves_.end()) return Var{id_, it->second};
  Node n;
  n.ext = &t;
  n.requires_grad = t.trainable();
  n.op = "leaf";
  nodes_.push_back(std::move(n));
  leaves_.emplace(&t, nodes_.size() - 1);
  return Var{id_, nodes_.size() - 1};
}

template <typename T>
typename Tape<T>::Var Tape<T>::bind(Tensor<T>& t) {
  Var v = leaf(t);
  nodes_[v.index].sink = &t;
  return v;
}

template <typename T>
typename Tape<T>::Var Tape<T>::constant(Tensor<T> value) {
  return push("constant", std::move(value), false);
}

template <typename T>
typename Tape<T>::Var Tape<T>::matmul(Var a, Var b) {
  const Tensor<T>& av = node(a).value();
  const Tensor<T>& bv = node(b).value();
  Tensor<T> out = dpfl::matmul(av, bv);
  bool rg = node(a).requires_grad || node(b).requires_grad;
  Var o = push("matmul", std::move(out), rg);
  if (rg) {
    nodes_[o.index].back = [this, a, b, o] {
      const Tensor<T>& A = nodes_[a.index].value();
      const Tensor<T>& B = nodes_[b.index].value();
      auto dC = as_mat(nodes_[o.index].grad, A.rows(), B.cols());
      if (nodes_[a.index].requires_grad)
        as_mat(grad_buf(a.index), A.rows(), A.cols()).noalias() +=
            dC * B.mat().transpose();
      if (nodes_[b.index].requires_grad)
        as_mat(grad_buf(b.index), B.rows(), B.cols()).noalias() +=
            A.mat().transpose() * dC;
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::matmul_nt(Var a, Var b) {
  const Tensor<T>& av = node(a).value();
  const Tensor<T>& bv = node(b).value();
  Tensor<T> out = dpfl::matmul_nt(av, bv);
  bool rg = node(a).requires_grad || node(b).requires_grad;
  Var o = push("matmul_nt", std::move(out), rg);
  if (rg) {
    nodes_[o.index].back = [this, a, b, o] {
      const Tensor<T>& A = nodes_[a.index].value();
      const Tensor<T>& B = nodes_[b.index].value();
      auto dC = as_mat(nodes_[o.index].grad, A.rows(), B.rows());
      if (nodes_[a.index].requires_grad)
        as_mat(grad_buf(a.index), A.rows(), A.cols()).noalias() += dC * B.mat();
      if (nodes_[b.index].requires_grad)
        as_mat(grad_buf(b.index), B.rows(), B.cols()).noalias() +=
            dC.transpose() * A.mat();
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::add(Var a, Var b) {
  const Tensor<T>& av = node(a).value();
  const Tensor<T>& bv = node(b).value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("add shapes differ: " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
  }
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  Var o = push("add", std::move(out), rg);
  if (rg) {
    nodes_[o.index].back = [this, a, b, o] {
      const auto& g = nodes_[o.index].grad;
      for (Var in : {a, b}) {
        if (!nodes_[in.index].requires_grad) continue;
        auto& d = grad_buf(in.index);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
      }
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::mul(Var a, Var b) {
  const Tensor<T>& av = node(a).value();
  const Tensor<T>& bv = node(b).value();
  if (av.shape() != bv.shape()) {
    throw DimensionError("mul shapes differ: " + shape_to_string(av.shape()) + " vs " +
                         shape_to_string(bv.shape()));
  }
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  bool rg = node(a).requires_grad || node(b).requires_grad;
  Var o = push("mul", std::move(out), rg);
  if (rg) {
    nodes_[o.index].back = [this, a, b, o] {
      const auto& g = nodes_[o.index].grad;
      const Tensor<T>& A = nodes_[a.index].value();
      const Tensor<T>& B = nodes_[b.index].value();
      if (nodes_[a.index].requires_grad) {
        auto& d = grad_buf(a.index);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * B[i];
      }
      if (nodes_[b.index].requires_grad) {
        auto& d = grad_buf(b.index);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * A[i];
      }
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::scale(Var a, T s) {
  const Tensor<T>& av = node(a).value();
  Tensor<T> out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  bool rg = node(a).requires_grad;
  Var o = push("scale", std::move(out), rg);
  if (rg) {
    nodes_[o.index].back = [this, a, o, s] {
      const auto& g = nodes_[o.index].grad;
      auto& d = grad_buf(a.index);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * s;
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::sum(Var a) {
  const Tensor<T>& av = node(a).value();
  T acc = 0;
  for (T v : av.values()) acc += v;
  bool rg = node(a).requires_grad;
  Var o = push("sum", Tensor<T>::scalar(acc), rg);
  if (rg) {
    nodes_[o.index].back = [this, a, o] {
      T g = nodes_[o.index].grad[0];
      for (auto& d : grad_buf(a.index)) d += g;
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor<T>& av = node(a).value();
  require_rank2(av, "slice_rows");
  if (begin + count > av.rows()) {
    throw DimensionError("row slice [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " +
                         shape_to_string(av.shape()));
  }
  const std::size_t n = av.cols();
  Tensor<T> out(Shape{count, n});
  std::copy_n(av.data() + begin * n, count * n, out.data());
  bool rg = node(a).requires_grad;
  Var o = push("slice_rows", std::move(out), rg);
  if (rg) {
    nodes_[o.index].back = [this, a, o, begin, count, n] {
      const auto& g = nodes_[o.index].grad;
      auto& d = grad_buf(a.index);
      for (std::size_t i = 0; i < count * n; ++i) d[begin * n + i] += g[i];
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::embedding(Var table, std::span<const int> ids) {
  const Tensor<T>& tv = node(table).value();
  require_rank2(tv, "embedding");
  const std::size_t vocab = tv.rows(), dim = tv.cols();
  Tensor<T> out(Shape{ids.size(), dim});
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] < 0 || static_cast<std::size_t>(ids[t]) >= vocab) {
      throw InputError("token id " + std::to_string(ids[t]) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    std::copy_n(tv.data() + ids[t] * dim, dim, out.data() + t * dim);
  }
  bool rg = node(table).requires_grad;
  Var o = push("embedding", std::move(out), rg);
  if (rg) {
    std::vector<int> saved(ids.begin(), ids.end());
    nodes_[o.index].back = [this, table, o, saved = std::move(saved), dim] {
      const auto& g = nodes_[o.index].grad;
      auto& d = grad_buf(table.index);
      for (std::size_t t = 0; t < saved.size(); ++t)
        for (std::size_t c = 0; c < dim; ++c) d[saved[t] * dim + c] += g[t * dim + c];
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::rmsnorm_rows(Var x, Var gain, T eps) {
  const Tensor<T>& xv = node(x).value();
  const Tensor<T>& gv = node(gain).value();
  const std::size_t rows = xv.rows(), d = xv.cols();
  if (d == 0 || gv.size() != d) {
    throw DimensionError("rmsnorm gain has " + std::to_string(gv.size()) +
                         " entries for rows of " + std::to_string(d));
  }
  Tensor<T> out(xv.shape());
  std::vector<T> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xv.data() + r * d;
    T ms = 0;
    for (std::size_t c = 0; c < d; ++c) ms += in[c] * in[c];
    ms /= static_cast<T>(d);
    inv_rms[r] = T{1} / std::sqrt(ms + eps);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = in[c] * inv_rms[r] * gv[c];
  }
  bool rg = node(x).requires_grad || node(gain).requires_grad;
  Var o = push("rmsnorm", std::move(out), rg);
  if (rg) {
    nodes_[o.index].back = [this, x, gain, o, inv_rms = std::move(inv_rms), rows, d] {
      const auto& g = nodes_[o.index].grad;
      const Tensor<T>& X = nodes_[x.index].value();
      const Tensor<T>& G = nodes_[gain.index].value();
      const bool gx = nodes_[x.index].requires_grad;
      const bool gg = nodes_[gain.index].requires_grad;
      std::vector<T> xh(d), dxh(d);
      for (std::size_t r = 0; r < rows; ++r) {
        T dot = 0;
        for (std::size_t c = 0; c < d; ++c) {
          xh[c] = X[r * d + c] * inv_rms[r];
          dxh[c] = g[r * d + c] * G[c];
          dot += dxh[c] * xh[c];
        }
        dot /= static_cast<T>(d);
        if (gg) {
          auto& dg = grad_buf(gain.index);
          for (std::size_t c = 0; c < d; ++c) dg[c] += g[r * d + c] * xh[c];
        }
        if (gx) {
          auto& dx = grad_buf(x.index);
          for (std::size_t c = 0; c < d; ++c)
            dx[r * d + c] += inv_rms[r] * (dxh[c] - xh[c] * dot);
        }
      }
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::swiglu(Var gate, Var up) {
  const Tensor<T>& gv = node(gate).value();
  const Tensor<T>& uv = node(up).value();
  if (gv.shape() != uv.shape()) {
    throw DimensionError("swiglu gate/up shapes differ: " + shape_to_string(gv.shape()) +
                         " vs " + shape_to_string(uv.shape()));
  }
  Tensor<T> out(gv.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    T s = T{1} / (T{1} + std::exp(-gv[i]));
    out[i] = gv[i] * s * uv[i];
  }
  bool rg = node(gate).requires_grad || node(up).requires_grad;
  Var o = push("swiglu", std::move(out), rg);
  if (rg) {
    nodes_[o.index].back = [this, gate, up, o] {
      const auto& g = nodes_[o.index].grad;
      const Tensor<T>& G = nodes_[gate.index].value();
      const Tensor<T>& U = nodes_[up.index].value();
      const bool gg = nodes_[gate.index].requires_grad;
      const bool gu = nodes_[up.index].requires_grad;
      for (std::size_t i = 0; i < G.size(); ++i) {
        T s = T{1} / (T{1} + std::exp(-G[i]));
        if (gg) grad_buf(gate.index)[i] += g[i] * U[i] * s * (T{1} + G[i] * (T{1} - s));
        if (gu) grad_buf(up.index)[i] += g[i] * G[i] * s;
      }
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::rotary(Var x, std::size_t head_dim,
                                      std::span<const std::size_t> positions,
                                      double base) {
  const Tensor<T>& xv = node(x).value();
  require_rank2(xv, "rotary");
  if (head_dim == 0 || head_dim % 2 != 0) {
    throw ConfigError("rotary head dimension must be even, got " +
                      std::to_string(head_dim));
  }
  if (xv.cols() % head_dim != 0) {
    throw DimensionError("rotary width " + std::to_string(xv.cols()) +
                         " is not a multiple of head dimension " +
                         std::to_string(head_dim));
  }
  if (positions.size() != xv.rows()) {
    throw DimensionError("rotary got " + std::to_string(positions.size()) +
                         " positions for " + std::to_string(xv.rows()) + " rows");
  }
  const std::size_t rows = xv.rows(), width = xv.cols(), half = head_dim / 2;
  std::vector<T> cos_t(rows * half), sin_t(rows * half);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < half; ++j) {
      double theta = std::pow(base, -2.0 * static_cast<double>(j) /
                                        static_cast<double>(head_dim));
      double angle = static_cast<double>(positions[r]) * theta;
      cos_t[r * half + j] = static_cast<T>(std::cos(angle));
      sin_t[r * half + j] = static_cast<T>(std::sin(angle));
    }
  }
  Tensor<T> out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t h0 = 0; h0 < width; h0 += head_dim) {
      for (std::size_t j = 0; j < half; ++j) {
        std::size_t i0 = r * width + h0 + 2 * j;
        T c = cos_t[r * half + j], s = sin_t[r * half + j];
        T a = xv[i0], b = xv[i0 + 1];
        out[i0] = a * c - b * s;
        out[i0 + 1] = a * s + b * c;
      }
    }
  }
  bool rg = node(x).requires_grad;
  Var o = push("rotary", std::move(out), rg);
  if (rg) {
    nodes_[o.index].back = [this, x, o, rows, width, half, head_dim,
                            cos_t = std::move(cos_t), sin_t = std::move(sin_t)] {
      const auto& g = nodes_[o.index].grad;
      auto& d = grad_buf(x.index);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t h0 = 0; h0 < width; h0 += head_dim) {
          for (std::size_t j = 0; j < half; ++j) {
            std::size_t i0 = r * width + h0 + 2 * j;
            T c = cos_t[r * half + j], s = sin_t[r * half + j];
            d[i0] += g[i0] * c + g[i0 + 1] * s;
            d[i0 + 1] += -g[i0] * s + g[i0 + 1] * c;
          }
        }
      }
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::attention(Var q, Var k, Var v, std::size_t n_heads,
                                         std::size_t n_kv_groups, bool causal) {
  const Tensor<T>& qv = node(q).value();
  const Tensor<T>& kv = node(k).value();
  const Tensor<T>& vv = node(v).value();
  require_rank2(qv, "attention");
  require_rank2(kv, "attention");
  require_rank2(vv, "attention");
  if (n_heads == 0 || n_kv_groups == 0 || n_heads % n_kv_groups != 0) {
    throw ConfigError("attention heads " + std::to_string(n_heads) +
                      " not divisible into " + std::to_string(n_kv_groups) + " groups");
  }
  if (qv.cols() % n_heads != 0) {
    throw DimensionError("query width " + std::to_string(qv.cols()) +
                         " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = qv.cols() / n_heads;
  const std::size_t tq = qv.rows(), tk = kv.rows();
  const std::size_t dv = vv.cols() / n_kv_groups;
  if (kv.cols() != n_kv_groups * dh || vv.cols() != n_kv_groups * dv || dv == 0 ||
      vv.rows() != tk) {
    throw DimensionError("key/value shapes " + shape_to_string(kv.shape()) + ", " +
                         shape_to_string(vv.shape()) + " do not match " +
                         std::to_string(n_kv_groups) + " key groups of width " +
                         std::to_string(dh));
  }
  if (causal && tq != tk) throw DimensionError("causal attention needs square scores");
  const std::size_t per_group = n_heads / n_kv_groups;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));

  std::vector<RowMat<T>> probs(n_heads);
  Tensor<T> out(Shape{tq, n_heads * dv});
  auto Q = qv.mat();
  auto K = kv.mat();
  auto V = vv.mat();
  auto O = out.mat();
  for (std::size_t h = 0; h < n_heads; ++h) {
    const std::size_t grp = h / per_group;
    RowMat<T> S = (Q.middleCols(h * dh, dh) * K.middleCols(grp * dh, dh).transpose()) *
                  inv_sqrt;
    for (std::size_t t = 0; t < tq; ++t) {
      const std::size_t n_vis = causal ? t + 1 : tk;
      T mx = S.row(t).head(n_vis).maxCoeff();
      T total = 0;
      for (std::size_t s = 0; s < n_vis; ++s) {
        S(t, s) = std::exp(S(t, s) - mx);
        total += S(t, s);
      }
      for (std::size_t s = 0; s < n_vis; ++s) S(t, s) /= total;
      for (std::size_t s = n_vis; s < tk; ++s) S(t, s) = 0;
    }
    O.middleCols(h * dv, dv).noalias() = S * V.middleCols(grp * dv, dv);
    probs[h] = std::move(S);
  }
  bool rg = node(q).requires_grad || node(k).requires_grad || node(v).requires_grad;
  Var o = push("attention", std::move(out), rg);
  if (rg) {
    nodes_[o.index].back = [this, q, k, v, o, n_heads, per_group, dh, dv, tq, tk, inv_sqrt,
                            probs = std::move(probs)] {
      const Tensor<T>& Qt = nodes_[q.index].value();
      const Tensor<T>& Kt = nodes_[k.index].value();
      const Tensor<T>& Vt = nodes_[v.index].value();
      auto dO = as_mat(nodes_[o.index].grad, tq, n_heads * dv);
      const bool gq = nodes_[q.index].requires_grad;
      const bool gk = nodes_[k.index].requires_grad;
      const bool gv = nodes_[v.index].requires_grad;
      for (std::size_t h = 0; h < n_heads; ++h) {
        const std::size_t grp = h / per_group;
        const RowMat<T>& P = probs[h];
        auto dOh = dO.middleCols(h * dv, dv);
        if (gv) {
          as_mat(grad_buf(v.index), tk, Vt.cols()).middleCols(grp * dv, dv).noalias() +=
              P.transpose() * dOh;
        }
        if (!gq && !gk) continue;
        RowMat<T> dP = dOh * Vt.mat().middleCols(grp * dv, dv).transpose();
        // dS = P ⊙ (dP − rowsum(P ⊙ dP)); masked entries have P = 0.
        RowMat<T> dS = P.cwiseProduct(dP);
        Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = dS.rowwise().sum();
        dS -= P.cwiseProduct(rowdot.replicate(1, tk));
        dS *= inv_sqrt;
        if (gq) {
          as_mat(grad_buf(q.index), tq, Qt.cols()).middleCols(h * dh, dh).noalias() +=
              dS * Kt.mat().middleCols(grp * dh, dh);
        }
        if (gk) {
          as_mat(grad_buf(k.index), tk, Kt.cols()).middleCols(grp * dh, dh).noalias() +=
              dS.transpose() * Qt.mat().middleCols(h * dh, dh);
        }
      }
    };
  }
  return o;
}

template <typename T>
typename Tape<T>::Var Tape<T>::cross_entropy(Var logits, std::span<const int> targets,
                                             std::span<const std::uint8_t> mask) {
  const Tensor<T>& lv = node(logits).value();
  require_rank2(lv, "cross_entropy");
  const std::size_t rows = lv.rows(), n = lv.cols();
  if (targets.size() != rows || mask.size() != rows) {
    throw DimensionError("cross_entropy got " + std::to_string(targets.size()) +
                         " targets and " + std::to_string(mask.size()) +
                         " mask entries for " + std::to_string(rows) + " rows");
  }
  std::size_t n_active = 0;
  for (auto m : mask) n_active += (m != 0);
  if (n_active == 0) throw InputError("empty target: every position is masked out");

  std::vector<T> probs(rows * n, T{0});
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (!mask[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= n) {
      throw InputError("target id " + std::to_string(targets[r]) + " outside vocabulary");
    }
    const T* row = lv.data() + r * n;
    T mx = *std::max_element(row, row + n);
    T z = 0;
    for (std::size_t c = 0; c < n; ++c) {
      probs[r * n + c] = std::exp(row[c] - mx);
      z += probs[r * n + c];
    }
    for (std::size_t c = 0; c < n; ++c) probs[r * n + c] /= z;
    total += -(static_cast<double>(row[targets[r]] - mx) - std::log(static_cast<double>(z)));
  }
  const T inv_active = T{1} / static_cast<T>(n_active);
  bool rg = node(logits).requires_grad;
  Var o = push("cross_entropy",
               Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(n_active))), rg);
  if (rg) {
    std::vector<int> tgt(targets.begin(), targets.end());
    std::vector<std::uint8_t> msk(mask.begin(), mask.end());
    nodes_[o.index].back = [this, logits, o, rows, n, inv_active, probs = std::move(probs),
                            tgt = std::move(tgt), msk = std::move(msk)] {
      T g = nodes_[o.index].grad[0] * inv_active;
      auto& d = grad_buf(logits.index);
      for (std::size_t r = 0; r < rows; ++r) {
        if (!msk[r]) continue;
        for (std::size_t c = 0; c < n; ++c) d[r * n + c] += g * probs[r * n + c];
        d[r * n + tgt[r]] -= g;
      }
    };
  }
  return o;
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return node(v).value();
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
  return node(v).requires_grad;
}

template <typename T>
const std::vector<T>* Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
const std::vector<T>* Tape<T>::grad_of(const Tensor<T>& t) const {
  auto it = leaves_.find(&t);
  if (it == leaves_.end()) return nullptr;
  const Node& n = nodes_[it->second];
  return n.grad.empty() ? nullptr : &n.grad;
}

template <typename T>
void Tape<T>::backward(Var loss) {
  Node& root = node(loss);
  if (root.value().size() != 1) {
    throw UsageError("backward needs a scalar loss, got shape " +
                     shape_to_string(root.value().shape()));
  }
  for (auto& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), T{0});
  trace_.clear();
  if (!root.requires_grad) return;
  grad_buf(loss.index)[0] = T{1};
  for (std::size_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty() || !n.back) continue;
    n.back();
    trace_.push_back(i);
  }
  for (auto& n : nodes_) {
    if (n.sink && n.requires_grad && !n.grad.empty()) {
      auto& slot = n.sink->grad_slot();
      for (std::size_t i = 0; i < slot.size(); ++i) slot[i] += n.grad[i];
    }
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace dpfl
