#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "dpfl/tensor.hpp"

namespace dpfl {

// Linear reverse-mode tape. Every op appends one node holding its value and a
// closure that pushes the node's gradient into its inputs; backward() replays
// the closures in exact reverse order of recording. Nodes only carry gradient
// when some input leaf is trainable, so frozen weights cost no backward work.
//
// A tape and the tensors it references belong to one thread at a time.
template <typename T>
class Tape {
 public:
  struct Var {
    std::uint64_t tape_id = 0;
    std::size_t index = 0;
  };

  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Reference an existing tensor without copying it. The tensor must outlive
  // the tape. Gradient, if the tensor is trainable, stays on the tape.
  Var leaf(const Tensor<T>& t);
  // Like leaf(), and backward() also accumulates into t's grad slot.
  Var bind(Tensor<T>& t);
  Var constant(Tensor<T> value);

  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, T s);
  Var sum(Var a);
  // Rows [begin, begin + count) of a matrix.
  Var slice_rows(Var a, std::size_t begin, std::size_t count);
  Var embedding(Var table, std::span<const int> ids);
  Var rmsnorm_rows(Var x, Var gain, T eps);
  // silu(gate) ⊙ up
  Var swiglu(Var gate, Var up);
  // Rotates consecutive coordinate pairs of every head block in each row by
  // position · base^(-2j/head_dim).
  Var rotary(Var x, std::size_t head_dim, std::span<const std::size_t> positions,
             double base);
  // Scaled dot-product attention with n_heads query heads sharing n_kv_groups
  // key/value heads; head i reads group i / (n_heads / n_kv_groups).
  Var attention(Var q, Var k, Var v, std::size_t n_heads, std::size_t n_kv_groups,
                bool causal);
  // Mean negative log-likelihood over rows whose mask entry is nonzero.
  Var cross_entropy(Var logits, std::span<const int> targets,
                    std::span<const std::uint8_t> mask);

  const Tensor<T>& value(Var v) const;
  bool requires_grad(Var v) const;
  // nullptr when the node carries no gradient.
  const std::vector<T>* grad(Var v) const;
  const std::vector<T>* grad_of(const Tensor<T>& t) const;

  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(std::size_t index) const { return nodes_[index].op; }
  // Node indices whose backward closure ran during the last backward().
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* ext = nullptr;
    Tensor<T>* sink = nullptr;
    bool requires_grad = false;
    std::vector<T> grad;
    std::function<void()> back;
    std::string op;
    const Tensor<T>& value() const { return ext ? *ext : owned; }
  };

  Node& node(Var v);
  const Node& node(Var v) const;
  std::vector<T>& grad_buf(std::size_t index);
  Var push(std::string op, Tensor<T> value, bool requires_grad);

  std::uint64_t id_;
  std::deque<Node> nodes_;
  std::unordered_map<const Tensor<T>*, std::size_t> leaves_;
  std::vector<std::size_t> trace_;
};

}  // namespace dpfl
