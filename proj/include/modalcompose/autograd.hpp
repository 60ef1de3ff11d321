#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modalcompose/tensor.hpp"

namespace modalcompose {

// Handle to a node of a Graph. Only meaningful for the graph that issued it.
struct Var {
  std::size_t id = 0;
};

/// Tape of tensor operations with reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so reverse iteration over the tape
/// is a valid topological order for backpropagation. Parameter leaves refer to
/// the owning ParamSet's storage without copying; the ParamSet must outlive the
/// graph and must not be modified while the graph is in use.
///
/// A graph built with `record_gradients = false` evaluates the same kernels but
/// keeps no backward closures; it is the inference path.
///
/// Every op checks its result for NaN/Inf and throws NumericError naming the op.
class Graph {
 public:
  explicit Graph(bool record_gradients = true) : record_(record_gradients) {}

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var param(const ParamSet& set, const std::string& name);

  const Tensor& value(Var v) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }

  // [m x k] * [k x n]
  Var matmul(Var a, Var b);
  // x [m x n] plus a bias broadcast over rows; bias is [n] or [1 x n].
  Var add_row(Var x, Var bias);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double s);
  Var tanh(Var x);
  Var relu(Var x);
  Var concat_cols(std::span<const Var> parts);
  Var slice_cols(Var x, std::size_t begin, std::size_t count);
  // x [m x n] with row r scaled by s[r]; s is [m x 1].
  Var mul_col(Var x, Var s);
  Var softmax_rows(Var x);
  Var sum(Var x);
  Var mean(Var x);
  // (1/m) * sum_r ||pred_r - target_r||^2 for [m x n] operands.
  Var mean_sq_row_norm(Var pred, Var target);

  // Gradients of the scalar `loss` with respect to every parameter of each
  // target set. Target gradient slots are overwritten, never accumulated;
  // parameters the loss does not depend on receive exactly zero.
  void backward(Var loss, std::span<ParamSet* const> targets);
  void backward(Var loss, ParamSet& target);

 private:
  struct Node {
    Tensor value;
    const Tensor* ref = nullptr;
    const ParamSet* owner = nullptr;
    std::string name;
    bool requires_grad = false;
    std::function<void(Graph&, std::size_t)> back;
  };

  Var push(Tensor value, std::vector<std::size_t> inputs, const char* op,
           std::function<void(Graph&, std::size_t)> back);
  bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  Tensor& grad(std::size_t id) { return grads_[id]; }
  const Node& node(Var v) const;

  bool record_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::map<std::pair<const ParamSet*, std::string>, std::size_t> param_ids_;
};

}  // namespace modalcompose
