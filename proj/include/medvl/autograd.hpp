#pragma once

// A small reverse-mode tape over dense double matrices. Only nodes that
// (transitively) depend on a trainable Parameter carry gradients; frozen
// parameters and constants never receive any.

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "medvl/parameters.hpp"

namespace medvl {

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var constant(Matrix value);
  /// Leaf bound to a parameter; gradients flow into `p.grad` only when
  /// `p.trainable` is set at the time of the call.
  Var leaf(Parameter& p);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = seed on a 1x1 node and accumulates into every
  /// trainable parameter's grad.
  void backward(Var root, double seed = 1.0);

  // Op-construction interface.
  Var push(Matrix value, bool requires_grad, Backward backward);
  Matrix& grad(std::size_t id);
  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  void accumulate(Var v, const Matrix& g);

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

/// x * w^T, the layout of a (d_out x d_in) weight applied to row vectors.
Var matmul_nt(Tape& t, Var x, Var w);
Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
/// Adds a 1 x d row to every row of x.
Var add_row(Tape& t, Var x, Var row);
Var scale(Tape& t, Var x, double s);
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps = 1e-5);
/// tanh approximation.
Var gelu(Tape& t, Var x);
/// Multi-head scaled dot-product attention over rows; q, k, v are (T x d).
Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal);
Var concat_rows(Tape& t, std::span<const Var> parts);
Var gather_rows(Tape& t, Var table, std::span<const int> ids);
/// Row-major reshape.
Var reshape(Tape& t, Var x, Eigen::Index rows, Eigen::Index cols);
/// weight * sum of next-token negative log-likelihoods over rows whose label
/// is >= 0. Returns a 1x1 node.
Var weighted_nll(Tape& t, Var logits, std::span<const int> labels, double weight);

/// Numerically stable row softmax.
Matrix softmax_rows(const Matrix& logits);

}  // namespace medvl
