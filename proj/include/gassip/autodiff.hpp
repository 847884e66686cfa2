#pragma once

#include "gassip/kernels.hpp"
#include "gassip/matrix.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace gassip {

/// A trainable tensor with its accumulated gradient.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;

  Param() = default;
  Param(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

namespace ad {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are recorded in evaluation order; `backward`
/// walks them in reverse and accumulates into the grad of every bound Param.
class Tape {
 public:
  /// Receives d(loss)/d(out) and the node's own output value.
  using Backward = std::function<void(Tape&, const Matrix& grad_out, const Matrix& out)>;

  Var constant(Matrix value);
  /// Leaf bound to `p`; backward adds d(loss)/d(p.value) into p.grad.
  Var param(Param& p);

  Var record(Matrix value, std::initializer_list<Var> inputs, Backward backward);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }

  /// Adds `g` into the gradient slot of `v` (no-op for constants).
  void accumulate(Var v, const Matrix& g);

  /// Seeds d(loss)/d(loss) = 1 and propagates. Throws unless loss is 1x1.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Param* param = nullptr;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

// Differentiable operations. Shapes are checked and mismatches throw
// std::invalid_argument.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// x (N x D) + b (1 x D) broadcast over rows.
Var add_row(Var x, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// x * s(0, idx) for a 1 x n row vector s.
Var scale_by_entry(Var x, Var s, Eigen::Index idx);
/// a - s for a 1x1 scalar s, broadcast to every entry.
Var sub_scalar(Var a, Var s);
Var sigmoid(Var a);
Var relu(Var a);
Var leaky_relu(Var a, double slope);
/// Row-wise softmax.
Var softmax_rows(Var a);
Var sum(Var a);
Var mean(Var a);
Var gather_rows(Var a, std::span<const NodeId> index);
Var concat_rows(Var a, Var b);
/// out[dst] += w[e] * x[src] over the edge list; w is an E x 1 column.
Var spmm(const DirectedEdges& edges, Var w, Var x);
/// num.row(i) / den(i, 0), or zero where den(i, 0) == 0.
Var row_div_safe(Var num, Var den);
/// Per-destination masked softmax over edges: w_e = m_e exp(s_e) / sum_{f: dst_f = dst_e} m_f exp(s_f).
/// scores and mask are E x 1 columns; every destination group must have positive mask mass.
Var edge_softmax(const DirectedEdges& edges, Eigen::Index num_nodes, Var scores, Var mask);
/// sum_k weights[k] * CE(logits.row(nodes[k]), targets[nodes[k]]); returns 1x1.
Var weighted_cross_entropy(Var logits, std::span<const int> targets, std::span<const NodeId> nodes,
                           std::span<const double> weights);
/// Mean binary entropy over all entries of a (0,1)-valued matrix; returns 1x1.
Var mean_binary_entropy(Var m);

}  // namespace ad

/// Runs backward from `loss`, accumulating into the grads of every Param bound
/// on the tape. Grads are not zeroed first, so repeated calls accumulate.
inline void gradients(ad::Tape& tape, ad::Var loss) { tape.backward(loss); }

}  // namespace gassip
