#include "gassip/operators.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace gassip {

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Linear: return "linear";
    case OpKind::GCN: return "gcn";
    case OpKind::SAGE: return "sage";
    case OpKind::GATLite: return "gat";
    case OpKind::ARMALite: return "arma";
  }
  return "?";
}

OpKind parse_op_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (OpKind k : kAllOpKinds) {
    if (op_name(k) == lower) return k;
  }
  throw std::invalid_argument("unknown operation '" + std::string(name) + "'");
}

std::vector<Param*> OpWeights::trainable() {
  std::vector<Param*> out;
  for (auto& t : tensors) {
    out.push_back(&t.weight);
    if (!t.fixed_mask) out.push_back(&t.score);
  }
  out.push_back(&bias);
  return out;
}

namespace {

struct Shape {
  Eigen::Index rows;
  Eigen::Index cols;
};

std::vector<Shape> tensor_shapes(OpKind kind, Eigen::Index in, Eigen::Index out) {
  switch (kind) {
    case OpKind::Linear:
    case OpKind::GCN: return {{in, out}};
    case OpKind::SAGE: return {{in, out}, {in, out}};
    case OpKind::GATLite: return {{in, out}, {out, 1}, {out, 1}};
    case OpKind::ARMALite: return {{in, out}, {out, out}, {in, out}};
  }
  return {};
}

ad::Var effective(ad::Tape& tape, MaskedTensor& t, Binding binding) {
  if (binding == Binding::Frozen) {
    Matrix mask = t.fixed_mask ? *t.fixed_mask : t.score.value.unaryExpr([](double s) { return sigmoid(s); }).eval();
    return tape.constant(t.weight.value.cwiseProduct(mask));
  }
  const ad::Var w = tape.param(t.weight);
  if (t.fixed_mask) return ad::mul(w, tape.constant(*t.fixed_mask));
  return ad::mul(w, ad::sigmoid(tape.param(t.score)));
}

ad::Var bias_var(ad::Tape& tape, Param& b, Binding binding) {
  return binding == Binding::Frozen ? tape.constant(b.value) : tape.param(b);
}

// Masked GCN propagation: self-loops with their fixed coefficient, then the
// directed edges with coefficient * mask.
ad::Var propagate(ad::Tape& tape, const MessageGraph& mg, ad::Var edge_mask, ad::Var h) {
  const ad::Var self = tape.constant(column(mg.self_coef));
  const ad::Var dir = ad::mul(tape.constant(column(mg.directed_coef)), edge_mask);
  return ad::spmm(mg.propagation, ad::concat_rows(self, dir), h);
}

}  // namespace

OpWeights init_op_weights(OpKind kind, Eigen::Index in_dim, Eigen::Index out_dim, double mask_init, Rng& rng,
                          const std::string& prefix) {
  if (in_dim <= 0 || out_dim <= 0) throw std::invalid_argument("init_op_weights: dimensions must be positive");
  OpWeights w;
  w.kind = kind;
  w.in_dim = in_dim;
  w.out_dim = out_dim;
  const std::string base = prefix + std::string(op_name(kind));
  std::size_t k = 0;
  for (const Shape& s : tensor_shapes(kind, in_dim, out_dim)) {
    const std::string name = base + ".w" + std::to_string(k++);
    Matrix init = glorot_uniform(s.rows, s.cols, rng);
    w.tensors.push_back(MaskedTensor{Param(name, std::move(init)),
                                     Param(name + ".score", Matrix::Constant(s.rows, s.cols, mask_init)), std::nullopt});
  }
  w.bias = Param(base + ".bias", Matrix::Zero(1, out_dim));
  return w;
}

ad::Var op_forward(ad::Tape& tape, OpWeights& weights, ad::Var x, const MessageGraph& mg, ad::Var edge_mask,
                   Binding binding) {
  if (x.cols() != weights.in_dim) throw std::invalid_argument("op_forward: input width does not match operation");
  if (static_cast<std::size_t>(x.rows()) != mg.num_nodes) throw std::invalid_argument("op_forward: row count != nodes");
  if (edge_mask.cols() != 1 || static_cast<std::size_t>(edge_mask.rows()) != mg.directed.size()) {
    throw std::invalid_argument("op_forward: edge mask must be one column entry per directed edge");
  }
  const auto n = static_cast<Eigen::Index>(mg.num_nodes);
  auto& t = weights.tensors;
  ad::Var out;
  switch (weights.kind) {
    case OpKind::Linear: {
      out = ad::matmul(x, effective(tape, t[0], binding));
      break;
    }
    case OpKind::GCN: {
      out = propagate(tape, mg, edge_mask, ad::matmul(x, effective(tape, t[0], binding)));
      break;
    }
    case OpKind::SAGE: {
      const ad::Var self = ad::matmul(x, effective(tape, t[0], binding));
      const ad::Var h = ad::matmul(x, effective(tape, t[1], binding));
      const ad::Var num = ad::spmm(mg.directed, edge_mask, h);
      const ad::Var den = ad::spmm(mg.directed, edge_mask, tape.constant(Matrix::Ones(n, 1)));
      out = ad::add(self, ad::row_div_safe(num, den));
      break;
    }
    case OpKind::GATLite: {
      const ad::Var h = ad::matmul(x, effective(tape, t[0], binding));
      const ad::Var s_recv = ad::matmul(h, effective(tape, t[1], binding));
      const ad::Var s_send = ad::matmul(h, effective(tape, t[2], binding));
      const ad::Var scores = ad::leaky_relu(
          ad::add(ad::gather_rows(s_recv, mg.propagation.dst), ad::gather_rows(s_send, mg.propagation.src)), 0.2);
      const ad::Var mask = ad::concat_rows(tape.constant(Matrix::Ones(n, 1)), edge_mask);
      const ad::Var attn = ad::edge_softmax(mg.propagation, n, scores, mask);
      out = ad::spmm(mg.propagation, attn, h);
      break;
    }
    case OpKind::ARMALite: {
      const ad::Var h = ad::relu(propagate(tape, mg, edge_mask, ad::matmul(x, effective(tape, t[0], binding))));
      const ad::Var rec = propagate(tape, mg, edge_mask, ad::matmul(h, effective(tape, t[1], binding)));
      out = ad::add(rec, ad::matmul(x, effective(tape, t[2], binding)));
      break;
    }
  }
  return ad::add_row(out, bias_var(tape, weights.bias, binding));
}

std::size_t count_params(OpKind kind, Eigen::Index in_dim, Eigen::Index out_dim) {
  if (in_dim <= 0 || out_dim <= 0) throw std::invalid_argument("count_params: dimensions must be positive");
  std::size_t total = static_cast<std::size_t>(out_dim);
  for (const Shape& s : tensor_shapes(kind, in_dim, out_dim)) total += static_cast<std::size_t>(s.rows * s.cols);
  return total;
}

std::size_t count_params(OpKind kind, Eigen::Index in_dim, Eigen::Index out_dim, std::span<const Matrix> binary_masks) {
  const auto shapes = tensor_shapes(kind, in_dim, out_dim);
  if (binary_masks.size() != shapes.size()) throw std::invalid_argument("count_params: one mask per tensor required");
  std::size_t total = static_cast<std::size_t>(out_dim);
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const Matrix& m = binary_masks[k];
    if (m.rows() != shapes[k].rows || m.cols() != shapes[k].cols) throw std::invalid_argument("count_params: mask shape mismatch");
    total += static_cast<std::size_t>((m.array() == 1.0).count());
  }
  return total;
}

std::vector<Matrix> binarize_weights(const OpWeights& weights) {
  std::vector<Matrix> out;
  for (const auto& t : weights.tensors) {
    out.push_back((t.score.value.array() > 0.0).cast<double>().matrix());
  }
  return out;
}

}  // namespace gassip
