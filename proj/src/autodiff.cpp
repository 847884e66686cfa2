#include "gassip/autodiff.hpp"

#include "gassip/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace gassip {
namespace ad {

const Matrix& Var::value() const { return tape->value(*this); }

Var Tape::constant(Matrix value) {
  nodes_.push_back(Node{std::move(value), {}, false, nullptr, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::param(Param& p) {
  nodes_.push_back(Node{p.value, {}, true, &p, {}});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Matrix value, std::initializer_list<Var> inputs, Backward backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    if (v.tape != this) throw std::invalid_argument("Tape::record: input from another tape");
    needs = needs || nodes_[v.id].needs_grad;
  }
  if (!value.allFinite()) throw NumericalError("non-finite value recorded on tape");
  nodes_.push_back(Node{std::move(value), {}, needs, nullptr, needs ? std::move(backward) : Backward{}});
  return Var{this, nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw std::invalid_argument("Tape::backward: loss from another tape");
  const Matrix& lv = nodes_[loss.id].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw std::invalid_argument("Tape::backward: loss must be a 1x1 scalar");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, n.grad, n.value);
    }
  }
}

namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
  }
}

void require_column(Var v, std::size_t n, const char* op) {
  if (v.cols() != 1 || static_cast<std::size_t>(v.rows()) != n) {
    throw std::invalid_argument(std::string(op) + ": expected an " + std::to_string(n) + " x 1 column");
  }
}

}  // namespace

Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Matrix out = a.value() * b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.needs_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.needs_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.tape->record(a.value() + b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.tape->record(a.value() - b.value(), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    if (t.needs_grad(b)) t.accumulate(b, -g);
  });
}

Var add_row(Var x, Var b) {
  if (b.rows() != 1 || b.cols() != x.cols()) throw std::invalid_argument("add_row: bias must be 1 x cols");
  Matrix out = x.value().rowwise() + b.value().row(0);
  return x.tape->record(std::move(out), {x, b}, [x, b](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(x, g);
    if (t.needs_grad(b)) t.accumulate(b, g.colwise().sum());
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g, const Matrix&) {
    if (t.needs_grad(a)) t.accumulate(a, g.cwiseProduct(t.value(b)));
    if (t.needs_grad(b)) t.accumulate(b, g.cwiseProduct(t.value(a)));
  });
}

Var scale(Var a, double s) {
  return a.tape->record(a.value() * s, {a}, [a, s](Tape& t, const Matrix& g, const Matrix&) { t.accumulate(a, g * s); });
}

Var scale_by_entry(Var x, Var s, Eigen::Index idx) {
  if (s.rows() != 1 || idx < 0 || idx >= s.cols()) throw std::invalid_argument("scale_by_entry: bad index");
  const double factor = s.value()(0, idx);
  return x.tape->record(x.value() * factor, {x, s}, [x, s, idx, factor](Tape& t, const Matrix& g, const Matrix&) {
    if (t.needs_grad(x)) t.accumulate(x, g * factor);
    if (t.needs_grad(s)) {
      Matrix gs = Matrix::Zero(1, t.value(s).cols());
      gs(0, idx) = g.cwiseProduct(t.value(x)).sum();
      t.accumulate(s, gs);
    }
  });
}

Var sub_scalar(Var a, Var s) {
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("sub_scalar: s must be 1x1");
  Matrix out = a.value().array() - s.value()(0, 0);
  return a.tape->record(std::move(out), {a, s}, [a, s](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, g);
    if (t.needs_grad(s)) t.accumulate(s, Matrix::Constant(1, 1, -g.sum()));
  });
}

Var sigmoid(Var a) {
  Matrix out = a.value().unaryExpr([](double v) { return gassip::sigmoid(v); });
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    t.accumulate(a, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var relu(Var a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix& x = t.value(a);
    t.accumulate(a, (x.array() > 0.0).select(g, 0.0));
  });
}

Var leaky_relu(Var a, double slope) {
  Matrix out = a.value().unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
  return a.tape->record(std::move(out), {a}, [a, slope](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix& x = t.value(a);
    t.accumulate(a, (x.array() > 0.0).select(g, slope * g));
  });
}

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto p = softmax_vec(std::span<const double>(x.row(i).data(), static_cast<std::size_t>(x.cols())));
    for (Eigen::Index c = 0; c < x.cols(); ++c) out(i, c) = p[static_cast<std::size_t>(c)];
  }
  return a.tape->record(std::move(out), {a}, [a](Tape& t, const Matrix& g, const Matrix& y) {
    Matrix gx(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      const double dot = g.row(i).dot(y.row(i));
      gx.row(i) = y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
    t.accumulate(a, gx);
  });
}

Var sum(Var a) {
  return a.tape->record(Matrix::Constant(1, 1, a.value().sum()), {a}, [a](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, Matrix::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw std::invalid_argument("mean: empty input");
  return a.tape->record(Matrix::Constant(1, 1, a.value().sum() / n), {a}, [a, n](Tape& t, const Matrix& g, const Matrix&) {
    t.accumulate(a, Matrix::Constant(t.value(a).rows(), t.value(a).cols(), g(0, 0) / n));
  });
}

Var gather_rows(Var a, std::span<const NodeId> index) {
  const Matrix& x = a.value();
  std::vector<NodeId> idx(index.begin(), index.end());
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t k = 0; k < idx.size(); ++k) {
    if (idx[k] < 0 || idx[k] >= x.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(k)) = x.row(idx[k]);
  }
  return a.tape->record(std::move(out), {a}, [a, idx = std::move(idx)](Tape& t, const Matrix& g, const Matrix&) {
    Matrix ga = Matrix::Zero(t.value(a).rows(), t.value(a).cols());
    for (std::size_t k = 0; k < idx.size(); ++k) ga.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
    t.accumulate(a, ga);
  });
}

Var concat_rows(Var a, Var b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("concat_rows: column mismatch");
  Matrix out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a.value();
  out.bottomRows(b.rows()) = b.value();
  const Eigen::Index ra = a.rows();
  const Eigen::Index rb = b.rows();
  return a.tape->record(std::move(out), {a, b}, [a, b, ra, rb](Tape& t, const Matrix& g, const Matrix&) {
    if (t.needs_grad(a)) t.accumulate(a, g.topRows(ra));
    if (t.needs_grad(b)) t.accumulate(b, g.bottomRows(rb));
  });
}

Var spmm(const DirectedEdges& edges, Var w, Var x) {
  require_column(w, edges.size(), "spmm");
  Matrix out = gassip::spmm(edges, std::span<const double>(w.value().data(), edges.size()), x.value());
  // The edge list must outlive the tape; callers keep it in a MessageGraph.
  const DirectedEdges* ep = &edges;
  return x.tape->record(std::move(out), {w, x}, [ep, w, x](Tape& t, const Matrix& g, const Matrix&) {
    const DirectedEdges& e = *ep;
    const Matrix& wv = t.value(w);
    const Matrix& xv = t.value(x);
    if (t.needs_grad(x)) {
      t.accumulate(x, spmm_transposed(e, std::span<const double>(wv.data(), e.size()), g, xv.rows()));
    }
    if (t.needs_grad(w)) {
      Matrix gw(static_cast<Eigen::Index>(e.size()), 1);
      for (std::size_t k = 0; k < e.size(); ++k) {
        gw(static_cast<Eigen::Index>(k), 0) = g.row(e.dst[k]).dot(xv.row(e.src[k]));
      }
      t.accumulate(w, gw);
    }
  });
}

Var row_div_safe(Var num, Var den) {
  if (den.cols() != 1 || den.rows() != num.rows()) throw std::invalid_argument("row_div_safe: den must be N x 1");
  const Matrix& n = num.value();
  const Matrix& d = den.value();
  Matrix out = Matrix::Zero(n.rows(), n.cols());
  for (Eigen::Index i = 0; i < n.rows(); ++i) {
    if (d(i, 0) != 0.0) out.row(i) = n.row(i) / d(i, 0);
  }
  return num.tape->record(std::move(out), {num, den}, [num, den](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix& nv = t.value(num);
    const Matrix& dv = t.value(den);
    Matrix gn = Matrix::Zero(nv.rows(), nv.cols());
    Matrix gd = Matrix::Zero(dv.rows(), 1);
    for (Eigen::Index i = 0; i < nv.rows(); ++i) {
      const double di = dv(i, 0);
      if (di == 0.0) continue;
      gn.row(i) = g.row(i) / di;
      gd(i, 0) = -g.row(i).dot(nv.row(i)) / (di * di);
    }
    if (t.needs_grad(num)) t.accumulate(num, gn);
    if (t.needs_grad(den)) t.accumulate(den, gd);
  });
}

Var edge_softmax(const DirectedEdges& edges, Eigen::Index num_nodes, Var scores, Var mask) {
  require_column(scores, edges.size(), "edge_softmax");
  require_column(mask, edges.size(), "edge_softmax");
  const Matrix& s = scores.value();
  const Matrix& m = mask.value();
  const auto n = static_cast<std::size_t>(num_nodes);
  std::vector<double> group_max(n, -std::numeric_limits<double>::infinity());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto d = static_cast<std::size_t>(edges.dst[e]);
    group_max[d] = std::max(group_max[d], s(static_cast<Eigen::Index>(e), 0));
  }
  // ex_e = exp(s_e - max_group); total_g = sum m_e ex_e.
  Matrix ex(static_cast<Eigen::Index>(edges.size()), 1);
  std::vector<double> total(n, 0.0);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto k = static_cast<Eigen::Index>(e);
    const auto d = static_cast<std::size_t>(edges.dst[e]);
    ex(k, 0) = std::exp(s(k, 0) - group_max[d]);
    total[d] += m(k, 0) * ex(k, 0);
  }
  Matrix out(static_cast<Eigen::Index>(edges.size()), 1);
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto k = static_cast<Eigen::Index>(e);
    const auto d = static_cast<std::size_t>(edges.dst[e]);
    if (!(total[d] > 0.0)) throw std::domain_error("edge_softmax: destination with zero mask mass");
    out(k, 0) = m(k, 0) * ex(k, 0) / total[d];
  }
  const DirectedEdges* ep = &edges;
  return scores.tape->record(
      std::move(out), {scores, mask},
      [ep, n, scores, mask, ex = std::move(ex), total = std::move(total)](Tape& t, const Matrix& g, const Matrix& y) {
        const DirectedEdges& e = *ep;
        std::vector<double> dot(n, 0.0);
        for (std::size_t k = 0; k < e.size(); ++k) {
          dot[static_cast<std::size_t>(e.dst[k])] += g(static_cast<Eigen::Index>(k), 0) * y(static_cast<Eigen::Index>(k), 0);
        }
        Matrix gs(static_cast<Eigen::Index>(e.size()), 1);
        Matrix gm(static_cast<Eigen::Index>(e.size()), 1);
        for (std::size_t k = 0; k < e.size(); ++k) {
          const auto i = static_cast<Eigen::Index>(k);
          const auto d = static_cast<std::size_t>(e.dst[k]);
          const double centered = g(i, 0) - dot[d];
          gs(i, 0) = y(i, 0) * centered;
          gm(i, 0) = ex(i, 0) / total[d] * centered;
        }
        if (t.needs_grad(scores)) t.accumulate(scores, gs);
        if (t.needs_grad(mask)) t.accumulate(mask, gm);
      });
}

Var weighted_cross_entropy(Var logits, std::span<const int> targets, std::span<const NodeId> nodes,
                           std::span<const double> weights) {
  const double loss = gassip::weighted_cross_entropy(logits.value(), targets, nodes, weights);
  std::vector<NodeId> nd(nodes.begin(), nodes.end());
  std::vector<double> wt(weights.begin(), weights.end());
  std::vector<int> tg;
  tg.reserve(nd.size());
  for (NodeId i : nd) tg.push_back(targets[static_cast<std::size_t>(i)]);
  return logits.tape->record(
      Matrix::Constant(1, 1, loss), {logits},
      [logits, nd = std::move(nd), wt = std::move(wt), tg = std::move(tg)](Tape& t, const Matrix& g, const Matrix&) {
        const Matrix& z = t.value(logits);
        Matrix gz = Matrix::Zero(z.rows(), z.cols());
        const double scale = g(0, 0);
        for (std::size_t k = 0; k < nd.size(); ++k) {
          const auto row = z.row(nd[k]);
          const auto p = softmax_vec(std::span<const double>(row.data(), static_cast<std::size_t>(z.cols())));
          for (Eigen::Index c = 0; c < z.cols(); ++c) {
            const double target = (c == tg[k]) ? 1.0 : 0.0;
            gz(nd[k], c) += scale * wt[k] * (p[static_cast<std::size_t>(c)] - target);
          }
        }
        t.accumulate(logits, gz);
      });
}

Var mean_binary_entropy(Var m) {
  const Matrix& x = m.value();
  if (x.size() == 0) return m.tape->constant(Matrix::Zero(1, 1));
  double h = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) h += binary_entropy(x.data()[i]);
  const double n = static_cast<double>(x.size());
  return m.tape->record(Matrix::Constant(1, 1, h / n), {m}, [m, n](Tape& t, const Matrix& g, const Matrix&) {
    const Matrix& v = t.value(m);
    // dH/dm = ln((1-m)/m), clamped so saturated entries (m rounded to 0 or 1) stay finite.
    Matrix gm = v.unaryExpr([](double p) {
      p = std::clamp(p, 1e-16, 1.0 - 1e-16);
      return std::log1p(-p) - std::log(p);
    });
    t.accumulate(m, gm * (g(0, 0) / n));
  });
}

}  // namespace ad
}  // namespace gassip
