#include "gassip/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gassip {

namespace {

void check_edges(const DirectedEdges& edges, std::size_t num_weights, Eigen::Index num_src, Eigen::Index num_dst) {
  if (edges.src.size() != edges.dst.size()) throw std::invalid_argument("spmm: src/dst length mismatch");
  if (num_weights != edges.size()) throw std::invalid_argument("spmm: one weight per edge required");
  for (std::size_t e = 0; e < edges.size(); ++e) {
    if (edges.src[e] < 0 || edges.src[e] >= num_src || edges.dst[e] < 0 || edges.dst[e] >= num_dst) {
      throw std::out_of_range("spmm: edge " + std::to_string(e) + " endpoint out of range");
    }
  }
}

}  // namespace

Matrix spmm(const DirectedEdges& edges, std::span<const double> weights, const Matrix& x) {
  check_edges(edges, weights.size(), x.rows(), x.rows());
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    out.row(edges.dst[e]).noalias() += weights[e] * x.row(edges.src[e]);
  }
  return out;
}

Matrix spmm_transposed(const DirectedEdges& edges, std::span<const double> weights, const Matrix& g,
                       Eigen::Index num_rows) {
  check_edges(edges, weights.size(), num_rows, g.rows());
  Matrix out = Matrix::Zero(num_rows, g.cols());
  for (std::size_t e = 0; e < edges.size(); ++e) {
    out.row(edges.src[e]).noalias() += weights[e] * g.row(edges.dst[e]);
  }
  return out;
}

std::vector<double> softmax_vec(std::span<const double> v) {
  std::vector<double> out(v.size());
  if (v.empty()) return out;
  const double mx = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

double sigmoid(double s) {
  if (s >= 0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

double binary_entropy(double m) {
  double h = 0.0;
  if (m > 0.0) h -= m * std::log(m);
  if (m < 1.0) h -= (1.0 - m) * std::log1p(-m);
  return h;
}

double weighted_cross_entropy(const Matrix& logits, std::span<const int> targets, std::span<const NodeId> nodes,
                              std::span<const double> weights) {
  if (nodes.empty()) throw std::invalid_argument("weighted_cross_entropy: empty node set");
  if (weights.size() != nodes.size()) throw std::invalid_argument("weighted_cross_entropy: weights/nodes mismatch");
  double loss = 0.0;
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto row = logits.row(nodes[k]);
    const int t = targets[static_cast<std::size_t>(nodes[k])];
    if (t < 0 || t >= logits.cols()) throw std::out_of_range("weighted_cross_entropy: invalid target class");
    const double mx = row.maxCoeff();
    const double lse = mx + std::log((row.array() - mx).exp().sum());
    loss += weights[k] * (lse - row(t));
  }
  return loss;
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout_mask: rate must be in [0, 1)");
  Matrix mask(rows, cols);
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix w(rows, cols);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = rng.uniform(-bound, bound);
  return w;
}

std::vector<int> row_argmax(const Matrix& m) {
  std::vector<int> out(static_cast<std::size_t>(m.rows()), 0);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    int best = 0;
    for (Eigen::Index c = 1; c < m.cols(); ++c) {
      if (m(i, c) > m(i, best)) best = static_cast<int>(c);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace gassip
