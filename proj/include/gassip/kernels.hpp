#pragma once

#include "gassip/matrix.hpp"
#include "gassip/rng.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace gassip {

/// Directed edge list in message-passing orientation: a message flows src -> dst.
struct DirectedEdges {
  std::vector<NodeId> src;
  std::vector<NodeId> dst;

  std::size_t size() const { return src.size(); }
  void push_back(NodeId s, NodeId d) {
    src.push_back(s);
    dst.push_back(d);
  }
};

/// out[i] = sum over edges (j -> i) of weight * x[j]. Rows without incoming
/// edges stay zero. Edges are accumulated in list order.
Matrix spmm(const DirectedEdges& edges, std::span<const double> weights, const Matrix& x);

/// Transposed propagation: out[j] += weight * g[i] for each edge (j -> i).
Matrix spmm_transposed(const DirectedEdges& edges, std::span<const double> weights, const Matrix& g,
                       Eigen::Index num_rows);

std::vector<double> softmax_vec(std::span<const double> v);

double sigmoid(double s);

/// Elementwise binary entropy -(m ln m + (1-m) ln(1-m)), 0 at the endpoints.
double binary_entropy(double m);

/// sum_{i in nodes} weights[k] * (-log softmax(logits.row(nodes[k]))[targets[nodes[k]]]).
/// `weights` is aligned with `nodes`; targets is indexed by node id.
double weighted_cross_entropy(const Matrix& logits, std::span<const int> targets, std::span<const NodeId> nodes,
                              std::span<const double> weights);

/// Inverted-dropout multiplier: each entry 0 with probability `rate`, else
/// 1/(1-rate). Draws rows*cols uniforms in row-major order.
Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng);

/// Glorot/Xavier uniform in +-sqrt(6/(rows+cols)), row-major draw order.
Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Row argmax, ties to the lowest column.
std::vector<int> row_argmax(const Matrix& m);

}  // namespace gassip
