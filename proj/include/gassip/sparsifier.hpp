#pragma once

#include "gassip/supernet.hpp"

#include <nlohmann/json_fwd.hpp>

#include <functional>
#include <span>
#include <vector>

namespace gassip {

/// One learnable score per undirected edge plus a learnable threshold;
/// mask value M_G[e] = sigmoid(scores[e] - gamma), shared by both directions.
struct StructureMask {
  Param scores;  // E x 1
  Param gamma;   // 1 x 1

  std::size_t size() const { return static_cast<std::size_t>(scores.value.rows()); }
};

StructureMask make_structure_mask(std::size_t num_edges, double score_init = 3.0, double gamma_init = 0.0);

std::vector<double> mask_values(const StructureMask& mask);

/// sigmoid(S_G - gamma) on the tape (E x 1). With Binding::Trainable both
/// S_G and gamma are Param leaves.
ad::Var mask_var(ad::Tape& tape, StructureMask& mask, Binding binding);
/// Expands an undirected E x 1 mask to the 2E directed layout of `mg`.
ad::Var directed_mask(const MessageGraph& mg, ad::Var undirected);

nlohmann::json mask_to_json(const StructureMask& mask);
StructureMask mask_from_json(const nlohmann::json& j);

enum class LossNodeSet {
  All,     // every node, pseudo-labelled outside the training split
  Labeled  // training split only
};

enum class NodeView {
  LowerEndpoint,  // label divergence measured around the lower-indexed endpoint
  Symmetric       // mean of the divergence around both endpoints
};

enum class SmoothingScale {
  Absolute,  // denominator std + c
  Relative   // denominator std + c * mean_e |mean_K g_e|, invariant to the gradient scale
};

struct CurriculumConfig {
  std::size_t k = 2;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double beta = 0.001;
  double smoothing = 1.0;  // c in the confidence denominator std + c
  SmoothingScale smoothing_scale = SmoothingScale::Absolute;
  double eta = 0.01;
  LossNodeSet loss_nodes = LossNodeSet::All;
  NodeView node_view = NodeView::LowerEndpoint;
};

struct CurriculumState {
  bool has_cache = false;
  Matrix cached_logits;  // Z from the latest architecture-step forward
  Matrix cached_hidden;  // z_i, input of the last layer
  std::vector<int> pseudo_labels;
  std::vector<double> d_arch;      // per edge, std of the previous step's structure grads
  std::vector<double> d_node;      // per edge
  std::vector<double> d_combined;  // per edge
  std::vector<double> node_difficulty;
  IndexList loss_nodes;
  std::vector<double> node_weights;  // aligned with loss_nodes
};

/// y_i on the training split, argmax Z[i] (lowest class on ties) elsewhere.
std::vector<int> assign_pseudo_labels(const Matrix& logits, std::span<const int> labels, const Splits& splits);

/// cos(z_i, z_j) + lambda1 * (fraction of i's neighbors whose pseudo-label
/// differs from i's). Cosine with a zero vector is 0.
std::vector<double> node_view_difficulty(const SparseGraph& g, const Matrix& hidden, std::span<const int> pseudo_labels,
                                         double lambda1, NodeView view = NodeView::LowerEndpoint);

struct Difficulty {
  std::vector<double> edge;  // D_arch + lambda2 * D_node
  std::vector<double> node;  // mean over incident edges, 0 when isolated
};
Difficulty combine_difficulty(const SparseGraph& g, std::span<const double> d_arch, std::span<const double> d_node,
                              double lambda2);

/// softmax of the difficulties of the loss node set.
std::vector<double> node_weights(std::span<const double> difficulties);

/// Inputs of the structure loss that stay fixed during one curriculum step.
struct StructLossInputs {
  const Matrix* features = nullptr;
  std::span<const int> pseudo_labels;
  std::span<const NodeId> loss_nodes;
  std::span<const double> node_weights;
  double beta = 0.0;
};

/// sum_{i in S} theta_i CE(f_arch(A * M_G, X)[i], ybar_i) + beta * mean entropy(M_G).
/// Only S_G and gamma receive gradients.
ad::Var struct_loss(ad::Tape& tape, Supernet& net, const Architecture& arch, const MessageGraph& mg,
                    StructureMask& mask, const StructLossInputs& in);

struct StructureGradient {
  Matrix scores;  // dL/dS_G, E x 1
  double gamma = 0.0;
};

StructureGradient structure_gradient(Supernet& net, const Architecture& arch, const MessageGraph& mg,
                                     StructureMask& mask, const StructLossInputs& in);

struct StructureUpdate {
  std::vector<double> std_dev;  // population std of the K gradients, per edge
  Matrix score_step;            // amount subtracted from S_G
  double gamma_step = 0.0;      // amount subtracted from gamma
};

/// S_G -= eta * mean(g) / (std(g) + c) elementwise; gamma -= eta * mean(h).
/// With SmoothingScale::Relative, c is multiplied by the mean over edges of
/// |mean(g)| (no step when every gradient is zero).
StructureUpdate apply_structure_update(StructureMask& mask, std::span<const StructureGradient> grads, double eta,
                                       double smoothing, SmoothingScale scale = SmoothingScale::Absolute);

using StructureGradientFn = std::function<StructureGradient(const Architecture&)>;

struct CurriculumStepReport {
  std::vector<RankedArchitecture> architectures;
  StructureUpdate update;
};

/// One round of curriculum graph sparsification: pseudo-labels, difficulties
/// and node weights from the cached forward, top-K architectures, their
/// structure gradients (or `gradient_override`), then the confidence-weighted
/// update. The std of this round becomes the next round's D_arch.
CurriculumStepReport curriculum_step(const SparseGraph& g, const MessageGraph& mg, StructureMask& mask, Supernet& net,
                                     CurriculumState& state, const CurriculumConfig& config,
                                     const StructureGradientFn& gradient_override = {});

}  // namespace gassip
