#pragma once

#include "gassip/autodiff.hpp"
#include "gassip/graph.hpp"
#include "gassip/rng.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gassip {

enum class OpKind { Linear, GCN, SAGE, GATLite, ARMALite };

inline constexpr OpKind kAllOpKinds[] = {OpKind::Linear, OpKind::GCN, OpKind::SAGE, OpKind::GATLite, OpKind::ARMALite};

std::string_view op_name(OpKind kind);
/// Accepts "linear", "gcn", "sage", "gat", "arma" (case-insensitive).
OpKind parse_op_kind(std::string_view name);

/// A weight tensor paired with its pruning mask score S_W. The effective
/// weight is W * sigmoid(S_W), or W * fixed_mask once the mask is binarized.
struct MaskedTensor {
  Param weight;
  Param score;
  std::optional<Matrix> fixed_mask;
};

/// Weights of one candidate operation. Tensor order per kind:
///   Linear, GCN: [W]
///   SAGE:        [W_self, W_nbr]
///   GATLite:     [W, a_src, a_dst]
///   ARMALite:    [W_init, W_rec, W_skip]
/// The bias is never masked.
struct OpWeights {
  OpKind kind = OpKind::Linear;
  Eigen::Index in_dim = 0;
  Eigen::Index out_dim = 0;
  std::vector<MaskedTensor> tensors;
  Param bias;

  std::vector<Param*> trainable();
};

/// Glorot-uniform weights (drawn in tensor order), zero bias, every mask score
/// set to `mask_init`.
OpWeights init_op_weights(OpKind kind, Eigen::Index in_dim, Eigen::Index out_dim, double mask_init, Rng& rng,
                          const std::string& prefix = {});

/// How weights enter the tape.
enum class Binding {
  Trainable,  // W, S_W and bias are Param leaves
  Frozen      // effective weights are constants; no gradient flows into them
};

/// Forward pass of one candidate operation over the masked graph.
/// `edge_mask` is a 2E x 1 column of per-directed-edge weights aligned with
/// `mg.directed`; self-loops always carry weight 1.
ad::Var op_forward(ad::Tape& tape, OpWeights& weights, ad::Var x, const MessageGraph& mg, ad::Var edge_mask,
                   Binding binding);

/// Scalar parameter count including bias. With masks, counts mask entries
/// equal to 1 plus the (unmasked) bias.
std::size_t count_params(OpKind kind, Eigen::Index in_dim, Eigen::Index out_dim);
std::size_t count_params(OpKind kind, Eigen::Index in_dim, Eigen::Index out_dim, std::span<const Matrix> binary_masks);

/// 0/1 masks, 1 iff S_W > 0, one per tensor.
std::vector<Matrix> binarize_weights(const OpWeights& weights);

}  // namespace gassip
