#pragma once

#include "gassip/operators.hpp"

#include <nlohmann/json_fwd.hpp>

#include <string>
#include <vector>

namespace gassip {

/// One op index per layer.
struct Architecture {
  std::vector<int> ops;

  bool operator==(const Architecture&) const = default;
  auto operator<=>(const Architecture&) const = default;
};

struct MixedLayer {
  Eigen::Index in_dim = 0;
  Eigen::Index out_dim = 0;
  std::vector<OpKind> candidates;
  std::vector<OpWeights> ops;  // aligned with candidates
  Param alpha;                 // 1 x |candidates|
};

struct SupernetConfig {
  Eigen::Index in_dim = 0;
  Eigen::Index hidden = 64;
  Eigen::Index num_classes = 0;
  std::size_t layers = 2;
  /// Either one list shared by every layer or one list per layer.
  std::vector<std::vector<OpKind>> candidates{
      {OpKind::GCN, OpKind::GATLite, OpKind::SAGE, OpKind::ARMALite, OpKind::Linear}};
  double dropout = 0.5;
  double weight_mask_init = 0.0;
};

/// Linear chain of mixed layers. Layer l outputs
/// sum_o softmax(alpha_l)[o] * op_o(x); ReLU + dropout between layers.
class Supernet {
 public:
  Supernet(const SupernetConfig& config, Rng& init_rng);

  const SupernetConfig& config() const { return config_; }
  std::size_t num_layers() const { return layers_.size(); }
  MixedLayer& layer(std::size_t l) { return layers_[l]; }
  const MixedLayer& layer(std::size_t l) const { return layers_[l]; }

  std::vector<Param*> weight_params();  // W, S_W and biases of every candidate
  std::vector<Param*> alpha_params();

  /// Number of architectures in the space, prod_l |O_l|.
  std::size_t space_size() const;

 private:
  SupernetConfig config_;
  std::vector<MixedLayer> layers_;
};

struct ForwardOptions {
  bool eval_mode = true;
  Rng* dropout_rng = nullptr;  // required when !eval_mode and dropout > 0
  Binding weights = Binding::Frozen;
  Binding alpha = Binding::Frozen;
};

struct ForwardResult {
  ad::Var logits;
  ad::Var hidden;  // input of the last layer (pre-dropout)
};

ForwardResult supernet_forward(ad::Tape& tape, Supernet& net, ad::Var x, const MessageGraph& mg, ad::Var edge_mask,
                               const ForwardOptions& opts);

/// The same chain with a single op per layer; alpha is ignored.
ForwardResult discrete_forward(ad::Tape& tape, Supernet& net, const Architecture& arch, ad::Var x,
                               const MessageGraph& mg, ad::Var edge_mask, const ForwardOptions& opts);

/// Forward through a standalone stack of op weights (used when retraining).
ForwardResult chain_forward(ad::Tape& tape, std::vector<OpWeights*> layers, double dropout, ad::Var x,
                            const MessageGraph& mg, ad::Var edge_mask, const ForwardOptions& opts);

std::vector<std::vector<double>> arch_probs(const Supernet& net);
std::vector<std::vector<double>> arch_probs(const std::vector<std::vector<double>>& alphas);

struct RankedArchitecture {
  Architecture arch;
  double probability = 0.0;
};

/// The K architectures with the largest product of per-layer probabilities,
/// sorted by probability (descending) then op indices (lexicographic).
std::vector<RankedArchitecture> top_k_architectures(const std::vector<std::vector<double>>& layer_probs, std::size_t k);
std::vector<RankedArchitecture> top_k_architectures(const Supernet& net, std::size_t k);

/// Per-layer argmax of alpha, ties to the lowest index.
Architecture induce_architecture(const Supernet& net);

/// ["gcn","sage"]-style names for `arch` within `net`'s candidate lists.
std::vector<OpKind> architecture_kinds(const Supernet& net, const Architecture& arch);
nlohmann::json architecture_to_json(const std::vector<OpKind>& kinds);
std::vector<OpKind> architecture_from_json(const nlohmann::json& j);

}  // namespace gassip
