#pragma once

#include "gassip/adam.hpp"
#include "gassip/sparsifier.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace gassip {

struct SearchConfig {
  std::size_t epochs = 250;
  std::size_t warmup = 10;
  std::size_t k = 2;
  double lambda1 = 1.0;
  double lambda2 = 1.0;
  double beta = 0.001;
  double smoothing = 0.1;
  SmoothingScale smoothing_scale = SmoothingScale::Relative;
  double lr_weights = 0.01;
  double lr_alpha = 3e-4;
  double lr_structure = 0.01;
  double dropout = 0.5;
  std::size_t hidden = 64;
  std::size_t layers = 2;
  std::vector<OpKind> candidates{OpKind::GCN, OpKind::GATLite, OpKind::SAGE, OpKind::ARMALite, OpKind::Linear};
  std::size_t retrain_epochs = 300;
  std::size_t retrain_runs = 10;
  std::uint64_t seed = 0;
  LossNodeSet loss_nodes = LossNodeSet::All;
  NodeView node_view = NodeView::LowerEndpoint;
  double structure_score_init = 3.0;
  double gamma_init = 0.0;
  double weight_mask_init = 0.0;
  std::size_t threads = 1;  // retrain fan-out only; results do not depend on it
};

/// Throws std::invalid_argument describing the first violated constraint.
void validate(const SearchConfig& config);

nlohmann::json config_to_json(const SearchConfig& config);

struct EpochStats {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_acc = 0.0;
  double mask_mean = 0.0;
  double mask_entropy = 0.0;
};

struct RetrainEpoch {
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_acc = 0.0;
  double test_acc = 0.0;
};

struct RetrainRun {
  std::uint64_t seed = 0;
  double test_acc = 0.0;  // at the best-validation epoch
  double best_val_acc = 0.0;
  double best_val_loss = 0.0;
  std::size_t best_epoch = 0;
  std::vector<RetrainEpoch> curve;
};

struct RetrainMetrics {
  std::vector<RetrainRun> runs;
  double accuracy_mean = 0.0;  // percent
  double accuracy_std = 0.0;   // population std, percent
  std::size_t params_total = 0;
  std::size_t params_kept = 0;
};

struct RetrainOptions {
  std::size_t epochs = 300;
  std::size_t hidden = 64;
  double dropout = 0.5;
  double lr = 0.01;
  std::size_t threads = 1;
};

/// Binary weight masks of a discrete architecture: one list of 0/1 matrices
/// per layer, in the tensor order of OpWeights.
using WeightMasks = std::vector<std::vector<Matrix>>;

/// Fresh Glorot initialization per seed, masked weights fixed to zero, Adam on
/// the training cross-entropy over the re-normalized graph; reports the test
/// accuracy of the epoch with the best validation accuracy (ties: lower
/// validation loss, then earlier epoch). Run r uses Rng(seeds[r]): split(1)
/// for initialization, split(2) for dropout.
RetrainMetrics retrain_and_eval(const std::vector<OpKind>& arch, const WeightMasks* masks, const SparseGraph& graph,
                                const RetrainOptions& options, std::span<const std::uint64_t> seeds);

RetrainOptions retrain_options(const SearchConfig& config);
std::vector<std::uint64_t> retrain_seeds(std::uint64_t seed, std::size_t runs);

/// Retain edge e iff S_G[e] >= gamma (mask value >= 0.5).
std::vector<std::uint8_t> binarize_structure(const StructureMask& mask);

struct SearchResult {
  Architecture arch;
  std::vector<OpKind> arch_kinds;
  std::vector<std::uint8_t> edge_keep;
  WeightMasks weight_masks;
  SparseGraph sparsified;
  StructureMask mask;
  std::vector<std::vector<double>> alphas;
  std::vector<EpochStats> curve;
  RetrainMetrics retrain;
  std::size_t edges_total = 0;
  std::size_t edges_kept = 0;
  std::size_t params_total = 0;
  std::size_t params_kept = 0;
  double wall_clock_seconds = 0.0;
};

/// Stateful search loop; run_search drives it. Exposed so the alternating
/// steps can be exercised one at a time.
class Searcher {
 public:
  Searcher(const SparseGraph& graph, const SearchConfig& config);

  /// One Adam step on W and S_W against the training cross-entropy of the
  /// mixed supernet on A * M_G. Returns the loss.
  double weight_step();
  /// Curriculum sparsification round (warm-starts the cache if needed).
  CurriculumStepReport structure_step();
  /// One Adam step on alpha against the validation cross-entropy; caches the
  /// forward pass for the next structure step. Returns validation accuracy.
  double arch_step();
  /// Full epoch t (1-based). Epochs t <= warmup only run the weight step.
  EpochStats run_epoch(std::size_t t);

  /// Binarizes both masks, induces the architecture and retrains it on the
  /// sparsified graph.
  SearchResult finish();

  Supernet& net() { return net_; }
  StructureMask& mask() { return mask_; }
  CurriculumState& state() { return state_; }
  const MessageGraph& message_graph() const { return mg_; }
  const std::vector<EpochStats>& curve() const { return curve_; }

 private:
  void cache_forward(const Matrix& logits, const Matrix& hidden);
  double eval_val_accuracy();

  SparseGraph graph_;
  SearchConfig config_;
  MessageGraph mg_;
  Rng dropout_rng_;
  Supernet net_;
  StructureMask mask_;
  CurriculumState state_;
  Adam weight_opt_;
  Adam alpha_opt_;
  std::vector<double> train_weights_;
  std::vector<double> val_weights_;
  std::vector<EpochStats> curve_;
};

SearchResult run_search(const SparseGraph& graph, const SearchConfig& config);

/// Metrics report; `wall_clock_seconds` is included only when requested so
/// that the default report is byte-reproducible.
nlohmann::json metrics_report(const SearchResult& result, const SearchConfig& config, const std::string& dataset,
                              bool include_wall_clock);

double accuracy(const Matrix& logits, std::span<const int> labels, std::span<const NodeId> nodes);

/// Ids of the round(ratio * n) lowest scores, ties to the lower id, sorted.
std::vector<std::size_t> lowest_fraction(std::span<const double> scores, double ratio);

/// |A ∩ B| / round(ratio * total_edges); both sets must hold exactly that many ids,
/// so identical sets give 1.0.
double overlap(std::span<const std::size_t> removed_a, std::span<const std::size_t> removed_b, double ratio,
               std::size_t total_edges);

}  // namespace gassip
