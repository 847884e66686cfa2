#include "gassip/sparsifier.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <stdexcept>

namespace gassip {

StructureMask make_structure_mask(std::size_t num_edges, double score_init, double gamma_init) {
  return StructureMask{Param("s_g", Matrix::Constant(static_cast<Eigen::Index>(num_edges), 1, score_init)),
                       Param("gamma", Matrix::Constant(1, 1, gamma_init))};
}

std::vector<double> mask_values(const StructureMask& mask) {
  std::vector<double> out(mask.size());
  const double gamma = mask.gamma.value(0, 0);
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = sigmoid(mask.scores.value(static_cast<Eigen::Index>(e), 0) - gamma);
  return out;
}

ad::Var mask_var(ad::Tape& tape, StructureMask& mask, Binding binding) {
  if (binding == Binding::Frozen) return tape.constant(column(mask_values(mask)));
  return ad::sigmoid(ad::sub_scalar(tape.param(mask.scores), tape.param(mask.gamma)));
}

ad::Var directed_mask(const MessageGraph& mg, ad::Var undirected) { return ad::gather_rows(undirected, mg.undirected_id); }

nlohmann::json mask_to_json(const StructureMask& mask) {
  return {{"gamma", mask.gamma.value(0, 0)}, {"s_g", to_vector(mask.scores.value)}};
}

StructureMask mask_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("gamma") || !j.contains("s_g") || !j["s_g"].is_array()) {
    throw std::invalid_argument("mask JSON needs 'gamma' and 's_g'");
  }
  const auto scores = j["s_g"].get<std::vector<double>>();
  StructureMask mask = make_structure_mask(scores.size(), 0.0, j["gamma"].get<double>());
  mask.scores.value = column(scores);
  return mask;
}

std::vector<int> assign_pseudo_labels(const Matrix& logits, std::span<const int> labels, const Splits& splits) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size()) {
    throw std::invalid_argument("assign_pseudo_labels: one logits row per node required");
  }
  std::vector<int> out = row_argmax(logits);
  for (NodeId i : splits.train) out[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)];
  return out;
}

namespace {

double cosine(const Matrix& z, NodeId i, NodeId j) {
  const double ni = z.row(i).norm();
  const double nj = z.row(j).norm();
  if (ni == 0.0 || nj == 0.0) return 0.0;
  return z.row(i).dot(z.row(j)) / (ni * nj);
}

double label_divergence(const std::vector<IndexList>& adj, std::span<const int> pseudo, NodeId i) {
  const auto& nbrs = adj[static_cast<std::size_t>(i)];
  if (nbrs.empty()) return 0.0;
  std::size_t differing = 0;
  for (NodeId j : nbrs) differing += pseudo[static_cast<std::size_t>(j)] != pseudo[static_cast<std::size_t>(i)];
  return static_cast<double>(differing) / static_cast<double>(nbrs.size());
}

}  // namespace

std::vector<double> node_view_difficulty(const SparseGraph& g, const Matrix& hidden, std::span<const int> pseudo_labels,
                                         double lambda1, NodeView view) {
  if (static_cast<std::size_t>(hidden.rows()) != g.num_nodes || pseudo_labels.size() != g.num_nodes) {
    throw std::invalid_argument("node_view_difficulty: per-node inputs must cover every node");
  }
  const auto adj = adjacency(g);
  std::vector<double> out(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto [u, v] = g.edges[e];
    double divergence = label_divergence(adj, pseudo_labels, u);
    if (view == NodeView::Symmetric) divergence = 0.5 * (divergence + label_divergence(adj, pseudo_labels, v));
    out[e] = cosine(hidden, u, v) + lambda1 * divergence;
  }
  return out;
}

Difficulty combine_difficulty(const SparseGraph& g, std::span<const double> d_arch, std::span<const double> d_node,
                              double lambda2) {
  if (d_arch.size() != g.edges.size() || d_node.size() != g.edges.size()) {
    throw std::invalid_argument("combine_difficulty: one value per edge required");
  }
  Difficulty d;
  d.edge.resize(g.edges.size());
  for (std::size_t e = 0; e < d.edge.size(); ++e) d.edge[e] = d_arch[e] + lambda2 * d_node[e];
  d.node.assign(g.num_nodes, 0.0);
  const auto inc = incident_edges(g);
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    if (inc[i].empty()) continue;
    double total = 0.0;
    for (NodeId e : inc[i]) total += d.edge[static_cast<std::size_t>(e)];
    d.node[i] = total / static_cast<double>(inc[i].size());
  }
  return d;
}

std::vector<double> node_weights(std::span<const double> difficulties) {
  if (difficulties.empty()) throw std::invalid_argument("node_weights: empty node set");
  return softmax_vec(difficulties);
}

ad::Var struct_loss(ad::Tape& tape, Supernet& net, const Architecture& arch, const MessageGraph& mg,
                    StructureMask& mask, const StructLossInputs& in) {
  if (in.features == nullptr) throw std::invalid_argument("struct_loss: features required");
  const ad::Var m = mask_var(tape, mask, Binding::Trainable);
  const ad::Var x = tape.constant(*in.features);
  ForwardOptions opts;
  opts.eval_mode = true;
  opts.weights = Binding::Frozen;
  const auto fwd = discrete_forward(tape, net, arch, x, mg, directed_mask(mg, m), opts);
  const ad::Var clf = ad::weighted_cross_entropy(fwd.logits, in.pseudo_labels, in.loss_nodes, in.node_weights);
  if (in.beta == 0.0) return clf;
  return ad::add(clf, ad::scale(ad::mean_binary_entropy(m), in.beta));
}

StructureGradient structure_gradient(Supernet& net, const Architecture& arch, const MessageGraph& mg,
                                     StructureMask& mask, const StructLossInputs& in) {
  mask.scores.zero_grad();
  mask.gamma.zero_grad();
  ad::Tape tape;
  const ad::Var loss = struct_loss(tape, net, arch, mg, mask, in);
  gradients(tape, loss);
  StructureGradient g{mask.scores.grad, mask.gamma.grad(0, 0)};
  mask.scores.zero_grad();
  mask.gamma.zero_grad();
  return g;
}

StructureUpdate apply_structure_update(StructureMask& mask, std::span<const StructureGradient> grads, double eta,
                                       double smoothing, SmoothingScale scale) {
  if (grads.empty()) throw std::invalid_argument("apply_structure_update: no gradients");
  const auto k = static_cast<double>(grads.size());
  const Eigen::Index e_count = mask.scores.value.rows();
  StructureUpdate u;
  u.std_dev.assign(static_cast<std::size_t>(e_count), 0.0);
  u.score_step = Matrix::Zero(e_count, 1);
  Matrix mean = Matrix::Zero(e_count, 1);
  for (const auto& g : grads) {
    if (g.scores.rows() != e_count) throw std::invalid_argument("apply_structure_update: gradient length mismatch");
    mean += g.scores;
  }
  mean /= k;
  double c = smoothing;
  if (scale == SmoothingScale::Relative) c *= e_count == 0 ? 0.0 : mean.cwiseAbs().mean();
  for (Eigen::Index e = 0; e < e_count; ++e) {
    double total = 0.0;
    for (const auto& g : grads) total += g.scores(e, 0);
    double var = 0.0;
    for (const auto& g : grads) var += (g.scores(e, 0) - mean(e, 0)) * (g.scores(e, 0) - mean(e, 0));
    const double sd = std::sqrt(var / k);
    u.std_dev[static_cast<std::size_t>(e)] = sd;
    if (sd + c > 0.0) u.score_step(e, 0) = eta * total / (k * (sd + c));
  }
  double gamma_total = 0.0;
  for (const auto& g : grads) gamma_total += g.gamma;
  u.gamma_step = eta * gamma_total / k;
  mask.scores.value -= u.score_step;
  mask.gamma.value(0, 0) -= u.gamma_step;
  return u;
}

CurriculumStepReport curriculum_step(const SparseGraph& g, const MessageGraph& mg, StructureMask& mask, Supernet& net,
                                     CurriculumState& state, const CurriculumConfig& config,
                                     const StructureGradientFn& gradient_override) {
  if (!state.has_cache) throw std::logic_error("curriculum_step: no cached forward pass");
  if (mask.size() != g.edges.size()) throw std::invalid_argument("curriculum_step: mask does not match graph");
  const std::size_t num_edges = g.edges.size();

  state.pseudo_labels = assign_pseudo_labels(state.cached_logits, g.labels, g.splits);
  if (state.d_arch.size() != num_edges) state.d_arch.assign(num_edges, 0.0);
  state.d_node = node_view_difficulty(g, state.cached_hidden, state.pseudo_labels, config.lambda1, config.node_view);
  auto difficulty = combine_difficulty(g, state.d_arch, state.d_node, config.lambda2);
  state.d_combined = std::move(difficulty.edge);
  state.node_difficulty = std::move(difficulty.node);

  state.loss_nodes = config.loss_nodes == LossNodeSet::All ? g.all_nodes() : g.splits.train;
  std::vector<double> selected;
  selected.reserve(state.loss_nodes.size());
  for (NodeId i : state.loss_nodes) selected.push_back(state.node_difficulty[static_cast<std::size_t>(i)]);
  state.node_weights = node_weights(selected);

  CurriculumStepReport report;
  report.architectures = top_k_architectures(net, config.k);

  const StructLossInputs in{&g.features, state.pseudo_labels, state.loss_nodes, state.node_weights, config.beta};
  std::vector<StructureGradient> grads;
  grads.reserve(report.architectures.size());
  for (const auto& ranked : report.architectures) {
    grads.push_back(gradient_override ? gradient_override(ranked.arch)
                                      : structure_gradient(net, ranked.arch, mg, mask, in));
  }
  report.update = apply_structure_update(mask, grads, config.eta, config.smoothing, config.smoothing_scale);
  state.d_arch = report.update.std_dev;
  return report;
}

}  // namespace gassip
