#include "gassip/engine.hpp"

#include "gassip/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace gassip {

using nlohmann::json;

void validate(const SearchConfig& c) {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
  };
  require(c.epochs >= 1, "epochs must be >= 1");
  require(c.warmup <= c.epochs, "warmup must not exceed epochs");
  require(c.k >= 1, "k must be >= 1");
  require(c.lr_weights > 0 && c.lr_alpha > 0 && c.lr_structure > 0, "learning rates must be positive");
  require(c.dropout >= 0 && c.dropout < 1, "dropout must lie in [0, 1)");
  require(c.hidden >= 1, "hidden must be >= 1");
  require(c.layers >= 1, "layers must be >= 1");
  require(!c.candidates.empty(), "candidates must be nonempty");
  require(c.retrain_epochs >= 1, "retrain_epochs must be >= 1");
  require(c.retrain_runs >= 1, "retrain_runs must be >= 1");
  require(c.smoothing >= 0 && c.beta >= 0 && c.lambda1 >= 0 && c.lambda2 >= 0, "lambda1, lambda2, beta, smoothing must be >= 0");
  require(c.threads >= 1, "threads must be >= 1");
  std::size_t space = 1;
  for (std::size_t l = 0; l < c.layers; ++l) space *= c.candidates.size();
  require(c.k <= space, "k exceeds the number of architectures in the search space");
}

json config_to_json(const SearchConfig& c) {
  json candidates = json::array();
  for (OpKind k : c.candidates) candidates.push_back(std::string(op_name(k)));
  return {{"epochs", c.epochs},
          {"warmup", c.warmup},
          {"k", c.k},
          {"lambda1", c.lambda1},
          {"lambda2", c.lambda2},
          {"beta", c.beta},
          {"smoothing", c.smoothing},
          {"smoothing_scale", c.smoothing_scale == SmoothingScale::Relative ? "relative" : "absolute"},
          {"lr_weights", c.lr_weights},
          {"lr_alpha", c.lr_alpha},
          {"lr_structure", c.lr_structure},
          {"dropout", c.dropout},
          {"hidden", c.hidden},
          {"layers", c.layers},
          {"candidates", candidates},
          {"retrain_epochs", c.retrain_epochs},
          {"retrain_runs", c.retrain_runs},
          {"seed", c.seed},
          {"loss_nodes", c.loss_nodes == LossNodeSet::All ? "all" : "labeled"},
          {"node_view", c.node_view == NodeView::LowerEndpoint ? "lower" : "symmetric"},
          {"structure_score_init", c.structure_score_init},
          {"gamma_init", c.gamma_init},
          {"weight_mask_init", c.weight_mask_init}};
}

double accuracy(const Matrix& logits, std::span<const int> labels, std::span<const NodeId> nodes) {
  if (nodes.empty()) return 0.0;
  const auto pred = row_argmax(logits);
  std::size_t correct = 0;
  for (NodeId i : nodes) correct += pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)];
  return 100.0 * static_cast<double>(correct) / static_cast<double>(nodes.size());
}

namespace {

std::vector<double> uniform_weights(std::size_t n) { return std::vector<double>(n, n == 0 ? 0.0 : 1.0 / static_cast<double>(n)); }

double checked(double loss, const char* where) {
  if (!std::isfinite(loss)) throw NumericalError(std::string("non-finite loss in ") + where);
  return loss;
}

RetrainRun retrain_once(const std::vector<OpKind>& arch, const WeightMasks* masks, const SparseGraph& graph,
                        const MessageGraph& mg, const RetrainOptions& opt, std::uint64_t seed) {
  const Rng root(seed);
  Rng init_rng = root.split(1);
  Rng dropout_rng = root.split(2);

  std::vector<OpWeights> layers;
  for (std::size_t l = 0; l < arch.size(); ++l) {
    const Eigen::Index in = l == 0 ? static_cast<Eigen::Index>(graph.num_features()) : static_cast<Eigen::Index>(opt.hidden);
    const Eigen::Index out = l + 1 == arch.size() ? graph.num_classes : static_cast<Eigen::Index>(opt.hidden);
    OpWeights w = init_op_weights(arch[l], in, out, 0.0, init_rng, "l" + std::to_string(l) + ".");
    for (std::size_t k = 0; k < w.tensors.size(); ++k) {
      auto& t = w.tensors[k];
      Matrix m = masks != nullptr ? (*masks).at(l).at(k) : Matrix::Ones(t.weight.value.rows(), t.weight.value.cols());
      if (m.rows() != t.weight.value.rows() || m.cols() != t.weight.value.cols()) {
        throw std::invalid_argument("retrain: weight mask shape mismatch");
      }
      t.weight.value = t.weight.value.cwiseProduct(m);
      t.fixed_mask = std::move(m);
    }
    layers.push_back(std::move(w));
  }
  std::vector<Param*> params;
  std::vector<OpWeights*> chain;
  for (auto& w : layers) {
    for (Param* p : w.trainable()) params.push_back(p);
    chain.push_back(&w);
  }
  Adam opt_w(params, opt.lr);
  const auto train_w = uniform_weights(graph.splits.train.size());
  const auto val_w = uniform_weights(graph.splits.val.size());
  const Matrix ones = Matrix::Ones(static_cast<Eigen::Index>(mg.directed.size()), 1);

  RetrainRun run;
  run.seed = seed;
  bool have_best = false;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    RetrainEpoch stats;
    {
      ad::Tape tape;
      ForwardOptions fo;
      fo.eval_mode = false;
      fo.dropout_rng = &dropout_rng;
      fo.weights = Binding::Trainable;
      const auto fwd = chain_forward(tape, chain, opt.dropout, tape.constant(graph.features), mg, tape.constant(ones), fo);
      const ad::Var loss = ad::weighted_cross_entropy(fwd.logits, graph.labels, graph.splits.train, train_w);
      stats.train_loss = checked(loss.value()(0, 0), "retraining");
      gradients(tape, loss);
      opt_w.step();
    }
    {
      ad::Tape tape;
      ForwardOptions fo;
      fo.eval_mode = true;
      fo.weights = Binding::Frozen;
      const auto fwd = chain_forward(tape, chain, opt.dropout, tape.constant(graph.features), mg, tape.constant(ones), fo);
      stats.val_acc = accuracy(fwd.logits.value(), graph.labels, graph.splits.val);
      stats.val_loss = graph.splits.val.empty()
                           ? 0.0
                           : weighted_cross_entropy(fwd.logits.value(), graph.labels, graph.splits.val, val_w);
      stats.test_acc = accuracy(fwd.logits.value(), graph.labels, graph.splits.test);
    }
    const bool better = stats.val_acc > run.best_val_acc ||
                        (stats.val_acc == run.best_val_acc && stats.val_loss < run.best_val_loss);
    if (!have_best || better) {
      have_best = true;
      run.best_val_acc = stats.val_acc;
      run.best_val_loss = stats.val_loss;
      run.best_epoch = epoch;
      run.test_acc = stats.test_acc;
    }
    run.curve.push_back(stats);
  }
  return run;
}

}  // namespace

RetrainMetrics retrain_and_eval(const std::vector<OpKind>& arch, const WeightMasks* masks, const SparseGraph& graph,
                                const RetrainOptions& options, std::span<const std::uint64_t> seeds) {
  if (arch.empty()) throw std::invalid_argument("retrain: empty architecture");
  if (graph.num_nodes == 0) throw std::invalid_argument("retrain: graph has no nodes");
  if (seeds.empty()) throw std::invalid_argument("retrain: at least one seed required");
  if (masks != nullptr && masks->size() != arch.size()) throw std::invalid_argument("retrain: one mask list per layer");

  const MessageGraph mg = make_message_graph(graph);
  RetrainMetrics metrics;
  metrics.runs.resize(seeds.size());

  const std::size_t workers = std::min(options.threads, seeds.size());
  if (workers <= 1) {
    for (std::size_t r = 0; r < seeds.size(); ++r) metrics.runs[r] = retrain_once(arch, masks, graph, mg, options, seeds[r]);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t r = w; r < seeds.size(); r += workers) {
            metrics.runs[r] = retrain_once(arch, masks, graph, mg, options, seeds[r]);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  double total = 0.0;
  for (const auto& r : metrics.runs) total += r.test_acc;
  metrics.accuracy_mean = total / static_cast<double>(seeds.size());
  double var = 0.0;
  for (const auto& r : metrics.runs) var += (r.test_acc - metrics.accuracy_mean) * (r.test_acc - metrics.accuracy_mean);
  metrics.accuracy_std = std::sqrt(var / static_cast<double>(seeds.size()));

  for (std::size_t l = 0; l < arch.size(); ++l) {
    const Eigen::Index in = l == 0 ? static_cast<Eigen::Index>(graph.num_features()) : static_cast<Eigen::Index>(options.hidden);
    const Eigen::Index out = l + 1 == arch.size() ? graph.num_classes : static_cast<Eigen::Index>(options.hidden);
    metrics.params_total += count_params(arch[l], in, out);
    metrics.params_kept += masks != nullptr ? count_params(arch[l], in, out, (*masks)[l]) : count_params(arch[l], in, out);
  }
  return metrics;
}

RetrainOptions retrain_options(const SearchConfig& config) {
  RetrainOptions o;
  o.epochs = config.retrain_epochs;
  o.hidden = config.hidden;
  o.dropout = config.dropout;
  o.lr = config.lr_weights;
  o.threads = config.threads;
  return o;
}

std::vector<std::uint64_t> retrain_seeds(std::uint64_t seed, std::size_t runs) {
  std::vector<std::uint64_t> out(runs);
  for (std::size_t r = 0; r < runs; ++r) out[r] = seed + r;
  return out;
}

std::vector<std::uint8_t> binarize_structure(const StructureMask& mask) {
  std::vector<std::uint8_t> keep(mask.size());
  const double gamma = mask.gamma.value(0, 0);
  for (std::size_t e = 0; e < keep.size(); ++e) keep[e] = mask.scores.value(static_cast<Eigen::Index>(e), 0) >= gamma;
  return keep;
}

// ---------------------------------------------------------------------------

namespace {

SupernetConfig supernet_config(const SparseGraph& g, const SearchConfig& c) {
  SupernetConfig s;
  s.in_dim = static_cast<Eigen::Index>(g.num_features());
  s.hidden = static_cast<Eigen::Index>(c.hidden);
  s.num_classes = g.num_classes;
  s.layers = c.layers;
  s.candidates = {c.candidates};
  s.dropout = c.dropout;
  s.weight_mask_init = c.weight_mask_init;
  return s;
}

Supernet make_net(const SparseGraph& g, const SearchConfig& c) {
  validate(c);
  validate(g);
  Rng init_rng = Rng(c.seed).split(1);
  return Supernet(supernet_config(g, c), init_rng);
}

}  // namespace

Searcher::Searcher(const SparseGraph& graph, const SearchConfig& config)
    : graph_(graph),
      config_(config),
      mg_(make_message_graph(graph_)),
      dropout_rng_(Rng(config.seed).split(2)),
      net_(make_net(graph_, config_)),
      mask_(make_structure_mask(graph_.edges.size(), config.structure_score_init, config.gamma_init)),
      weight_opt_(net_.weight_params(), config.lr_weights),
      alpha_opt_(net_.alpha_params(), config.lr_alpha),
      train_weights_(uniform_weights(graph_.splits.train.size())),
      val_weights_(uniform_weights(graph_.splits.val.size())) {
  if (graph_.splits.train.empty() || graph_.splits.val.empty()) {
    throw std::invalid_argument("search needs nonempty train and validation splits");
  }
}

double Searcher::weight_step() {
  ad::Tape tape;
  ForwardOptions fo;
  fo.eval_mode = false;
  fo.dropout_rng = &dropout_rng_;
  fo.weights = Binding::Trainable;
  fo.alpha = Binding::Frozen;
  const ad::Var m = directed_mask(mg_, mask_var(tape, mask_, Binding::Frozen));
  const auto fwd = supernet_forward(tape, net_, tape.constant(graph_.features), mg_, m, fo);
  const ad::Var loss = ad::weighted_cross_entropy(fwd.logits, graph_.labels, graph_.splits.train, train_weights_);
  const double value = checked(loss.value()(0, 0), "weight step");
  weight_opt_.zero_grad();
  gradients(tape, loss);
  weight_opt_.step();
  return value;
}

void Searcher::cache_forward(const Matrix& logits, const Matrix& hidden) {
  state_.cached_logits = logits;
  state_.cached_hidden = hidden;
  state_.has_cache = true;
}

double Searcher::eval_val_accuracy() {
  ad::Tape tape;
  ForwardOptions fo;
  const ad::Var m = directed_mask(mg_, mask_var(tape, mask_, Binding::Frozen));
  const auto fwd = supernet_forward(tape, net_, tape.constant(graph_.features), mg_, m, fo);
  cache_forward(fwd.logits.value(), fwd.hidden.value());
  return accuracy(fwd.logits.value(), graph_.labels, graph_.splits.val);
}

CurriculumStepReport Searcher::structure_step() {
  if (!state_.has_cache) eval_val_accuracy();
  CurriculumConfig cc;
  cc.k = config_.k;
  cc.lambda1 = config_.lambda1;
  cc.lambda2 = config_.lambda2;
  cc.beta = config_.beta;
  cc.smoothing = config_.smoothing;
  cc.smoothing_scale = config_.smoothing_scale;
  cc.eta = config_.lr_structure;
  cc.loss_nodes = config_.loss_nodes;
  cc.node_view = config_.node_view;
  auto report = curriculum_step(graph_, mg_, mask_, net_, state_, cc);
  if (!mask_.scores.value.allFinite() || !std::isfinite(mask_.gamma.value(0, 0))) {
    throw NumericalError("non-finite structure mask after curriculum step");
  }
  return report;
}

double Searcher::arch_step() {
  ad::Tape tape;
  ForwardOptions fo;
  fo.eval_mode = true;
  fo.weights = Binding::Frozen;
  fo.alpha = Binding::Trainable;
  const ad::Var m = directed_mask(mg_, mask_var(tape, mask_, Binding::Frozen));
  const auto fwd = supernet_forward(tape, net_, tape.constant(graph_.features), mg_, m, fo);
  const ad::Var loss = ad::weighted_cross_entropy(fwd.logits, graph_.labels, graph_.splits.val, val_weights_);
  checked(loss.value()(0, 0), "architecture step");
  cache_forward(fwd.logits.value(), fwd.hidden.value());
  const double acc = accuracy(fwd.logits.value(), graph_.labels, graph_.splits.val);
  alpha_opt_.zero_grad();
  gradients(tape, loss);
  alpha_opt_.step();
  return acc;
}

EpochStats Searcher::run_epoch(std::size_t t) {
  EpochStats s;
  s.epoch = t;
  s.train_loss = weight_step();
  if (t <= config_.warmup) {
    s.val_acc = eval_val_accuracy();
  } else {
    structure_step();
    s.val_acc = arch_step();
  }
  const auto mv = mask_values(mask_);
  if (!mv.empty()) {
    double total = 0.0;
    double entropy = 0.0;
    for (double m : mv) {
      total += m;
      entropy += binary_entropy(m);
    }
    s.mask_mean = total / static_cast<double>(mv.size());
    s.mask_entropy = entropy / static_cast<double>(mv.size());
  }
  curve_.push_back(s);
  return s;
}

SearchResult Searcher::finish() {
  SearchResult r;
  r.curve = curve_;
  r.mask = mask_;
  for (std::size_t l = 0; l < net_.num_layers(); ++l) r.alphas.push_back(to_vector(net_.layer(l).alpha.value));
  r.edge_keep = binarize_structure(mask_);
  r.arch = induce_architecture(net_);
  r.arch_kinds = architecture_kinds(net_, r.arch);
  for (std::size_t l = 0; l < net_.num_layers(); ++l) {
    const OpWeights& w = net_.layer(l).ops[static_cast<std::size_t>(r.arch.ops[l])];
    r.weight_masks.push_back(binarize_weights(w));
    r.params_total += count_params(w.kind, w.in_dim, w.out_dim);
    r.params_kept += count_params(w.kind, w.in_dim, w.out_dim, r.weight_masks.back());
  }
  r.sparsified = retain_edges(graph_, r.edge_keep);
  r.edges_total = graph_.edges.size();
  r.edges_kept = r.sparsified.edges.size();
  const auto seeds = retrain_seeds(config_.seed, config_.retrain_runs);
  r.retrain = retrain_and_eval(r.arch_kinds, &r.weight_masks, r.sparsified, retrain_options(config_), seeds);
  return r;
}

SearchResult run_search(const SparseGraph& graph, const SearchConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  Searcher searcher(graph, config);
  for (std::size_t t = 1; t <= config.epochs; ++t) searcher.run_epoch(t);
  SearchResult result = searcher.finish();
  result.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

json metrics_report(const SearchResult& result, const SearchConfig& config, const std::string& dataset,
                    bool include_wall_clock) {
  json per_epoch = json::array();
  for (const auto& e : result.curve) {
    per_epoch.push_back({{"epoch", e.epoch},
                         {"train_loss", e.train_loss},
                         {"val_acc", e.val_acc},
                         {"mask_mean", e.mask_mean},
                         {"mask_entropy", e.mask_entropy}});
  }
  json runs = json::array();
  for (const auto& r : result.retrain.runs) {
    runs.push_back({{"seed", r.seed}, {"test_acc", r.test_acc}, {"best_val_acc", r.best_val_acc}, {"best_epoch", r.best_epoch}});
  }
  json report = {{"dataset", dataset},
                 {"config", config_to_json(config)},
                 {"induced_arch", architecture_to_json(result.arch_kinds)},
                 {"edges_total", result.edges_total},
                 {"edges_kept", result.edges_kept},
                 {"params_total", result.params_total},
                 {"params_kept", result.params_kept},
                 {"accuracy_mean", result.retrain.accuracy_mean},
                 {"accuracy_std", result.retrain.accuracy_std},
                 {"alphas", result.alphas},
                 {"retrain_runs", runs},
                 {"per_epoch", per_epoch}};
  if (include_wall_clock) report["wall_clock_seconds"] = result.wall_clock_seconds;
  return report;
}

std::vector<std::size_t> lowest_fraction(std::span<const double> scores, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw std::invalid_argument("lowest_fraction: ratio must lie in [0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(scores.size())));
  std::vector<std::size_t> ids(scores.size());
  std::iota(ids.begin(), ids.end(), 0);
  std::stable_sort(ids.begin(), ids.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  ids.resize(count);
  std::sort(ids.begin(), ids.end());
  return ids;
}

double overlap(std::span<const std::size_t> removed_a, std::span<const std::size_t> removed_b, double ratio,
               std::size_t total_edges) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("overlap: ratio must lie in (0, 1]");
  const auto expected = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(total_edges)));
  if (removed_a.size() != expected || removed_b.size() != expected) {
    throw std::invalid_argument("overlap: removed sets must hold round(ratio * |E|) = " + std::to_string(expected) + " edges");
  }
  std::vector<std::size_t> a(removed_a.begin(), removed_a.end());
  std::vector<std::size_t> b(removed_b.begin(), removed_b.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> both;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(both));
  if (expected == 0) return 1.0;
  return static_cast<double>(both.size()) / static_cast<double>(expected);
}

}  // namespace gassip
