#include "gassip/supernet.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <stdexcept>

namespace gassip {

Supernet::Supernet(const SupernetConfig& config, Rng& init_rng) : config_(config) {
  if (config.layers == 0) throw std::invalid_argument("Supernet: at least one layer required");
  if (config.in_dim <= 0 || config.hidden <= 0 || config.num_classes <= 0) {
    throw std::invalid_argument("Supernet: dimensions must be positive");
  }
  if (config.candidates.size() != 1 && config.candidates.size() != config.layers) {
    throw std::invalid_argument("Supernet: candidate lists must be shared or given per layer");
  }
  for (std::size_t l = 0; l < config.layers; ++l) {
    MixedLayer layer;
    layer.in_dim = l == 0 ? config.in_dim : config.hidden;
    layer.out_dim = l + 1 == config.layers ? config.num_classes : config.hidden;
    layer.candidates = config.candidates.size() == 1 ? config.candidates[0] : config.candidates[l];
    if (layer.candidates.empty()) throw std::invalid_argument("Supernet: empty candidate list");
    const std::string prefix = "l" + std::to_string(l) + ".";
    for (OpKind kind : layer.candidates) {
      layer.ops.push_back(init_op_weights(kind, layer.in_dim, layer.out_dim, config.weight_mask_init, init_rng, prefix));
    }
    layer.alpha = Param(prefix + "alpha", Matrix::Zero(1, static_cast<Eigen::Index>(layer.candidates.size())));
    layers_.push_back(std::move(layer));
  }
}

std::vector<Param*> Supernet::weight_params() {
  std::vector<Param*> out;
  for (auto& layer : layers_) {
    for (auto& op : layer.ops) {
      for (Param* p : op.trainable()) out.push_back(p);
    }
  }
  return out;
}

std::vector<Param*> Supernet::alpha_params() {
  std::vector<Param*> out;
  for (auto& layer : layers_) out.push_back(&layer.alpha);
  return out;
}

std::size_t Supernet::space_size() const {
  std::size_t n = 1;
  for (const auto& layer : layers_) n *= layer.candidates.size();
  return n;
}

namespace {

// ReLU, remember the pre-dropout activation, then dropout.
ad::Var between_layers(ad::Tape& tape, ad::Var out, double dropout, const ForwardOptions& opts, ad::Var& hidden) {
  ad::Var h = ad::relu(out);
  hidden = h;
  if (!opts.eval_mode && dropout > 0.0) {
    if (opts.dropout_rng == nullptr) throw std::invalid_argument("forward: training mode needs a dropout rng");
    h = ad::mul(h, tape.constant(dropout_mask(h.rows(), h.cols(), dropout, *opts.dropout_rng)));
  }
  return h;
}

}  // namespace

ForwardResult supernet_forward(ad::Tape& tape, Supernet& net, ad::Var x, const MessageGraph& mg, ad::Var edge_mask,
                               const ForwardOptions& opts) {
  if (x.cols() != net.layer(0).in_dim) throw std::invalid_argument("supernet_forward: feature width mismatch");
  ad::Var h = x;
  ad::Var hidden = x;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    MixedLayer& layer = net.layer(l);
    if (l > 0) h = between_layers(tape, h, net.config().dropout, opts, hidden);
    const ad::Var alpha = opts.alpha == Binding::Trainable ? tape.param(layer.alpha) : tape.constant(layer.alpha.value);
    const ad::Var probs = ad::softmax_rows(alpha);
    ad::Var mixed;
    for (std::size_t o = 0; o < layer.ops.size(); ++o) {
      const ad::Var term =
          ad::scale_by_entry(op_forward(tape, layer.ops[o], h, mg, edge_mask, opts.weights), probs, static_cast<Eigen::Index>(o));
      mixed = o == 0 ? term : ad::add(mixed, term);
    }
    h = mixed;
  }
  return {h, hidden};
}

ForwardResult chain_forward(ad::Tape& tape, std::vector<OpWeights*> layers, double dropout, ad::Var x,
                            const MessageGraph& mg, ad::Var edge_mask, const ForwardOptions& opts) {
  if (layers.empty()) throw std::invalid_argument("chain_forward: no layers");
  ad::Var h = x;
  ad::Var hidden = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (l > 0) h = between_layers(tape, h, dropout, opts, hidden);
    h = op_forward(tape, *layers[l], h, mg, edge_mask, opts.weights);
  }
  return {h, hidden};
}

ForwardResult discrete_forward(ad::Tape& tape, Supernet& net, const Architecture& arch, ad::Var x,
                               const MessageGraph& mg, ad::Var edge_mask, const ForwardOptions& opts) {
  if (arch.ops.size() != net.num_layers()) throw std::invalid_argument("discrete_forward: architecture depth mismatch");
  std::vector<OpWeights*> layers;
  for (std::size_t l = 0; l < arch.ops.size(); ++l) {
    auto& ops = net.layer(l).ops;
    if (arch.ops[l] < 0 || static_cast<std::size_t>(arch.ops[l]) >= ops.size()) {
      throw std::out_of_range("discrete_forward: op index out of range");
    }
    layers.push_back(&ops[static_cast<std::size_t>(arch.ops[l])]);
  }
  return chain_forward(tape, layers, net.config().dropout, x, mg, edge_mask, opts);
}

std::vector<std::vector<double>> arch_probs(const std::vector<std::vector<double>>& alphas) {
  std::vector<std::vector<double>> out;
  for (const auto& a : alphas) out.push_back(softmax_vec(a));
  return out;
}

std::vector<std::vector<double>> arch_probs(const Supernet& net) {
  std::vector<std::vector<double>> alphas;
  for (std::size_t l = 0; l < net.num_layers(); ++l) alphas.push_back(to_vector(net.layer(l).alpha.value));
  return arch_probs(alphas);
}

namespace {

bool ranks_before(const RankedArchitecture& a, const RankedArchitecture& b) {
  if (a.probability != b.probability) return a.probability > b.probability;
  return a.arch.ops < b.arch.ops;
}

}  // namespace

std::vector<RankedArchitecture> top_k_architectures(const std::vector<std::vector<double>>& layer_probs, std::size_t k) {
  if (k == 0) throw std::invalid_argument("top_k_architectures: K must be >= 1");
  std::size_t space = 1;
  for (const auto& p : layer_probs) {
    if (p.empty()) throw std::invalid_argument("top_k_architectures: empty layer");
    space *= p.size();
  }
  if (k > space) {
    throw std::invalid_argument("top_k_architectures: K=" + std::to_string(k) + " exceeds the " + std::to_string(space) +
                                " architectures in the space");
  }
  // Layer-wise beam over prefixes. A prefix outside the top K can only reach
  // the final top K through rounding ties, so the beam also keeps every
  // prefix within a relative 1e-9 of the K-th best.
  std::vector<RankedArchitecture> beam{{Architecture{}, 1.0}};
  for (const auto& probs : layer_probs) {
    std::vector<RankedArchitecture> next;
    next.reserve(beam.size() * probs.size());
    for (const auto& prefix : beam) {
      for (std::size_t o = 0; o < probs.size(); ++o) {
        RankedArchitecture cand = prefix;
        cand.arch.ops.push_back(static_cast<int>(o));
        cand.probability = prefix.probability * probs[o];
        next.push_back(std::move(cand));
      }
    }
    std::sort(next.begin(), next.end(), ranks_before);
    if (next.size() > k) {
      const double cutoff = next[k - 1].probability * (1.0 - 1e-9);
      std::size_t keep = k;
      while (keep < next.size() && next[keep].probability >= cutoff) ++keep;
      next.resize(keep);
    }
    beam = std::move(next);
  }
  beam.resize(k);
  return beam;
}

std::vector<RankedArchitecture> top_k_architectures(const Supernet& net, std::size_t k) {
  return top_k_architectures(arch_probs(net), k);
}

Architecture induce_architecture(const Supernet& net) {
  Architecture arch;
  for (std::size_t l = 0; l < net.num_layers(); ++l) {
    const Matrix& a = net.layer(l).alpha.value;
    int best = 0;
    for (Eigen::Index o = 1; o < a.cols(); ++o) {
      if (a(0, o) > a(0, best)) best = static_cast<int>(o);
    }
    arch.ops.push_back(best);
  }
  return arch;
}

std::vector<OpKind> architecture_kinds(const Supernet& net, const Architecture& arch) {
  if (arch.ops.size() != net.num_layers()) throw std::invalid_argument("architecture_kinds: depth mismatch");
  std::vector<OpKind> out;
  for (std::size_t l = 0; l < arch.ops.size(); ++l) out.push_back(net.layer(l).candidates.at(static_cast<std::size_t>(arch.ops[l])));
  return out;
}

nlohmann::json architecture_to_json(const std::vector<OpKind>& kinds) {
  nlohmann::json j = nlohmann::json::array();
  for (OpKind k : kinds) j.push_back(std::string(op_name(k)));
  return j;
}

std::vector<OpKind> architecture_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.empty()) throw std::invalid_argument("architecture JSON must be a nonempty list of op names");
  std::vector<OpKind> out;
  for (const auto& x : j) {
    if (!x.is_string()) throw std::invalid_argument("architecture JSON entries must be strings");
    out.push_back(parse_op_kind(x.get<std::string>()));
  }
  return out;
}

}  // namespace gassip
