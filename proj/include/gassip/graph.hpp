#pragma once

#include "gassip/kernels.hpp"
#include "gassip/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gassip {

struct UndirectedEdge {
  NodeId u = 0;
  NodeId v = 0;  // u < v

  auto operator<=>(const UndirectedEdge&) const = default;
};

struct Splits {
  IndexList train;
  IndexList val;
  IndexList test;

  bool operator==(const Splits&) const = default;
};

/// Undirected attributed graph with canonical (u < v, sorted, unique) edges.
struct SparseGraph {
  std::string name;
  std::size_t num_nodes = 0;
  std::vector<UndirectedEdge> edges;
  Matrix features;  // N x D0
  std::vector<int> labels;
  int num_classes = 0;
  Splits splits;

  std::size_t num_features() const { return static_cast<std::size_t>(features.cols()); }
  /// Every node outside the training split.
  IndexList unlabeled_nodes() const;
  IndexList all_nodes() const;

  bool operator==(const SparseGraph& o) const;
};

/// Throws std::invalid_argument when an invariant of SparseGraph is violated.
void validate(const SparseGraph& g);

/// Sorts, deduplicates and orients edges as u < v, dropping self-loops.
struct CanonicalizeStats {
  std::size_t self_loops_dropped = 0;
  std::size_t duplicates_dropped = 0;
};
std::vector<UndirectedEdge> canonicalize_edges(std::span<const std::pair<NodeId, NodeId>> raw,
                                               CanonicalizeStats* stats = nullptr);

/// Entries of D^-1/2 (A + I) D^-1/2. `directed` is aligned with the directed
/// layout of MessageGraph: entry 2e is u->v, entry 2e+1 is v->u.
struct NormCoefficients {
  std::vector<double> self_loop;
  std::vector<double> directed;
};

NormCoefficients gcn_norm(const SparseGraph& g);

/// Message-passing view of a SparseGraph.
///
/// `directed` expands undirected edge e = (u, v) into 2e: u->v and 2e+1: v->u.
/// `propagation` lists the N self-loops first, then `directed`; its weights
/// are `self_coef` followed by `directed_coef` (times the edge mask).
struct MessageGraph {
  std::size_t num_nodes = 0;
  DirectedEdges directed;
  std::vector<NodeId> undirected_id;
  DirectedEdges propagation;
  std::vector<double> self_coef;
  std::vector<double> directed_coef;
};

MessageGraph make_message_graph(const SparseGraph& g, const NormCoefficients& norm);
inline MessageGraph make_message_graph(const SparseGraph& g) { return make_message_graph(g, gcn_norm(g)); }

/// Neighbor lists in ascending order.
std::vector<IndexList> adjacency(const SparseGraph& g);
/// Undirected edge ids incident to each node.
std::vector<IndexList> incident_edges(const SparseGraph& g);

/// Same nodes, features and splits; only edges with keep[e] != 0.
SparseGraph retain_edges(const SparseGraph& g, std::span<const std::uint8_t> keep);

// ---------------------------------------------------------------------------
// Portable directory format

enum class GraphErrorKind { MissingFile, Parse, ShapeMismatch, InvalidIndex, LabelOutOfRange };

class GraphIoError : public std::runtime_error {
 public:
  GraphIoError(GraphErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  GraphErrorKind kind() const { return kind_; }

 private:
  GraphErrorKind kind_;
};

struct LoadStats {
  CanonicalizeStats edges;
};

SparseGraph load_graph(const std::filesystem::path& dir, LoadStats* stats = nullptr);
void save_graph(const SparseGraph& g, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Synthetic graphs

struct SbmParams {
  std::vector<std::size_t> block_sizes{100, 100};
  double p_in = 0.1;
  double p_out = 0.01;
  std::size_t feature_dim = 16;
  double mean_separation = 1.0;
  double sigma = 1.0;
  std::uint64_t seed = 0;
};

struct SyntheticMeta {
  std::vector<std::size_t> noise_edge_ids;
  SbmParams params;
  std::uint64_t noise_seed = 0;
};

struct SyntheticGraph {
  SparseGraph graph;
  SyntheticMeta meta;
};

/// Stochastic block model: labels are block ids, features are class-mean
/// Gaussians with pairwise mean distance `mean_separation`, split 50/25/25
/// stratified by class.
SyntheticGraph gen_sbm(const SbmParams& params);

/// Adds `count` uniformly sampled absent undirected edges. The returned meta
/// lists the injected edges' ids in the new (re-sorted) edge list.
SyntheticGraph inject_noise_edges(const SparseGraph& g, std::size_t count, std::uint64_t seed);

/// gen_sbm followed by inject_noise_edges with a seed derived from params.seed.
SyntheticGraph gen_noisy_sbm(const SbmParams& params, std::size_t noise_edges);

void save_synthetic_meta(const SyntheticMeta& meta, const std::filesystem::path& dir);
std::optional<SyntheticMeta> load_synthetic_meta(const std::filesystem::path& dir);

}  // namespace gassip
