#include "gassip/graph.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace gassip {

namespace fs = std::filesystem;
using nlohmann::json;

IndexList SparseGraph::unlabeled_nodes() const {
  std::vector<std::uint8_t> is_train(num_nodes, 0);
  for (NodeId i : splits.train) is_train[static_cast<std::size_t>(i)] = 1;
  IndexList out;
  for (std::size_t i = 0; i < num_nodes; ++i) {
    if (!is_train[i]) out.push_back(static_cast<NodeId>(i));
  }
  return out;
}

IndexList SparseGraph::all_nodes() const {
  IndexList out(num_nodes);
  std::iota(out.begin(), out.end(), 0);
  return out;
}

bool SparseGraph::operator==(const SparseGraph& o) const {
  return name == o.name && num_nodes == o.num_nodes && edges == o.edges && features.rows() == o.features.rows() &&
         features.cols() == o.features.cols() && features == o.features && labels == o.labels &&
         num_classes == o.num_classes && splits == o.splits;
}

void validate(const SparseGraph& g) {
  const auto n = static_cast<NodeId>(g.num_nodes);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto& ed = g.edges[e];
    if (ed.u < 0 || ed.v >= n || ed.u >= ed.v) throw std::invalid_argument("graph: edge not canonical or out of range");
    if (e > 0 && !(g.edges[e - 1] < ed)) throw std::invalid_argument("graph: edges not sorted/unique");
  }
  if (static_cast<std::size_t>(g.features.rows()) != g.num_nodes) throw std::invalid_argument("graph: feature rows != N");
  if (g.labels.size() != g.num_nodes) throw std::invalid_argument("graph: label count != N");
  std::vector<std::uint8_t> seen(g.num_nodes, 0);
  for (const IndexList* split : {&g.splits.train, &g.splits.val, &g.splits.test}) {
    for (NodeId i : *split) {
      if (i < 0 || i >= n) throw std::invalid_argument("graph: split index out of range");
      if (seen[static_cast<std::size_t>(i)]++) throw std::invalid_argument("graph: splits overlap");
      const int y = g.labels[static_cast<std::size_t>(i)];
      if (y < 0 || y >= g.num_classes) throw std::invalid_argument("graph: labeled node without a valid class");
    }
  }
}

std::vector<UndirectedEdge> canonicalize_edges(std::span<const std::pair<NodeId, NodeId>> raw,
                                               CanonicalizeStats* stats) {
  std::vector<UndirectedEdge> out;
  out.reserve(raw.size());
  std::size_t loops = 0;
  for (const auto& [a, b] : raw) {
    if (a == b) {
      ++loops;
      continue;
    }
    out.push_back({std::min(a, b), std::max(a, b)});
  }
  std::sort(out.begin(), out.end());
  const std::size_t before = out.size();
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (stats != nullptr) {
    stats->self_loops_dropped = loops;
    stats->duplicates_dropped = before - out.size();
  }
  return out;
}

NormCoefficients gcn_norm(const SparseGraph& g) {
  std::vector<double> degree(g.num_nodes, 1.0);
  for (const auto& e : g.edges) {
    degree[static_cast<std::size_t>(e.u)] += 1.0;
    degree[static_cast<std::size_t>(e.v)] += 1.0;
  }
  NormCoefficients norm;
  norm.self_loop.resize(g.num_nodes);
  for (std::size_t i = 0; i < g.num_nodes; ++i) norm.self_loop[i] = 1.0 / degree[i];
  norm.directed.resize(2 * g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const double c = 1.0 / std::sqrt(degree[static_cast<std::size_t>(g.edges[e].u)] *
                                     degree[static_cast<std::size_t>(g.edges[e].v)]);
    norm.directed[2 * e] = c;
    norm.directed[2 * e + 1] = c;
  }
  return norm;
}

MessageGraph make_message_graph(const SparseGraph& g, const NormCoefficients& norm) {
  if (norm.self_loop.size() != g.num_nodes || norm.directed.size() != 2 * g.edges.size()) {
    throw std::invalid_argument("make_message_graph: coefficients do not match graph");
  }
  MessageGraph mg;
  mg.num_nodes = g.num_nodes;
  mg.self_coef = norm.self_loop;
  mg.directed_coef = norm.directed;
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    mg.directed.push_back(g.edges[e].u, g.edges[e].v);
    mg.directed.push_back(g.edges[e].v, g.edges[e].u);
    mg.undirected_id.push_back(static_cast<NodeId>(e));
    mg.undirected_id.push_back(static_cast<NodeId>(e));
  }
  for (std::size_t i = 0; i < g.num_nodes; ++i) mg.propagation.push_back(static_cast<NodeId>(i), static_cast<NodeId>(i));
  for (std::size_t k = 0; k < mg.directed.size(); ++k) mg.propagation.push_back(mg.directed.src[k], mg.directed.dst[k]);
  return mg;
}

std::vector<IndexList> adjacency(const SparseGraph& g) {
  std::vector<IndexList> adj(g.num_nodes);
  for (const auto& e : g.edges) {
    adj[static_cast<std::size_t>(e.u)].push_back(e.v);
    adj[static_cast<std::size_t>(e.v)].push_back(e.u);
  }
  for (auto& a : adj) std::sort(a.begin(), a.end());
  return adj;
}

std::vector<IndexList> incident_edges(const SparseGraph& g) {
  std::vector<IndexList> inc(g.num_nodes);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    inc[static_cast<std::size_t>(g.edges[e].u)].push_back(static_cast<NodeId>(e));
    inc[static_cast<std::size_t>(g.edges[e].v)].push_back(static_cast<NodeId>(e));
  }
  return inc;
}

SparseGraph retain_edges(const SparseGraph& g, std::span<const std::uint8_t> keep) {
  if (keep.size() != g.edges.size()) throw std::invalid_argument("retain_edges: keep mask must cover every edge");
  SparseGraph out = g;
  out.edges.clear();
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    if (keep[e]) out.edges.push_back(g.edges[e]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Portable format

namespace {

std::ifstream open_input(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw GraphIoError(GraphErrorKind::MissingFile, "missing file: " + p.string());
  return in;
}

json read_json(const fs::path& p) {
  auto in = open_input(p);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw GraphIoError(GraphErrorKind::Parse, p.string() + ": " + e.what());
  }
}

template <typename T>
T parse_number(std::string_view s, const fs::path& file, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw GraphIoError(GraphErrorKind::Parse,
                       file.string() + ":" + std::to_string(line) + ": cannot parse '" + std::string(s) + "'");
  }
  return value;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

bool blank(const std::string& s) { return s.find_first_not_of(" \t\r") == std::string::npos; }

std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw GraphIoError(GraphErrorKind::MissingFile, "cannot write " + p.string());
  out << text;
}

IndexList read_index_list(const json& j, const char* key, const fs::path& file) {
  if (!j.contains(key) || !j[key].is_array()) {
    throw GraphIoError(GraphErrorKind::Parse, file.string() + ": missing array '" + key + "'");
  }
  IndexList out;
  for (const auto& x : j[key]) {
    if (!x.is_number_integer()) throw GraphIoError(GraphErrorKind::Parse, file.string() + ": non-integer id");
    out.push_back(x.get<NodeId>());
  }
  return out;
}

}  // namespace

SparseGraph load_graph(const fs::path& dir, LoadStats* stats) {
  if (!fs::is_directory(dir)) throw GraphIoError(GraphErrorKind::MissingFile, "not a directory: " + dir.string());
  SparseGraph g;
  std::size_t num_features = 0;
  {
    const auto meta_path = dir / "meta.json";
    const json meta = read_json(meta_path);
    try {
      g.num_nodes = meta.at("num_nodes").get<std::size_t>();
      num_features = meta.at("num_features").get<std::size_t>();
      g.num_classes = meta.at("num_classes").get<int>();
      g.name = meta.value("name", std::string{});
    } catch (const json::exception& e) {
      throw GraphIoError(GraphErrorKind::Parse, meta_path.string() + ": " + e.what());
    }
  }
  const auto n = static_cast<NodeId>(g.num_nodes);

  {
    const auto path = dir / "edges.csv";
    auto in = open_input(path);
    std::string line;
    std::vector<std::pair<NodeId, NodeId>> raw;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (lineno == 1 && line.rfind("src", 0) == 0) continue;
      if (blank(line)) continue;
      const auto fields = split_commas(line);
      if (fields.size() != 2) {
        throw GraphIoError(GraphErrorKind::ShapeMismatch, path.string() + ":" + std::to_string(lineno) + ": expected 2 fields");
      }
      const auto a = parse_number<NodeId>(fields[0], path, lineno);
      const auto b = parse_number<NodeId>(fields[1], path, lineno);
      if (a < 0 || b < 0 || a >= n || b >= n) {
        throw GraphIoError(GraphErrorKind::InvalidIndex, path.string() + ":" + std::to_string(lineno) + ": node id out of range");
      }
      raw.emplace_back(a, b);
    }
    CanonicalizeStats cs;
    g.edges = canonicalize_edges(raw, &cs);
    if (stats != nullptr) stats->edges = cs;
  }

  {
    const auto path = dir / "features.csv";
    auto in = open_input(path);
    g.features = Matrix::Zero(static_cast<Eigen::Index>(g.num_nodes), static_cast<Eigen::Index>(num_features));
    std::string line;
    std::size_t row = 0;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (blank(line) && num_features > 0) continue;
      if (row >= g.num_nodes) throw GraphIoError(GraphErrorKind::ShapeMismatch, path.string() + ": more rows than num_nodes");
      if (num_features > 0) {
        const auto fields = split_commas(line);
        if (fields.size() != num_features) {
          throw GraphIoError(GraphErrorKind::ShapeMismatch,
                             path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(num_features) + " values");
        }
        for (std::size_t c = 0; c < num_features; ++c) {
          g.features(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(c)) = parse_number<double>(fields[c], path, lineno);
        }
      }
      ++row;
    }
    if (row != g.num_nodes && num_features > 0) {
      throw GraphIoError(GraphErrorKind::ShapeMismatch, path.string() + ": expected " + std::to_string(g.num_nodes) + " rows");
    }
  }

  {
    const auto path = dir / "labels.csv";
    auto in = open_input(path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (blank(line)) continue;
      const int y = parse_number<int>(line, path, lineno);
      if (y < 0 || y >= g.num_classes) {
        throw GraphIoError(GraphErrorKind::LabelOutOfRange, path.string() + ":" + std::to_string(lineno) + ": label out of range");
      }
      g.labels.push_back(y);
    }
    if (g.labels.size() != g.num_nodes) {
      throw GraphIoError(GraphErrorKind::ShapeMismatch, path.string() + ": expected " + std::to_string(g.num_nodes) + " labels");
    }
  }

  {
    const auto path = dir / "splits.json";
    const json j = read_json(path);
    g.splits.train = read_index_list(j, "train", path);
    g.splits.val = read_index_list(j, "val", path);
    g.splits.test = read_index_list(j, "test", path);
    std::vector<std::uint8_t> seen(g.num_nodes, 0);
    for (const IndexList* s : {&g.splits.train, &g.splits.val, &g.splits.test}) {
      for (NodeId i : *s) {
        if (i < 0 || i >= n) throw GraphIoError(GraphErrorKind::InvalidIndex, path.string() + ": split id out of range");
        if (seen[static_cast<std::size_t>(i)]++) {
          throw GraphIoError(GraphErrorKind::InvalidIndex, path.string() + ": node " + std::to_string(i) + " in two splits");
        }
      }
    }
  }
  return g;
}

void save_graph(const SparseGraph& g, const fs::path& dir) {
  fs::create_directories(dir);
  const json meta = {{"name", g.name},
                     {"num_classes", g.num_classes},
                     {"num_features", g.num_features()},
                     {"num_nodes", g.num_nodes}};
  write_text(dir / "meta.json", meta.dump(2) + "\n");

  std::string edges = "src,dst\n";
  for (const auto& e : g.edges) edges += std::to_string(e.u) + "," + std::to_string(e.v) + "\n";
  write_text(dir / "edges.csv", edges);

  std::string features;
  for (Eigen::Index i = 0; i < g.features.rows(); ++i) {
    for (Eigen::Index c = 0; c < g.features.cols(); ++c) {
      if (c > 0) features += ',';
      features += format_double(g.features(i, c));
    }
    features += '\n';
  }
  write_text(dir / "features.csv", features);

  std::string labels;
  for (int y : g.labels) labels += std::to_string(y) + "\n";
  write_text(dir / "labels.csv", labels);

  const json splits = {{"test", g.splits.test}, {"train", g.splits.train}, {"val", g.splits.val}};
  write_text(dir / "splits.json", splits.dump() + "\n");
}

// ---------------------------------------------------------------------------
// Synthetic graphs

namespace {

void shuffle(IndexList& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(v[i - 1], v[j]);
  }
}

json sbm_params_json(const SbmParams& p) {
  return {{"block_sizes", p.block_sizes}, {"feature_dim", p.feature_dim}, {"mean_separation", p.mean_separation},
          {"p_in", p.p_in},               {"p_out", p.p_out},             {"seed", p.seed},
          {"sigma", p.sigma}};
}

}  // namespace

SyntheticGraph gen_sbm(const SbmParams& params) {
  if (params.block_sizes.empty()) throw std::invalid_argument("gen_sbm: block_sizes must be nonempty");
  for (double p : {params.p_in, params.p_out}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("gen_sbm: probabilities must lie in [0, 1]");
  }
  const std::size_t num_blocks = params.block_sizes.size();
  if (params.feature_dim < num_blocks) throw std::invalid_argument("gen_sbm: feature_dim must be >= number of blocks");

  const Rng root(params.seed);
  Rng edge_rng = root.split(1);
  Rng feature_rng = root.split(2);
  Rng split_rng = root.split(3);

  SyntheticGraph out;
  SparseGraph& g = out.graph;
  g.name = "sbm";
  g.num_classes = static_cast<int>(num_blocks);
  for (std::size_t b = 0; b < num_blocks; ++b) g.labels.insert(g.labels.end(), params.block_sizes[b], static_cast<int>(b));
  g.num_nodes = g.labels.size();

  for (std::size_t u = 0; u < g.num_nodes; ++u) {
    for (std::size_t v = u + 1; v < g.num_nodes; ++v) {
      const double p = g.labels[u] == g.labels[v] ? params.p_in : params.p_out;
      if (edge_rng.uniform() < p) g.edges.push_back({static_cast<NodeId>(u), static_cast<NodeId>(v)});
    }
  }

  // Class means sep/sqrt(2) * e_c are pairwise mean_separation apart.
  const double offset = params.mean_separation / std::sqrt(2.0);
  g.features = Matrix::Zero(static_cast<Eigen::Index>(g.num_nodes), static_cast<Eigen::Index>(params.feature_dim));
  for (std::size_t i = 0; i < g.num_nodes; ++i) {
    for (std::size_t c = 0; c < params.feature_dim; ++c) {
      const double mean = static_cast<int>(c) == g.labels[i] ? offset : 0.0;
      g.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = mean + params.sigma * feature_rng.normal();
    }
  }

  for (int c = 0; c < g.num_classes; ++c) {
    IndexList members;
    for (std::size_t i = 0; i < g.num_nodes; ++i) {
      if (g.labels[i] == c) members.push_back(static_cast<NodeId>(i));
    }
    shuffle(members, split_rng);
    const std::size_t n_train = members.size() / 2;
    const std::size_t n_val = members.size() / 4;
    g.splits.train.insert(g.splits.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
    g.splits.val.insert(g.splits.val.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train),
                        members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    g.splits.test.insert(g.splits.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), members.end());
  }
  for (IndexList* s : {&g.splits.train, &g.splits.val, &g.splits.test}) std::sort(s->begin(), s->end());

  out.meta.params = params;
  return out;
}

SyntheticGraph inject_noise_edges(const SparseGraph& g, std::size_t count, std::uint64_t seed) {
  const std::size_t n = g.num_nodes;
  const std::size_t total_pairs = n < 2 ? 0 : n * (n - 1) / 2;
  const std::size_t absent = total_pairs - g.edges.size();
  if (count > absent) {
    throw std::invalid_argument("inject_noise_edges: requested " + std::to_string(count) + " edges but only " +
                                std::to_string(absent) + " node pairs are free");
  }
  Rng rng(seed);
  std::set<UndirectedEdge> existing(g.edges.begin(), g.edges.end());
  std::vector<UndirectedEdge> added;
  if (count > 0 && 2 * count > absent) {
    // Dense request: enumerate the free pairs and take a random prefix.
    std::vector<UndirectedEdge> free_pairs;
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = u + 1; v < n; ++v) {
        const UndirectedEdge e{static_cast<NodeId>(u), static_cast<NodeId>(v)};
        if (!existing.count(e)) free_pairs.push_back(e);
      }
    }
    for (std::size_t i = 0; i < count; ++i) {
      const auto j = i + static_cast<std::size_t>(rng.below(free_pairs.size() - i));
      std::swap(free_pairs[i], free_pairs[j]);
      added.push_back(free_pairs[i]);
    }
  } else {
    while (added.size() < count) {
      const auto a = static_cast<NodeId>(rng.below(n));
      const auto b = static_cast<NodeId>(rng.below(n));
      if (a == b) continue;
      const UndirectedEdge e{std::min(a, b), std::max(a, b)};
      if (existing.insert(e).second) added.push_back(e);
    }
  }

  SyntheticGraph out;
  out.graph = g;
  out.graph.edges.insert(out.graph.edges.end(), added.begin(), added.end());
  std::sort(out.graph.edges.begin(), out.graph.edges.end());
  std::sort(added.begin(), added.end());
  std::size_t k = 0;
  for (std::size_t e = 0; e < out.graph.edges.size() && k < added.size(); ++e) {
    if (out.graph.edges[e] == added[k]) {
      out.meta.noise_edge_ids.push_back(e);
      ++k;
    }
  }
  out.meta.noise_seed = seed;
  return out;
}

SyntheticGraph gen_noisy_sbm(const SbmParams& params, std::size_t noise_edges) {
  const SyntheticGraph clean = gen_sbm(params);
  SyntheticGraph out = inject_noise_edges(clean.graph, noise_edges, Rng(params.seed).split(4).next_u64());
  out.meta.params = params;
  return out;
}

void save_synthetic_meta(const SyntheticMeta& meta, const fs::path& dir) {
  fs::create_directories(dir);
  json params = sbm_params_json(meta.params);
  params["noise_seed"] = meta.noise_seed;
  const json j = {{"noise_edge_ids", meta.noise_edge_ids}, {"params", params}};
  write_text(dir / "synthetic.json", j.dump(2) + "\n");
}

std::optional<SyntheticMeta> load_synthetic_meta(const fs::path& dir) {
  const auto path = dir / "synthetic.json";
  if (!fs::exists(path)) return std::nullopt;
  const json j = read_json(path);
  SyntheticMeta meta;
  try {
    meta.noise_edge_ids = j.at("noise_edge_ids").get<std::vector<std::size_t>>();
    if (j.contains("params")) {
      const json& p = j["params"];
      meta.params.block_sizes = p.value("block_sizes", meta.params.block_sizes);
      meta.params.p_in = p.value("p_in", meta.params.p_in);
      meta.params.p_out = p.value("p_out", meta.params.p_out);
      meta.params.feature_dim = p.value("feature_dim", meta.params.feature_dim);
      meta.params.mean_separation = p.value("mean_separation", meta.params.mean_separation);
      meta.params.sigma = p.value("sigma", meta.params.sigma);
      meta.params.seed = p.value("seed", meta.params.seed);
      meta.noise_seed = p.value("noise_seed", std::uint64_t{0});
    }
  } catch (const json::exception& e) {
    throw GraphIoError(GraphErrorKind::Parse, path.string() + ": " + e.what());
  }
  return meta;
}

}  // namespace gassip
