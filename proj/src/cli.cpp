#include "gassip/cli.hpp"

#include "gassip/errors.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <toml.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace gassip {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes.
constexpr int kOk = 0;
constexpr int kUsage = 2;
constexpr int kData = 3;
constexpr int kNumerical = 4;

std::size_t toml_size(const toml::node& node, const std::string& key) {
  const auto v = node.value<std::int64_t>();
  if (!node.is_integer() || !v || *v < 0) throw ConfigError("search." + key + ": expected a non-negative integer");
  return static_cast<std::size_t>(*v);
}

double toml_double(const toml::node& node, const std::string& key) {
  if (!node.is_number()) throw ConfigError("search." + key + ": expected a number");
  return *node.value<double>();
}

std::string toml_string(const toml::node& node, const std::string& key) {
  if (!node.is_string()) throw ConfigError("search." + key + ": expected a string");
  return *node.value<std::string>();
}

void apply_key(SearchConfig& c, const std::string& key, const toml::node& v) {
  if (key == "epochs") c.epochs = toml_size(v, key);
  else if (key == "warmup") c.warmup = toml_size(v, key);
  else if (key == "k") c.k = toml_size(v, key);
  else if (key == "lambda1") c.lambda1 = toml_double(v, key);
  else if (key == "lambda2") c.lambda2 = toml_double(v, key);
  else if (key == "beta") c.beta = toml_double(v, key);
  else if (key == "smoothing") c.smoothing = toml_double(v, key);
  else if (key == "lr_weights") c.lr_weights = toml_double(v, key);
  else if (key == "lr_alpha") c.lr_alpha = toml_double(v, key);
  else if (key == "lr_structure") c.lr_structure = toml_double(v, key);
  else if (key == "dropout") c.dropout = toml_double(v, key);
  else if (key == "hidden") c.hidden = toml_size(v, key);
  else if (key == "layers") c.layers = toml_size(v, key);
  else if (key == "retrain_epochs") c.retrain_epochs = toml_size(v, key);
  else if (key == "retrain_runs") c.retrain_runs = toml_size(v, key);
  else if (key == "seed") c.seed = toml_size(v, key);
  else if (key == "structure_score_init") c.structure_score_init = toml_double(v, key);
  else if (key == "gamma_init") c.gamma_init = toml_double(v, key);
  else if (key == "weight_mask_init") c.weight_mask_init = toml_double(v, key);
  else if (key == "candidates") {
    const toml::array* arr = v.as_array();
    if (arr == nullptr) throw ConfigError("search.candidates: expected an array of op names");
    c.candidates.clear();
    for (const auto& item : *arr) {
      try {
        c.candidates.push_back(parse_op_kind(toml_string(item, key)));
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("search.candidates: ") + e.what());
      }
    }
  } else if (key == "loss_nodes") {
    const auto s = toml_string(v, key);
    if (s == "all") c.loss_nodes = LossNodeSet::All;
    else if (s == "labeled") c.loss_nodes = LossNodeSet::Labeled;
    else throw ConfigError("search.loss_nodes: expected \"all\" or \"labeled\"");
  } else if (key == "smoothing_scale") {
    const auto s = toml_string(v, key);
    if (s == "absolute") c.smoothing_scale = SmoothingScale::Absolute;
    else if (s == "relative") c.smoothing_scale = SmoothingScale::Relative;
    else throw ConfigError("search.smoothing_scale: expected \"absolute\" or \"relative\"");
  } else if (key == "node_view") {
    const auto s = toml_string(v, key);
    if (s == "lower") c.node_view = NodeView::LowerEndpoint;
    else if (s == "symmetric") c.node_view = NodeView::Symmetric;
    else throw ConfigError("search.node_view: expected \"lower\" or \"symmetric\"");
  } else {
    throw ConfigError("unknown config key search." + key);
  }
}

std::size_t threads_from_env() {
  const char* raw = std::getenv("GASSIP_THREADS");
  if (raw == nullptr || *raw == '\0') return 1;
  char* end = nullptr;
  const long n = std::strtol(raw, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("GASSIP_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

StructureMask read_mask(const fs::path& path, std::size_t num_edges) {
  StructureMask mask;
  try {
    mask = mask_from_json(read_json_file(path));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (mask.size() != num_edges) {
    throw ConfigError(path.string() + ": mask has " + std::to_string(mask.size()) + " entries but the graph has " +
                      std::to_string(num_edges) + " edges");
  }
  return mask;
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(static_cast<int>(m(r, c)));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (static_cast<Eigen::Index>(rows[r].size()) != m.cols()) throw ConfigError("weight mask rows differ in length");
    for (std::size_t c = 0; c < rows[r].size(); ++c) m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return m;
}

json weight_masks_json(const std::vector<OpKind>& arch, const WeightMasks& masks) {
  json layers = json::array();
  for (std::size_t l = 0; l < arch.size(); ++l) {
    json tensors = json::array();
    for (const auto& m : masks[l]) tensors.push_back(matrix_json(m));
    layers.push_back({{"op", std::string(op_name(arch[l]))}, {"tensors", tensors}});
  }
  return {{"layers", layers}};
}

WeightMasks weight_masks_from_json(const json& j, const std::vector<OpKind>& arch) {
  WeightMasks out;
  try {
    const auto& layers = j.at("layers");
    if (layers.size() != arch.size()) throw ConfigError("weight masks: one entry per layer required");
    for (std::size_t l = 0; l < arch.size(); ++l) {
      if (parse_op_kind(layers[l].at("op").get<std::string>()) != arch[l]) {
        throw ConfigError("weight masks: layer " + std::to_string(l) + " does not match the architecture");
      }
      std::vector<Matrix> tensors;
      for (const auto& t : layers[l].at("tensors")) tensors.push_back(matrix_from_json(t));
      out.push_back(std::move(tensors));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("weight masks: ") + e.what());
  }
  return out;
}

std::vector<OpKind> read_arch(const fs::path& path) {
  const json j = read_json_file(path);
  try {
    return architecture_from_json(j.is_object() ? j.at("arch") : j);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct SearchArgs {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  bool timing_in_result = false;
};

int cmd_search(const SearchArgs& a, std::ostream& out) {
  SearchConfig config = a.config.empty() ? SearchConfig{} : load_search_config(a.config);
  if (a.seed) config.seed = *a.seed;
  config.threads = threads_from_env();
  try {
    validate(config);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const SparseGraph graph = load_graph(a.data);

  const SearchResult result = run_search(graph, config);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_json_file(dir / "result.json", metrics_report(result, config, graph.name, a.timing_in_result));
  write_json_file(dir / "arch.json", architecture_to_json(result.arch_kinds));
  write_json_file(dir / "mask.json", mask_to_json(result.mask));
  write_json_file(dir / "weight_masks.json", weight_masks_json(result.arch_kinds, result.weight_masks));
  write_json_file(dir / "timing.json", {{"wall_clock_seconds", result.wall_clock_seconds}});
  save_graph(result.sparsified, dir / "graph_sp");
  out << json{{"induced_arch", architecture_to_json(result.arch_kinds)},
              {"edges_kept", result.edges_kept},
              {"edges_total", result.edges_total},
              {"params_kept", result.params_kept},
              {"params_total", result.params_total},
              {"accuracy_mean", result.retrain.accuracy_mean},
              {"accuracy_std", result.retrain.accuracy_std}}
             .dump()
      << '\n';
  return kOk;
}

struct GenArgs {
  std::string kind = "sbm";
  std::string out;
  SbmParams params;
  std::size_t noise_edges = 0;
};

int cmd_gen(const GenArgs& a, std::ostream& out) {
  if (a.kind != "sbm") throw ConfigError("unknown generator kind '" + a.kind + "' (supported: sbm)");
  SyntheticGraph g;
  try {
    g = gen_noisy_sbm(a.params, a.noise_edges);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  save_graph(g.graph, a.out);
  save_synthetic_meta(g.meta, a.out);
  out << json{{"nodes", g.graph.num_nodes}, {"edges", g.graph.edges.size()}, {"noise_edges", g.meta.noise_edge_ids.size()}}.dump()
      << '\n';
  return kOk;
}

struct OverlapArgs {
  std::string mask_a;
  std::string mask_b;
  double ratio = 0.1;
  std::string data;
};

std::vector<double> margins(const StructureMask& m) {
  std::vector<double> out(m.size());
  for (std::size_t e = 0; e < out.size(); ++e) out[e] = m.scores.value(static_cast<Eigen::Index>(e), 0) - m.gamma.value(0, 0);
  return out;
}

int cmd_overlap(const OverlapArgs& a, std::ostream& out) {
  if (!(a.ratio > 0.0 && a.ratio <= 1.0)) throw ConfigError("--ratio must lie in (0, 1]");
  const SparseGraph graph = load_graph(a.data);
  const auto ma = read_mask(a.mask_a, graph.edges.size());
  const auto mb = read_mask(a.mask_b, graph.edges.size());
  const auto ra = lowest_fraction(margins(ma), a.ratio);
  const auto rb = lowest_fraction(margins(mb), a.ratio);
  out << json{{"overlap", overlap(ra, rb, a.ratio, graph.edges.size())}}.dump() << '\n';
  return kOk;
}

struct RetrainArgs {
  std::string arch;
  std::string data;
  std::string mask;
  std::string weight_masks;
  std::size_t runs = 10;
  std::string out;
  std::uint64_t seed = 0;
  RetrainOptions options;
};

int cmd_retrain(RetrainArgs a, std::ostream& out) {
  if (a.runs == 0) throw ConfigError("--runs must be >= 1");
  if (!(a.options.dropout >= 0.0 && a.options.dropout < 1.0)) throw ConfigError("--dropout must lie in [0, 1)");
  a.options.threads = threads_from_env();
  const auto arch = read_arch(a.arch);
  SparseGraph graph = load_graph(a.data);
  const std::size_t edges_total = graph.edges.size();
  if (!a.mask.empty()) graph = retain_edges(graph, binarize_structure(read_mask(a.mask, graph.edges.size())));
  std::optional<WeightMasks> masks;
  if (!a.weight_masks.empty()) masks = weight_masks_from_json(read_json_file(a.weight_masks), arch);

  const auto seeds = retrain_seeds(a.seed, a.runs);
  RetrainMetrics m;
  try {
    m = retrain_and_eval(arch, masks ? &*masks : nullptr, graph, a.options, seeds);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }

  json runs = json::array();
  for (const auto& r : m.runs) {
    runs.push_back({{"seed", r.seed}, {"test_acc", r.test_acc}, {"best_val_acc", r.best_val_acc}, {"best_epoch", r.best_epoch}});
  }
  const json config = {{"arch", architecture_to_json(arch)},
                       {"runs", a.runs},
                       {"seed", a.seed},
                       {"epochs", a.options.epochs},
                       {"hidden", a.options.hidden},
                       {"dropout", a.options.dropout},
                       {"lr", a.options.lr},
                       {"mask", a.mask},
                       {"weight_masks", a.weight_masks}};
  const json report = {{"dataset", graph.name},
                       {"config", config},
                       {"edges_total", edges_total},
                       {"edges_kept", graph.edges.size()},
                       {"params_total", m.params_total},
                       {"params_kept", m.params_kept},
                       {"accuracy_mean", m.accuracy_mean},
                       {"accuracy_std", m.accuracy_std},
                       {"retrain_runs", runs}};
  fs::create_directories(a.out);
  write_json_file(fs::path(a.out) / "retrain.json", report);
  out << json{{"accuracy_mean", m.accuracy_mean}, {"accuracy_std", m.accuracy_std}}.dump() << '\n';
  return kOk;
}

}  // namespace

SearchConfig parse_search_config(std::string_view toml_text) {
  toml::table doc;
  try {
    doc = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "config: " << e.description() << " (line " << e.source().begin.line << ")";
    throw ConfigError(msg.str());
  }
  SearchConfig c;
  for (const auto& [key, node] : doc) {
    if (key.str() != "search") throw ConfigError("unknown config table or key '" + std::string(key.str()) + "'");
    const toml::table* search = node.as_table();
    if (search == nullptr) throw ConfigError("config: 'search' must be a table");
    for (const auto& [k, v] : *search) apply_key(c, std::string(k.str()), v);
  }
  return c;
}

SearchConfig load_search_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse_search_config(text.str());
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint graph architecture search and graph sparsification"};
  app.require_subcommand(1);

  SearchArgs search;
  auto* s = app.add_subcommand("search", "run the search and retrain the induced architecture");
  s->add_option("--config", search.config, "TOML file with a [search] table");
  s->add_option("--data", search.data, "graph directory")->required();
  s->add_option("--out", search.out, "output directory")->required();
  s->add_option("--seed", search.seed, "overrides the config seed");
  s->add_flag("--timing-in-result", search.timing_in_result, "also write wall_clock_seconds into result.json");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "generate a synthetic graph");
  g->add_option("--kind", gen.kind, "generator (sbm)");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_option("--block-sizes", gen.params.block_sizes, "nodes per block")->expected(1, -1);
  g->add_option("--p-in", gen.params.p_in, "within-block edge probability");
  g->add_option("--p-out", gen.params.p_out, "between-block edge probability");
  g->add_option("--feature-dim", gen.params.feature_dim, "feature width");
  g->add_option("--separation", gen.params.mean_separation, "distance between class means");
  g->add_option("--sigma", gen.params.sigma, "feature noise std");
  g->add_option("--noise-edges", gen.noise_edges, "random edges added after generation");
  g->add_option("--seed", gen.params.seed, "generator seed");

  OverlapArgs ov;
  auto* o = app.add_subcommand("overlap", "overlap of the lowest-scored edges of two masks");
  o->add_option("--mask-a", ov.mask_a, "mask checkpoint")->required();
  o->add_option("--mask-b", ov.mask_b, "mask checkpoint")->required();
  o->add_option("--ratio", ov.ratio, "removal ratio p");
  o->add_option("--data", ov.data, "graph directory the masks belong to")->required();

  RetrainArgs rt;
  auto* r = app.add_subcommand("retrain", "retrain a fixed architecture over several seeds");
  r->add_option("--arch", rt.arch, "architecture JSON")->required();
  r->add_option("--data", rt.data, "graph directory")->required();
  r->add_option("--mask", rt.mask, "structure mask checkpoint; drops edges below the threshold");
  r->add_option("--weight-masks", rt.weight_masks, "binary weight masks written by search");
  r->add_option("--runs", rt.runs, "number of seeds");
  r->add_option("--out", rt.out, "output directory")->required();
  r->add_option("--seed", rt.seed, "first seed");
  r->add_option("--epochs", rt.options.epochs, "training epochs per run");
  r->add_option("--hidden", rt.options.hidden, "hidden width");
  r->add_option("--dropout", rt.options.dropout, "dropout rate");
  r->add_option("--lr", rt.options.lr, "Adam learning rate");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) return cmd_search(search, out);
    if (g->parsed()) return cmd_gen(gen, out);
    if (o->parsed()) return cmd_overlap(ov, out);
    return cmd_retrain(rt, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const GraphIoError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace gassip
