#include "gassip/cli.hpp"
#include "support/tempdir.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <sstream>

#include <sys/wait.h>

using namespace gassip;
using nlohmann::json;
using testing::read_file;
using testing::TempDir;
using testing::write_file;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

constexpr const char* kSmallConfig = R"([search]
epochs = 6
warmup = 2
hidden = 8
retrain_epochs = 15
retrain_runs = 2
candidates = ["gcn", "sage"]
)";

std::string gen_small(const TempDir& dir, const std::string& name = "g") {
  const auto path = (dir / name).string();
  const auto r = run({"gen", "--kind", "sbm", "--out", path, "--block-sizes", "15", "15", "--p-in", "0.3", "--p-out", "0.05",
                      "--feature-dim", "4", "--noise-edges", "5", "--seed", "2"});
  REQUIRE(r.code == 0);
  return path;
}

}  // namespace

TEST_CASE("config parsing") {
  const SearchConfig c = parse_search_config(R"([search]
epochs = 40
lr_alpha = 0.001
beta = 0
candidates = ["GCN", "arma"]
loss_nodes = "labeled"
smoothing_scale = "absolute"
node_view = "symmetric"
)");
  CHECK(c.epochs == 40);
  CHECK(c.lr_alpha == 0.001);
  CHECK(c.beta == 0.0);
  CHECK(c.candidates == std::vector<OpKind>{OpKind::GCN, OpKind::ARMALite});
  CHECK(c.loss_nodes == LossNodeSet::Labeled);
  CHECK(c.smoothing_scale == SmoothingScale::Absolute);
  CHECK(c.node_view == NodeView::Symmetric);
  CHECK(c.k == SearchConfig{}.k);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(parse_search_config("[search]\nepoch = 3\n"), ConfigError);
  CHECK_THROWS_AS(parse_search_config("[other]\nx = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_search_config("[search]\nepochs = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_search_config("[search]\nepochs = \"ten\"\n"), ConfigError);
  CHECK_THROWS_AS(parse_search_config("[search]\ncandidates = [\"mlp\"]\n"), ConfigError);
  CHECK_THROWS_AS(parse_search_config("[search\n"), ConfigError);
}

TEST_CASE("unknown config key exits with 2") {
  TempDir dir;
  const auto data = gen_small(dir);
  write_file(dir / "bad.toml", "[search]\nwarm_up = 3\n");
  const auto r = run({"search", "--config", (dir / "bad.toml").string(), "--data", data, "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("warm_up") != std::string::npos);
}

TEST_CASE("invalid config values exit with 2") {
  TempDir dir;
  const auto data = gen_small(dir);
  write_file(dir / "bad.toml", "[search]\nk = 100\n");
  CHECK(run({"search", "--config", (dir / "bad.toml").string(), "--data", data, "--out", (dir / "o").string()}).code == 2);
}

TEST_CASE("usage errors exit with 2 and help with 0") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"search", "--data", "x"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}

TEST_CASE("gen is byte-reproducible and records the noise edges") {
  TempDir dir;
  const auto a = gen_small(dir, "a");
  const auto b = gen_small(dir, "b");
  for (const char* f : {"meta.json", "edges.csv", "features.csv", "labels.csv", "splits.json", "synthetic.json"}) {
    INFO(f);
    CHECK(read_file(std::filesystem::path(a) / f) == read_file(std::filesystem::path(b) / f));
  }
  const auto r = run({"gen", "--out", (dir / "c").string(), "--noise-edges", "20", "--seed", "1"});
  REQUIRE(r.code == 0);
  const json meta = json::parse(read_file(dir / "c" / "synthetic.json"));
  CHECK(meta["noise_edge_ids"].size() == 20);
  CHECK(json::parse(r.out)["noise_edges"] == 20);
}

TEST_CASE("gen rejects bad parameters") {
  TempDir dir;
  CHECK(run({"gen", "--out", (dir / "x").string(), "--p-in", "1.5"}).code == 2);
  CHECK(run({"gen", "--out", (dir / "x").string(), "--kind", "er"}).code == 2);
}

TEST_CASE("search writes its artifacts and echoes the seed") {
  TempDir dir;
  const auto data = gen_small(dir);
  write_file(dir / "c.toml", kSmallConfig);
  const auto out = dir / "run";
  const auto r = run({"search", "--config", (dir / "c.toml").string(), "--data", data, "--out", out.string(), "--seed", "9"});
  REQUIRE(r.code == 0);
  for (const char* f : {"result.json", "arch.json", "mask.json", "weight_masks.json", "timing.json"}) {
    INFO(f);
    CHECK(std::filesystem::exists(out / f));
  }
  CHECK(std::filesystem::exists(out / "graph_sp" / "edges.csv"));
  const json res = json::parse(read_file(out / "result.json"));
  CHECK(res["config"]["seed"] == 9);
  CHECK(res["config"]["epochs"] == 6);
  CHECK(!res.contains("wall_clock_seconds"));
  CHECK(json::parse(read_file(out / "arch.json")) == res["induced_arch"]);
  CHECK(json::parse(read_file(out / "timing.json")).contains("wall_clock_seconds"));

  const auto with_timing = dir / "run2";
  REQUIRE(run({"search", "--config", (dir / "c.toml").string(), "--data", data, "--out", with_timing.string(), "--seed", "9",
               "--timing-in-result"})
              .code == 0);
  CHECK(json::parse(read_file(with_timing / "result.json")).contains("wall_clock_seconds"));

  SUBCASE("overlap of a mask with itself is one") {
    const auto o = run({"overlap", "--mask-a", (out / "mask.json").string(), "--mask-b", (out / "mask.json").string(), "--data",
                        data, "--ratio", "0.2"});
    REQUIRE(o.code == 0);
    CHECK(json::parse(o.out)["overlap"] == 1.0);
  }

  SUBCASE("retrain the induced architecture with its masks") {
    const auto o = run({"retrain", "--arch", (out / "arch.json").string(), "--data", data, "--mask", (out / "mask.json").string(),
                        "--weight-masks", (out / "weight_masks.json").string(), "--runs", "2", "--epochs", "15", "--hidden", "8",
                        "--seed", "9", "--out", (dir / "rt").string()});
    REQUIRE(o.code == 0);
    const json rt = json::parse(read_file(dir / "rt" / "retrain.json"));
    CHECK(rt["params_kept"] == res["params_kept"]);
    CHECK(rt["edges_kept"] == res["edges_kept"]);
    CHECK(rt["accuracy_mean"] == res["accuracy_mean"]);
  }
}

TEST_CASE("missing data exits with 3") {
  TempDir dir;
  write_file(dir / "c.toml", kSmallConfig);
  const auto r = run({"search", "--config", (dir / "c.toml").string(), "--data", (dir / "nope").string(), "--out",
                      (dir / "o").string()});
  CHECK(r.code == 3);
  TempDir bad;
  gen_small(bad);
  write_file(bad / "g" / "labels.csv", "0\n");
  write_file(bad / "c.toml", kSmallConfig);
  CHECK(run({"search", "--config", (bad / "c.toml").string(), "--data", (bad / "g").string(), "--out", (bad / "o").string()})
            .code == 3);
}

TEST_CASE("retrain runs") {
  TempDir dir;
  const auto data = gen_small(dir);
  write_file(dir / "arch.json", R"(["gcn", "sage"])");
  auto retrain = [&](const std::string& out, const std::string& runs) {
    return run({"retrain", "--arch", (dir / "arch.json").string(), "--data", data, "--runs", runs, "--epochs", "20", "--hidden", "8",
                "--out", (dir / out).string()});
  };
  REQUIRE(retrain("a", "1").code == 0);
  REQUIRE(retrain("b", "1").code == 0);
  CHECK(read_file(dir / "a" / "retrain.json") == read_file(dir / "b" / "retrain.json"));
  REQUIRE(retrain("c", "5").code == 0);
  const json c = json::parse(read_file(dir / "c" / "retrain.json"));
  CHECK(c["accuracy_std"].get<double>() >= 0.0);
  CHECK(c["retrain_runs"].size() == 5);
  CHECK(c["config"]["arch"] == json::parse(R"(["gcn","sage"])"));

  write_file(dir / "bad_arch.json", R"(["gcn", "mlp"])");
  CHECK(run({"retrain", "--arch", (dir / "bad_arch.json").string(), "--data", data, "--out", (dir / "d").string()}).code == 2);
  CHECK(run({"retrain", "--arch", (dir / "arch.json").string(), "--data", data, "--runs", "0", "--out", (dir / "d").string()}).code ==
        2);
}

TEST_CASE("overlap rejects a mask of the wrong size") {
  TempDir dir;
  const auto data = gen_small(dir);
  write_file(dir / "m.json", R"({"gamma": 0.0, "s_g": [1.0, 2.0]})");
  CHECK(run({"overlap", "--mask-a", (dir / "m.json").string(), "--mask-b", (dir / "m.json").string(), "--data", data}).code == 2);
}

TEST_CASE("the installed binary maps errors to exit codes") {
  TempDir dir;
  const std::string cmd = std::string(GASSIP_CLI_PATH) + " search --data " + (dir / "missing").string() + " --out " +
                          (dir / "o").string() + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 3);
}
