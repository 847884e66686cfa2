#include "gassip/sparsifier.hpp"
#include "support/curriculum_case.hpp"
#include "support/oracles.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>

using namespace gassip;
namespace a = gassip::ad;

namespace {

std::vector<StructureGradient> grads_for_edge(std::initializer_list<double> values) {
  std::vector<StructureGradient> out;
  for (double v : values) out.push_back({column({v}), 0.0});
  return out;
}

}  // namespace

TEST_CASE("mask values are sigmoid(S_G - gamma)") {
  StructureMask m = make_structure_mask(2, 3.0, 0.0);
  CHECK(mask_values(m)[0] == doctest::Approx(0.95257412682243).epsilon(1e-12));
  m.gamma.value(0, 0) = 3.0;
  CHECK(mask_values(m)[1] == 0.5);
}

TEST_CASE("directed mask repeats each undirected value") {
  const SparseGraph g = curriculum_case::path_graph();
  const MessageGraph mg = make_message_graph(g);
  a::Tape t;
  const Matrix d = directed_mask(mg, t.constant(column({0.1, 0.2, 0.3}))).value();
  CHECK(d == column({0.1, 0.1, 0.2, 0.2, 0.3, 0.3}));
}

TEST_CASE("mask JSON round-trip") {
  StructureMask m = make_structure_mask(3, 1.0, -0.25);
  m.scores.value(1, 0) = 0.1 + 0.2;
  const StructureMask back = mask_from_json(nlohmann::json::parse(mask_to_json(m).dump()));
  CHECK(back.scores.value == m.scores.value);
  CHECK(back.gamma.value(0, 0) == -0.25);
  CHECK_THROWS(mask_from_json(nlohmann::json::parse(R"({"s_g": [1]})")));
}

TEST_CASE("pseudo-labels keep training labels and argmax elsewhere") {
  Matrix z(3, 2);
  z << 0, 9, 1, 0, 0.5, 0.5;
  const std::vector<int> y{0, 1, 1};
  const Splits s{{0}, {1}, {2}};
  CHECK(assign_pseudo_labels(z, y, s) == std::vector<int>{0, 0, 0});
}

TEST_CASE("label divergence two of three neighbours") {
  SparseGraph g;
  g.num_nodes = 4;
  g.edges = {{0, 1}, {0, 2}, {0, 3}};
  const Matrix z = Matrix::Zero(4, 2);
  const std::vector<int> pseudo{0, 1, 1, 0};
  const auto d = node_view_difficulty(g, z, pseudo, 1.0);
  for (double v : d) CHECK(v == doctest::Approx(2.0 / 3.0));
  const auto half = node_view_difficulty(g, z, pseudo, 0.5);
  CHECK(half[0] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("symmetric node view averages both endpoints") {
  SparseGraph g;
  g.num_nodes = 3;
  g.edges = {{0, 1}, {1, 2}};
  const Matrix z = Matrix::Zero(3, 1);
  const std::vector<int> pseudo{0, 1, 1};
  // Divergence: node 0 -> 1, node 1 -> 1/2, node 2 -> 0.
  const auto d = node_view_difficulty(g, z, pseudo, 1.0, NodeView::Symmetric);
  CHECK(d[0] == doctest::Approx(0.75));
  CHECK(d[1] == doctest::Approx(0.25));
}

TEST_CASE("cosine term") {
  SparseGraph g;
  g.num_nodes = 2;
  g.edges = {{0, 1}};
  Matrix z(2, 2);
  z << 1, 0, 1, 1;
  const std::vector<int> pseudo{0, 0};
  CHECK(node_view_difficulty(g, z, pseudo, 1.0)[0] == doctest::Approx(1.0 / std::sqrt(2.0)));
}

TEST_CASE("combined difficulty and node weights") {
  SparseGraph g;
  g.num_nodes = 3;
  g.edges = {{0, 1}, {1, 2}};
  const std::vector<double> arch{0.5, 1.0};
  const std::vector<double> node{1.0, 2.0};
  const auto d = combine_difficulty(g, arch, node, 2.0);
  CHECK(d.edge == std::vector<double>{2.5, 5.0});
  CHECK(d.node == std::vector<double>{2.5, 3.75, 5.0});
  const auto theta = node_weights(std::vector<double>{0.0, std::log(2.0)});
  CHECK(theta[0] == doctest::Approx(1.0 / 3.0));
  CHECK(theta[1] == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("entropy term at the midpoint is ln 2") {
  StructureMask m = make_structure_mask(4, 0.0, 0.0);
  a::Tape t;
  CHECK(a::mean_binary_entropy(mask_var(t, m, Binding::Trainable)).value()(0, 0) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("entropy gradient pushes masks away from one half") {
  StructureMask m = make_structure_mask(2, 0.0, 0.0);
  m.scores.value << 0.7, -0.4;
  a::Tape t;
  gradients(t, a::mean_binary_entropy(mask_var(t, m, Binding::Trainable)));
  // Descent moves S_G along -grad: up for the high mask, down for the low one.
  CHECK(m.scores.grad(0, 0) < 0.0);
  CHECK(m.scores.grad(1, 0) > 0.0);
}

TEST_CASE("update: gradients 1 and 3 with c = 1 give a step of eta") {
  StructureMask m = make_structure_mask(1, 3.0, 0.0);
  const auto u = apply_structure_update(m, grads_for_edge({1.0, 3.0}), 0.01, 1.0);
  CHECK(u.std_dev[0] == 1.0);
  CHECK(u.score_step(0, 0) == doctest::Approx(0.01).epsilon(1e-14));
  CHECK(m.scores.value(0, 0) == doctest::Approx(2.99).epsilon(1e-14));
}

TEST_CASE("update with K = 1 divides by c alone") {
  StructureMask m = make_structure_mask(1, 0.0, 0.0);
  const auto u = apply_structure_update(m, grads_for_edge({4.0}), 0.1, 2.0);
  CHECK(u.std_dev[0] == 0.0);
  CHECK(u.score_step(0, 0) == doctest::Approx(0.2));
  StructureMask z = make_structure_mask(1, 0.0, 0.0);
  const auto none = apply_structure_update(z, grads_for_edge({4.0}), 0.1, 0.0);
  CHECK(none.score_step(0, 0) == 0.0);
}

TEST_CASE("relative smoothing is invariant to the gradient scale") {
  Rng rng(1);
  std::vector<StructureGradient> g1, g2;
  for (int k = 0; k < 3; ++k) {
    const Matrix s = oracle::random_matrix(rng, 6, 1);
    g1.push_back({s, 0.2});
    g2.push_back({1e-5 * s, 0.2});
  }
  StructureMask m1 = make_structure_mask(6), m2 = make_structure_mask(6);
  const auto u1 = apply_structure_update(m1, g1, 0.01, 0.1, SmoothingScale::Relative);
  const auto u2 = apply_structure_update(m2, g2, 0.01, 0.1, SmoothingScale::Relative);
  CHECK((u1.score_step - u2.score_step).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(u1.score_step.cwiseAbs().maxCoeff() > 1e-4);
  // The relative constant is c * mean_e |mean_K g_e|.
  Matrix mean = (g1[0].scores + g1[1].scores + g1[2].scores) / 3.0;
  StructureMask m3 = make_structure_mask(6);
  const auto u3 = apply_structure_update(m3, g1, 0.01, 0.1 * mean.cwiseAbs().mean(), SmoothingScale::Absolute);
  CHECK((u1.score_step - u3.score_step).cwiseAbs().maxCoeff() < 1e-15);
  StructureMask m4 = make_structure_mask(2);
  std::vector<StructureGradient> zero{{Matrix::Zero(2, 1), 0.0}, {Matrix::Zero(2, 1), 0.0}};
  CHECK(apply_structure_update(m4, zero, 0.01, 0.1, SmoothingScale::Relative).score_step.isZero());
}

TEST_CASE("curriculum step on a path graph with stubbed gradients") {
  namespace cc = curriculum_case;
  cc::Case c = cc::make_case();
  const auto rep = curriculum_step(c.graph, c.mg, c.mask, c.net, c.state, c.config, cc::stub_fn(c));

  REQUIRE(rep.architectures.size() == 2);
  CHECK(rep.architectures[0].arch.ops == std::vector<int>{0, 0});
  CHECK(rep.architectures[1].arch.ops == std::vector<int>{0, 1});
  CHECK(c.state.pseudo_labels == cc::kPseudo);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(std::abs(c.state.d_node[e] - cc::kNodeView[e]) < 1e-12);
    CHECK(std::abs(c.state.d_combined[e] - cc::kNodeView[e]) < 1e-12);
  }
  const auto theta = cc::softmax(cc::node_difficulty(cc::kNodeView));
  REQUIRE(c.state.node_weights.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(c.state.node_weights[i] - theta[i]) < 1e-12);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(std::abs(rep.update.score_step(static_cast<Eigen::Index>(e), 0) - cc::kScoreStep[e]) < 1e-12);
    CHECK(std::abs(c.mask.scores.value(static_cast<Eigen::Index>(e), 0) - (3.0 - cc::kScoreStep[e])) < 1e-12);
  }
  CHECK(std::abs(rep.update.gamma_step - cc::kGammaStep) < 1e-12);
  CHECK(c.state.d_arch == cc::kStd);

  // Second round: the previous std enters the edge difficulty.
  curriculum_step(c.graph, c.mg, c.mask, c.net, c.state, c.config, cc::stub_fn(c));
  for (std::size_t e = 0; e < 3; ++e) CHECK(std::abs(c.state.d_combined[e] - (cc::kStd[e] + cc::kNodeView[e])) < 1e-12);
}

TEST_CASE("labeled loss nodes restrict theta to the training split") {
  namespace cc = curriculum_case;
  cc::Case c = cc::make_case();
  c.config.loss_nodes = LossNodeSet::Labeled;
  curriculum_step(c.graph, c.mg, c.mask, c.net, c.state, c.config, cc::stub_fn(c));
  CHECK(c.state.loss_nodes == IndexList{0});
  CHECK(c.state.node_weights == std::vector<double>{1.0});
}

TEST_CASE("curriculum step needs a cached forward") {
  namespace cc = curriculum_case;
  cc::Case c = cc::make_case();
  c.state.has_cache = false;
  CHECK_THROWS_AS(curriculum_step(c.graph, c.mg, c.mask, c.net, c.state, c.config, cc::stub_fn(c)), std::logic_error);
}

TEST_CASE("structure gradient matches finite differences and touches only the mask") {
  Rng rng(2);
  const SparseGraph g = oracle::random_graph(rng, 9, 0.35, 3, 2);
  const MessageGraph mg = make_message_graph(g);
  SupernetConfig sc;
  sc.in_dim = 3;
  sc.hidden = 4;
  sc.num_classes = 2;
  sc.candidates = {{OpKind::GCN, OpKind::GATLite, OpKind::SAGE, OpKind::ARMALite}};
  Rng init(3);
  Supernet net(sc, init);
  StructureMask mask = make_structure_mask(g.edges.size(), 0.0, 0.1);
  mask.scores.value = oracle::random_matrix(rng, static_cast<Eigen::Index>(g.edges.size()), 1, -2, 2);
  const auto nodes = g.all_nodes();
  std::vector<double> w(nodes.size());
  for (double& x : w) x = rng.uniform(0.0, 1.0);
  const StructLossInputs in{&g.features, g.labels, nodes, w, 0.01};
  for (int o0 = 0; o0 < 4; ++o0) {
    const Architecture arch{{o0, 3 - o0}};
    const auto res = oracle::grad_check({&mask.scores, &mask.gamma},
                                        [&](a::Tape& t) { return struct_loss(t, net, arch, mg, mask, in); });
    CHECK(res.max_rel_error < 1e-6);
    const auto sg = structure_gradient(net, arch, mg, mask, in);
    CHECK(sg.scores.rows() == static_cast<Eigen::Index>(g.edges.size()));
    for (auto* p : net.weight_params()) CHECK(p->grad.isZero());
    for (auto* p : net.alpha_params()) CHECK(p->grad.isZero());
  }
}
