#include <gtest/gtest.h>

#include <cmath>

#include "mixrec/diag.hpp"

using namespace mixrec;

namespace {

InteractionTensor random_tensor(std::uint64_t seed, std::size_t I, std::size_t J, double p) {
  SeededRng rng(seed, "tensor");
  InteractionTensor t(I, J, 3, 2);
  for (Index u = 0; u < I; ++u)
    for (Index v = 0; v < J; ++v)
      for (Index k = 0; k < 3; ++k)
        if (rng.uniform() < p) t.add(u, v, k);
  return t;
}

Matrix random_matrix(std::size_t r, std::size_t c, SeededRng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

ModelParams<> identity_params(const BehaviorAdjacency& adj, std::size_t dim, std::size_t edges,
                              std::uint64_t seed) {
  ModelConfig mc;
  mc.dim = dim;
  mc.hyperedges = edges;
  mc.slope = 1.0;
  SeededRng init(seed, "init");
  return init_params<double>(dims_of(adj, adj.num_behaviors() - 1), mc, init);
}

}  // namespace

TEST(GnnDecompose, SingleEdgeOneLayer) {
  InteractionTensor t(1, 1, 1, 0);
  t.add(0, 0, 0);
  BehaviorAdjacency adj(t);
  const Matrix eu{{1, 2}}, ev{{3, -1}};
  const auto rep = gnn_decompose(adj, eu, ev, 1, 0, 0);
  ASSERT_EQ(rep.left.size(), 1u);
  EXPECT_EQ(rep.left[0].coef * rep.right[0].coef, 1.0);
  EXPECT_DOUBLE_EQ(rep.reconstructed_score, dot(ev.row(0), eu.row(0)));
  EXPECT_DOUBLE_EQ(rep.direct_score, rep.reconstructed_score);
}

TEST(GnnDecompose, SupportIsTheLHopNeighborhood) {
  // Two components: (u0, v0) and (u1, v1).
  InteractionTensor t(2, 2, 1, 0);
  t.add(0, 0, 0);
  t.add(1, 1, 0);
  BehaviorAdjacency adj(t);
  SeededRng rng(1, "emb");
  const auto rep = gnn_decompose(adj, random_matrix(2, 2, rng), random_matrix(2, 2, rng), 2, 0, 0);
  for (const auto& c : rep.left) EXPECT_EQ(c.node, 0u);
  for (const auto& c : rep.right) EXPECT_EQ(c.node, 2u);
}

TEST(GnnDecompose, RandomGraphTwoLayers) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto t = random_tensor(seed, 6, 5, 0.3);
    BehaviorAdjacency adj(t);
    SeededRng rng(seed, "emb");
    const auto eu = random_matrix(6, 4, rng), ev = random_matrix(5, 4, rng);
    for (std::size_t u = 0; u < 6; ++u)
      EXPECT_LT(gnn_decompose(adj, eu, ev, 2, u, u % 5).max_abs_error, 1e-10);
  }
}

TEST(HyperDecompose, RequiresIdentityActivation) {
  const auto t = random_tensor(1, 4, 4, 0.4);
  BehaviorAdjacency adj(t);
  auto p = identity_params(adj, 4, 2, 1);
  p.cfg.slope = 0.5;
  EXPECT_THROW(hyper_decompose(p, adj, 0, 0, 0), ModeError);
}

TEST(HyperDecompose, SingleHyperedgeBetaIsProduct) {
  const auto t = random_tensor(2, 5, 4, 0.4);
  BehaviorAdjacency adj(t);
  const auto p = identity_params(adj, 3, 1, 2);
  const auto rep = hyper_decompose(p, adj, 1, 2, 0);
  const DropoutSpec off;
  const auto z = relation_propagate(adj, Side::User, p.item_emb, off, SeededRng(0, "d")).per_behavior[1];
  std::vector<double> h(5);
  for (std::size_t i = 0; i < 5; ++i) h[i] = dot(z.row(i), p.hyper[0][1].row(0));  // E = 1: scale 1
  for (std::size_t q = 0; q < 5; ++q) EXPECT_NEAR(rep.left[q].coef, h[2] * h[q], 1e-14);
}

TEST(HyperDecompose, OrthogonalIncidenceRowsGiveZeroBeta) {
  InteractionTensor t(2, 2, 1, 0);
  t.add(0, 0, 0);
  t.add(1, 1, 0);
  BehaviorAdjacency adj(t);
  auto p = identity_params(adj, 2, 2, 3);
  p.item_emb = Matrix{{1, 0}, {0, 1}};
  p.hyper[0][0] = Matrix{{1, 0}, {0, 1}};
  const auto rep = hyper_decompose(p, adj, 0, 0, 0);
  EXPECT_EQ(rep.left[1].coef, 0.0);
  EXPECT_NEAR(rep.left[0].coef, 0.5, 1e-15);
}

TEST(HyperDecompose, RandomInstanceHasGlobalSupport) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    // Two disjoint blocks so some users are unreachable by graph paths.
    InteractionTensor t(8, 6, 2, 1);
    SeededRng rng(seed, "tensor");
    for (Index u = 0; u < 8; ++u)
      for (Index v = 0; v < 6; ++v)
        if ((u < 4) == (v < 3) && rng.uniform() < 0.6) t.add(u, v, rng.uniform_int(2));
    for (Index u = 0; u < 8; ++u) t.add(u, u < 4 ? u % 3 : 3 + u % 3, 1);
    BehaviorAdjacency adj(t);
    const auto p = identity_params(adj, 4, 3, seed);
    const auto rep = hyper_decompose(p, adj, 1, 0, 0);
    EXPECT_LT(rep.max_abs_error, 1e-8);
    EXPECT_EQ(rep.disconnected_users, 4u);
    EXPECT_GE(rep.disconnected_nonzero, 1u);
    for (const auto& c : rep.left) EXPECT_GT(std::abs(c.coef), 1e-9);
  }
}

TEST(HyperDecompose, BetaAdaptsAfterOneStep) {
  const auto t = random_tensor(4, 6, 5, 0.35);
  BehaviorAdjacency adj(t);
  const auto p = identity_params(adj, 4, 3, 4);
  SeededRng neg(4, "negatives");
  InteractionTensor with_target = t;
  for (Index u = 0; u < 6; ++u) with_target.add(u, u % 5, 2);
  BehaviorAdjacency adj2(with_target);
  const auto batch = sample_pairs(with_target, 1, neg);
  TrainConfig tc;
  tc.lambda2 = tc.lambda3 = 1;
  EXPECT_GT(beta_adaptivity(p, adj2, batch, tc, 2, 0, 0, 0.1), 1e-6);
}

TEST(Complexity, CountersScaleWithSizes) {
  const auto t = random_tensor(5, 40, 30, 0.1);
  BehaviorAdjacency adj(t);
  ModelConfig base;
  base.dim = 8;
  base.hyperedges = 4;
  const auto c0 = measure_forward(adj, 2, base);
  auto wide = base;
  wide.dim = 16;
  const auto cd = measure_forward(adj, 2, wide);
  EXPECT_NEAR(static_cast<double>(cd.graph_macs) / static_cast<double>(c0.graph_macs), 2.0, 0.1);
  auto edges = base;
  edges.hyperedges = 8;
  const auto ce = measure_forward(adj, 2, edges);
  EXPECT_NEAR(static_cast<double>(ce.hyper_macs) / static_cast<double>(c0.hyper_macs), 2.0, 0.1);
  auto deep = base;
  deep.layers = 4;
  const auto cl = measure_forward(adj, 2, deep);
  EXPECT_NEAR(static_cast<double>(cl.graph_macs) / static_cast<double>(c0.graph_macs), 2.0, 0.1);
  auto none = base;
  none.layers = 0;
  EXPECT_EQ(measure_forward(adj, 2, none).graph_macs, 0u);
}

TEST(Complexity, WithinTwiceTheFormula) {
  const auto t = random_tensor(6, 50, 40, 0.1);
  BehaviorAdjacency adj(t);
  ModelConfig mc;
  mc.dim = 8;
  mc.hyperedges = 4;
  const auto c = measure_forward(adj, 2, mc);
  RunSizes r{t.nnz(), 50, 40, 3, 8, 4, 2};
  const auto rep = complexity_counters(c, r);
  EXPECT_EQ(rep.messages_user, 2 * t.nnz());
  for (const auto& e : rep.entries) EXPECT_TRUE(e.within_2x()) << e.component << " ratio " << e.ratio();
}
