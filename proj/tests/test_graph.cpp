#include <gtest/gtest.h>

#include <cmath>

#include "mixrec/graph.hpp"

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

// D_u^{-1/2} A_k D_v^{-1/2} built densely from the triples (users x items).
Matrix dense_normalized(const InteractionTensor& t, Index k) {
  Matrix a(t.num_users(), t.num_items());
  for (const auto& tr : t.triples())
    if (tr.behavior == k) a(tr.user, tr.item) = 1;
  std::vector<double> du(a.rows(), 0), dv(a.cols(), 0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) {
      du[i] += a(i, j);
      dv[j] += a(i, j);
    }
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j)
      if (a(i, j) != 0) a(i, j) /= std::sqrt(du[i] * dv[j]);
  return a;
}

Matrix csr_to_dense(const CsrBlock& b, std::size_t cols) {
  Matrix m(b.rows(), cols);
  for (std::size_t r = 0; r < b.rows(); ++r)
    for (std::size_t p = b.row_ptr[r]; p < b.row_ptr[r + 1]; ++p) m(r, b.cols[p]) = b.coef[p];
  return m;
}

const SeededRng kRng(0, "dropout");

}  // namespace

TEST(Adjacency, SingleEdgeHasUnitCoefficient) {
  InteractionTensor t(1, 1, 1, 0);
  t.add(0, 0, 0);
  BehaviorAdjacency adj(t);
  EXPECT_EQ(adj.block(0, Side::User).coef, std::vector<double>{1.0});
  EXPECT_EQ(adj.block(0, Side::Item).coef, std::vector<double>{1.0});
}

TEST(Adjacency, DegreeFormula) {
  InteractionTensor t(1, 4, 1, 0);
  for (Index v = 0; v < 4; ++v) t.add(0, v, 0);
  BehaviorAdjacency adj(t);
  for (double c : adj.block(0, Side::User).coef) EXPECT_DOUBLE_EQ(c, 0.5);
  EXPECT_EQ(adj.block(0, Side::User).degree(0), 4u);
}

TEST(Adjacency, MatchesDenseNormalizationOracle) {
  const auto t = random_tensor(1, 9, 7, 0.3);
  BehaviorAdjacency adj(t);
  for (Index k = 0; k < 3; ++k) {
    const auto dense = dense_normalized(t, k);
    const auto to_user = csr_to_dense(adj.block(k, Side::User), t.num_items());
    const auto to_item = csr_to_dense(adj.block(k, Side::Item), t.num_users());
    const auto dense_t = transpose(dense);
    for (std::size_t q = 0; q < dense.size(); ++q) EXPECT_NEAR(to_user.data()[q], dense.data()[q], 1e-12);
    for (std::size_t q = 0; q < dense_t.size(); ++q) EXPECT_NEAR(to_item.data()[q], dense_t.data()[q], 1e-12);
    const auto& blk = adj.block(k, Side::User);
    EXPECT_TRUE(std::is_sorted(blk.row_ptr.begin(), blk.row_ptr.end()));
  }
}

TEST(Propagate, SingleEdge) {
  InteractionTensor t(1, 1, 1, 0);
  t.add(0, 0, 0);
  BehaviorAdjacency adj(t);
  const auto out = relation_propagate(adj, Side::User, Matrix{{1, 0}}, DropoutSpec{}, kRng);
  EXPECT_EQ(out.per_behavior[0], (Matrix{{1, 0}}));
  EXPECT_EQ(out.summed, (Matrix{{1, 0}}));
}

TEST(Propagate, MatchesDenseOracle) {
  const auto t = random_tensor(2, 8, 6, 0.35);
  BehaviorAdjacency adj(t);
  SeededRng rng(3, "emb");
  const auto items = random_matrix(6, 4, rng);
  const auto users = random_matrix(8, 4, rng);
  const auto to_user = relation_propagate(adj, Side::User, items, DropoutSpec{}, kRng);
  const auto to_item = relation_propagate(adj, Side::Item, users, DropoutSpec{}, kRng);
  Matrix want_u(8, 4), want_v(6, 4);
  for (Index k = 0; k < 3; ++k) {
    const auto a = dense_normalized(t, k);
    want_u += matmul(a, items);
    want_v += matmul(transpose(a), users);
  }
  for (std::size_t q = 0; q < want_u.size(); ++q) EXPECT_NEAR(to_user.summed.data()[q], want_u.data()[q], 1e-10);
  for (std::size_t q = 0; q < want_v.size(); ++q) EXPECT_NEAR(to_item.summed.data()[q], want_v.data()[q], 1e-10);
}

TEST(Propagate, FullKeepIgnoresRng) {
  const auto t = random_tensor(4, 6, 6, 0.4);
  BehaviorAdjacency adj(t);
  SeededRng rng(1, "emb");
  const auto items = random_matrix(6, 3, rng);
  const DropoutSpec keep_all{1.0, true};
  const auto a = relation_propagate(adj, Side::User, items, keep_all, SeededRng(1, "dropout"));
  const auto b = relation_propagate(adj, Side::User, items, keep_all, SeededRng(2, "dropout"));
  EXPECT_EQ(a.summed, b.summed);
  EXPECT_TRUE(a.masks.empty());
}

TEST(Propagate, Linear) {
  const auto t = random_tensor(5, 7, 5, 0.4);
  BehaviorAdjacency adj(t);
  SeededRng rng(2, "emb");
  const auto e1 = random_matrix(5, 3, rng);
  const auto e2 = random_matrix(5, 3, rng);
  const double alpha = 0.7, beta = -1.3;
  const auto lhs = relation_propagate(adj, Side::User, e1 * alpha + e2 * beta, DropoutSpec{}, kRng).summed;
  const auto rhs = relation_propagate(adj, Side::User, e1, DropoutSpec{}, kRng).summed * alpha +
                   relation_propagate(adj, Side::User, e2, DropoutSpec{}, kRng).summed * beta;
  for (std::size_t q = 0; q < lhs.size(); ++q) EXPECT_NEAR(lhs.data()[q], rhs.data()[q], 1e-9);
}

TEST(Propagate, IsolatedNodeGetsZero) {
  InteractionTensor t(3, 2, 1, 0);
  t.add(0, 0, 0);
  t.add(1, 1, 0);
  BehaviorAdjacency adj(t);
  const auto out = relation_propagate(adj, Side::User, Matrix{{1, 2}, {3, 4}}, DropoutSpec{}, kRng);
  EXPECT_EQ(out.summed(2, 0), 0.0);
  EXPECT_EQ(out.summed(2, 1), 0.0);
}

TEST(Propagate, Errors) {
  InteractionTensor t(1, 1, 1, 0);
  t.add(0, 0, 0);
  BehaviorAdjacency adj(t);
  EXPECT_THROW(relation_propagate(adj, Side::User, Matrix(1, 0), DropoutSpec{}, kRng), ConfigError);
  EXPECT_THROW(relation_propagate(adj, Side::User, Matrix(2, 2), DropoutSpec{}, kRng), ShapeError);
}

TEST(Propagate, DropoutIsUnbiased) {
  const auto t = random_tensor(6, 5, 4, 0.5);
  BehaviorAdjacency adj(t);
  SeededRng rng(3, "emb");
  const auto items = random_matrix(4, 2, rng);
  const auto clean = relation_propagate(adj, Side::User, items, DropoutSpec{}, kRng).summed;
  const DropoutSpec drop{0.7, true};
  const std::size_t draws = 10000;
  Matrix sum(clean.rows(), clean.cols()), sumsq(clean.rows(), clean.cols());
  SeededRng stream(9, "dropout");
  for (std::size_t n = 0; n < draws; ++n) {
    const auto z = relation_propagate(adj, Side::User, items, drop, stream.fork(n)).summed;
    sum += z;
    sumsq += hadamard(z, z);
  }
  for (std::size_t q = 0; q < clean.size(); ++q) {
    const double mean = sum.data()[q] / draws;
    const double var = sumsq.data()[q] / draws - mean * mean;
    const double se = std::sqrt(std::max(var, 0.0) / draws);
    EXPECT_LE(std::abs(mean - clean.data()[q]), 3 * se + 1e-12) << "entry " << q;
  }
}

TEST(Propagate, DropoutIsThreadInvariant) {
  const auto t = random_tensor(7, 40, 30, 0.2);
  BehaviorAdjacency adj(t);
  SeededRng rng(4, "emb");
  const auto items = random_matrix(30, 5, rng);
  const DropoutSpec drop{0.8, true};
  const SeededRng stream(5, "dropout");
  const auto serial = relation_propagate(adj, Side::User, items, drop, stream, 1);
  const auto parallel = relation_propagate(adj, Side::User, items, drop, stream, 4);
  EXPECT_EQ(serial.summed, parallel.summed);
  EXPECT_EQ(serial.masks, parallel.masks);
}

TEST(Propagate, AdjointIsTranspose) {
  const auto t = random_tensor(8, 6, 5, 0.4);
  BehaviorAdjacency adj(t);
  SeededRng rng(6, "emb");
  const auto x = random_matrix(5, 3, rng);
  const auto y = random_matrix(6, 3, rng);
  const DropoutSpec drop{0.6, true};
  const auto prop = relation_propagate(adj, Side::User, x, drop, SeededRng(2, "dropout"));
  for (Index k = 0; k < 3; ++k) {
    Matrix gx(5, 3);
    relation_propagate_adjoint(adj, Side::User, k, y, prop.masks[k], gx);
    double lhs = 0, rhs = 0;
    for (std::size_t q = 0; q < y.size(); ++q) lhs += prop.per_behavior[k].data()[q] * y.data()[q];
    for (std::size_t q = 0; q < x.size(); ++q) rhs += x.data()[q] * gx.data()[q];
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}

TEST(Propagate, CountsMessages) {
  const auto t = random_tensor(9, 6, 5, 0.4);
  BehaviorAdjacency adj(t);
  OpCounters c;
  relation_propagate(adj, Side::User, Matrix(5, 4), DropoutSpec{}, kRng, 1, &c);
  relation_propagate(adj, Side::Item, Matrix(6, 4), DropoutSpec{}, kRng, 1, &c);
  EXPECT_EQ(c.graph_messages_user, t.nnz());
  EXPECT_EQ(c.graph_messages_item, t.nnz());
  EXPECT_EQ(c.graph_macs, 2 * t.nnz() * 4);
}
