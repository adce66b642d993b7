#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "mixrec/hypergraph.hpp"

using namespace mixrec;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, SeededRng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a.data()[k], b.data()[k], tol);
}

// Scalar reference: sum_e <dL/dX, X> for a weighted readout of the full pass,
// used to finite-difference the adjoints.
double pass_objective(const Matrix& z, const Matrix& w, const Matrix& wn, const Matrix& we,
                      double slope, IncidenceMode mode) {
  const auto inc = hyper_incidence(z, w, mode);
  const auto out = hyper_propagate(inc.tilde, z, slope);
  double s = 0;
  for (std::size_t q = 0; q < out.node.size(); ++q) s += wn.data()[q] * out.node.data()[q];
  for (std::size_t q = 0; q < out.edge.size(); ++q) s += we.data()[q] * out.edge.data()[q];
  return s;
}

}  // namespace

TEST(Incidence, Examples) {
  const auto inc = hyper_incidence(Matrix{{1, 2}}, Matrix{{1, 0}, {0, 1}});
  EXPECT_EQ(inc.raw, (Matrix{{1, 2}}));
  EXPECT_DOUBLE_EQ(inc.tilde(0, 1), 2 / std::sqrt(2.0));
  const auto zero = hyper_incidence(Matrix(3, 2), Matrix{{1, 0}, {0, 1}});
  for (double v : zero.raw.data()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(hyper_incidence(Matrix(3, 2), Matrix(4, 3)), ShapeError);
}

TEST(Incidence, MatchesMatmulOracle) {
  SeededRng rng(1, "test");
  const auto z = random_matrix(7, 5, rng);
  const auto w = random_matrix(4, 5, rng);
  const auto inc = hyper_incidence(z, w);
  const auto want = matmul(z, transpose(w));
  expect_near(inc.raw, want, 1e-12);
  expect_near(inc.tilde, want * (1.0 / 2.0), 1e-12);
}

TEST(Incidence, HomogeneousInZ) {
  SeededRng rng(2, "test");
  const auto z = random_matrix(6, 3, rng);
  const auto w = random_matrix(2, 3, rng);
  expect_near(hyper_incidence(z * 2.5, w).raw, hyper_incidence(z, w).raw * 2.5, 1e-12);
}

TEST(Incidence, SoftmaxRowsSumToOne) {
  SeededRng rng(3, "test");
  const auto inc = hyper_incidence(random_matrix(5, 3, rng), random_matrix(4, 3, rng),
                                   IncidenceMode::RowSoftmax);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (double v : inc.tilde.row(i)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Propagate, ScalarChain) {
  const double h = 0.7, z = 1.9;
  const auto out = hyper_propagate(Matrix{{h}}, Matrix{{z}}, 0.5);
  EXPECT_DOUBLE_EQ(out.edge(0, 0), h * z);
  EXPECT_DOUBLE_EQ(out.node(0, 0), h * h * z);
}

TEST(Propagate, ZeroIncidence) {
  SeededRng rng(4, "test");
  const auto out = hyper_propagate(Matrix(4, 3), random_matrix(4, 2, rng), 0.5);
  for (double v : out.edge.data()) EXPECT_EQ(v, 0.0);
  for (double v : out.node.data()) EXPECT_EQ(v, 0.0);
}

TEST(Propagate, IdentityActivationIsTwoHop) {
  SeededRng rng(5, "test");
  const auto tilde = random_matrix(6, 3, rng);
  const auto z = random_matrix(6, 4, rng);
  const auto out = hyper_propagate(tilde, z, 1.0);
  expect_near(out.node, matmul(matmul(tilde, transpose(tilde)), z), 1e-10);
}

TEST(Readout, SumsHyperedgeRows) {
  SeededRng rng(6, "test");
  const auto edge = random_matrix(5, 3, rng);
  const auto r = hyper_readout(edge);
  for (std::size_t j = 0; j < 3; ++j) {
    double s = 0;
    for (std::size_t e = 0; e < 5; ++e) s += edge(e, j);
    EXPECT_EQ(r(0, j), s);
  }
}

TEST(Corruption, TwoRowsAreSwapped) {
  SeededRng rng(7, "corruption");
  for (int rep = 0; rep < 20; ++rep) {
    const auto [m, c] = corrupt_incidence(Matrix{{1, 2}, {3, 4}}, rng);
    EXPECT_EQ(m, (Matrix{{3, 4}, {1, 2}}));
  }
}

TEST(Corruption, IdenticalRowsUnchanged) {
  SeededRng rng(8, "corruption");
  const Matrix same{{1, 2}, {1, 2}, {1, 2}};
  EXPECT_EQ(corrupt_incidence(same, rng).first, same);
}

TEST(Corruption, PreservesRowMultisetAndColumnSums) {
  SeededRng rng(9, "corruption");
  SeededRng data(9, "test");
  const auto tilde = random_matrix(10, 4, data);
  const auto [m, c] = corrupt_incidence(tilde, rng);
  EXPECT_FALSE(is_identity(c.perm));
  auto sorted_rows = [](const Matrix& x) {
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < x.rows(); ++i) rows.emplace_back(x.row(i).begin(), x.row(i).end());
    std::sort(rows.begin(), rows.end());
    return rows;
  };
  EXPECT_EQ(sorted_rows(m), sorted_rows(tilde));
  // Exact equality: the same addends in a different order can round
  // differently, so compare sums of sorted columns.
  for (std::size_t j = 0; j < 4; ++j) {
    std::vector<double> a, b;
    for (std::size_t i = 0; i < 10; ++i) {
      a.push_back(tilde(i, j));
      b.push_back(m(i, j));
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
  }
}

TEST(Corruption, SingleRowIsError) {
  SeededRng rng(1, "corruption");
  EXPECT_THROW(corrupt_incidence(Matrix{{1, 2}}, rng), CorruptionError);
}

TEST(Corruption, ReadoutChangesOnGenericInput) {
  SeededRng rng(10, "corruption");
  SeededRng data(10, "test");
  for (int rep = 0; rep < 10; ++rep) {
    const auto z = random_matrix(8, 4, data);
    const auto tilde = random_matrix(8, 3, data);
    const auto clean = hyper_readout(hyper_edges(tilde, z, 0.5).second);
    const auto corrupted = hyper_readout(hyper_edges(corrupt_incidence(tilde, rng).first, z, 0.5).second);
    double diff = 0;
    for (std::size_t j = 0; j < 4; ++j) diff = std::max(diff, std::abs(clean(0, j) - corrupted(0, j)));
    EXPECT_GT(diff, 1e-6);
  }
}

TEST(Adjoint, FullPassMatchesFiniteDifferences) {
  for (auto mode : {IncidenceMode::Scaled, IncidenceMode::RowSoftmax}) {
    SeededRng rng(11, "test");
    const auto z = random_matrix(5, 3, rng);
    const auto w = random_matrix(4, 3, rng);
    const auto wn = random_matrix(5, 3, rng);
    const auto we = random_matrix(4, 3, rng);
    const double slope = 0.3;
    const auto inc = hyper_incidence(z, w, mode);
    const auto out = hyper_propagate(inc.tilde, z, slope);
    auto hg = hyper_propagate_backward(inc.tilde, z, out, wn, we, slope);
    auto [gz_inc, gw] = hyper_incidence_backward(z, w, inc, hg.tilde, mode);
    auto gz = hg.z + gz_inc;
    const double h = 1e-6;
    for (std::size_t q = 0; q < z.size(); ++q) {
      auto zp = z, zm = z;
      zp.data()[q] += h;
      zm.data()[q] -= h;
      const double num = (pass_objective(zp, w, wn, we, slope, mode) -
                          pass_objective(zm, w, wn, we, slope, mode)) / (2 * h);
      EXPECT_NEAR(gz.data()[q], num, 1e-7);
    }
    for (std::size_t q = 0; q < w.size(); ++q) {
      auto wp = w, wm = w;
      wp.data()[q] += h;
      wm.data()[q] -= h;
      const double num = (pass_objective(z, wp, wn, we, slope, mode) -
                          pass_objective(z, wm, wn, we, slope, mode)) / (2 * h);
      EXPECT_NEAR(gw.data()[q], num, 1e-7);
    }
  }
}

TEST(Adjoint, CorruptionScatterIsInversePermutation) {
  SeededRng rng(12, "corruption");
  SeededRng data(12, "test");
  const auto tilde = random_matrix(6, 2, data);
  const auto g = random_matrix(6, 2, data);
  const auto [m, c] = corrupt_incidence(tilde, rng);
  Matrix back(6, 2);
  scatter_corruption_grad(g, c, back);
  double lhs = 0, rhs = 0;
  for (std::size_t q = 0; q < m.size(); ++q) lhs += m.data()[q] * g.data()[q];
  for (std::size_t q = 0; q < tilde.size(); ++q) rhs += tilde.data()[q] * back.data()[q];
  EXPECT_NEAR(lhs, rhs, 1e-12);
}
