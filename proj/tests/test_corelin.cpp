#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mixrec/corelin.hpp"

using namespace mixrec;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, SeededRng& rng) {
  Matrix m(r, c);
  for (auto& v : m.data()) v = rng.uniform(-1.0, 1.0);
  return m;
}

// Textbook triple loop, independent of the kernels under test.
Matrix brute_matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0;
      for (std::size_t t = 0; t < a.cols(); ++t) s += a(i, t) * b(t, j);
      c(i, j) = s;
    }
  return c;
}

void expect_near(const Matrix& a, const Matrix& b, double tol) {
  ASSERT_EQ(a.rows(), b.rows());
  ASSERT_EQ(a.cols(), b.cols());
  for (std::size_t k = 0; k < a.size(); ++k) EXPECT_NEAR(a.data()[k], b.data()[k], tol) << "entry " << k;
}

}  // namespace

TEST(DenseMatrix, ConstructionChecksLength) {
  EXPECT_THROW(Matrix(2, 2, std::vector<double>{1, 2, 3}), ShapeError);
  Matrix m(2, 3, 1.5);
  EXPECT_EQ(m.size(), 6u);
  EXPECT_TRUE(m.all_finite());
  m(1, 2) = std::nan("");
  EXPECT_FALSE(m.all_finite());
}

TEST(Matmul, IdentityLeavesOperandUnchanged) {
  const Matrix eye{{1, 0}, {0, 1}};
  const Matrix b{{5, 6}, {7, 8}};
  EXPECT_EQ(matmul(eye, b), b);
}

TEST(Matmul, Scalar) { EXPECT_EQ(matmul(Matrix{{2}}, Matrix{{3}}), Matrix{{6}}); }

TEST(Matmul, MatchesTripleLoopOracle) {
  SeededRng rng(1, "test");
  for (int rep = 0; rep < 10; ++rep) {
    const auto a = random_matrix(3, 4, rng);
    const auto b = random_matrix(4, 2, rng);
    expect_near(matmul(a, b), brute_matmul(a, b), 1e-12);
  }
}

TEST(Matmul, TransposedVariantsAgree) {
  SeededRng rng(2, "test");
  const auto a = random_matrix(5, 3, rng);
  const auto b = random_matrix(5, 4, rng);
  const auto c = random_matrix(6, 3, rng);
  expect_near(matmul_tn(a, b), brute_matmul(transpose(a), b), 1e-12);
  expect_near(matmul_nt(a, c), brute_matmul(a, transpose(c)), 1e-12);
}

TEST(Matmul, ShapeErrorNamesBothOperands) {
  try {
    matmul(Matrix(2, 3), Matrix(4, 5));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2x3)"), std::string::npos);
    EXPECT_NE(msg.find("(4x5)"), std::string::npos);
  }
  EXPECT_THROW(matmul_tn(Matrix(2, 3), Matrix(3, 3)), ShapeError);
  EXPECT_THROW(matmul_nt(Matrix(2, 3), Matrix(3, 2)), ShapeError);
}

TEST(Matmul, Associative) {
  SeededRng rng(3, "test");
  for (int rep = 0; rep < 10; ++rep) {
    const auto a = random_matrix(3, 4, rng);
    const auto b = random_matrix(4, 5, rng);
    const auto c = random_matrix(5, 2, rng);
    expect_near(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), 1e-9);
  }
}

TEST(LeakyRelu, Examples) {
  EXPECT_EQ(leaky_relu(2.0, 0.5), 2.0);
  EXPECT_EQ(leaky_relu(-2.0, 0.5), -1.0);
  EXPECT_EQ(leaky_relu(0.0, 0.5), 0.0);
  EXPECT_THROW(leaky_relu(Matrix{{1.0}}, 1.5), ConfigError);
}

TEST(LeakyRelu, Idempotence) {
  SeededRng rng(4, "test");
  for (double s : {0.0, 0.2, 0.5, 0.9}) {
    for (int rep = 0; rep < 100; ++rep) {
      const double x = rng.uniform(-5, 5);
      const double twice = leaky_relu(leaky_relu(x, s), s);
      if (x >= 0) {
        EXPECT_EQ(twice, leaky_relu(x, s));
      } else {
        EXPECT_DOUBLE_EQ(twice, s * s * x);
      }
    }
  }
}

TEST(L2Normalize, Examples) {
  const auto n = l2_normalize_rows(Matrix{{3, 4}, {0, 0}}, 1e-8);
  EXPECT_DOUBLE_EQ(n(0, 0), 0.6);
  EXPECT_DOUBLE_EQ(n(0, 1), 0.8);
  EXPECT_EQ(n(1, 0), 0.0);
  EXPECT_EQ(n(1, 1), 0.0);
  EXPECT_THROW(l2_normalize_rows(Matrix{{1.0}}, 0.0), ConfigError);
}

TEST(L2Normalize, RandomRowsHaveUnitNorm) {
  SeededRng rng(5, "test");
  const auto n = l2_normalize_rows(random_matrix(50, 7, rng), 1e-8);
  for (std::size_t i = 0; i < n.rows(); ++i) EXPECT_NEAR(row_norm(n.row(i)), 1.0, 1e-9);
}

TEST(L2Normalize, BackwardMatchesFiniteDifferences) {
  SeededRng rng(6, "test");
  const auto x = random_matrix(4, 5, rng);
  const auto w = random_matrix(4, 5, rng);
  auto f = [&](const Matrix& m) {
    const auto y = l2_normalize_rows(m, 1e-12);
    double s = 0;
    for (std::size_t k = 0; k < y.size(); ++k) s += w.data()[k] * y.data()[k];
    return s;
  };
  const auto g = l2_normalize_rows_backward(x, w, 1e-12);
  for (std::size_t k = 0; k < x.size(); ++k) {
    auto xp = x, xm = x;
    xp.data()[k] += 1e-6;
    xm.data()[k] -= 1e-6;
    EXPECT_NEAR(g.data()[k], (f(xp) - f(xm)) / 2e-6, 1e-8);
  }
}

TEST(Kernels, ColumnSumsAndFrobenius) {
  const Matrix m{{1, 2}, {3, 4}};
  EXPECT_EQ(column_sums(m), (Matrix{{4, 6}}));
  EXPECT_DOUBLE_EQ(frobenius_sq(m), 30.0);
  EXPECT_EQ(hadamard(m, m), (Matrix{{1, 4}, {9, 16}}));
  EXPECT_THROW(hadamard(m, Matrix(1, 2)), ShapeError);
}

TEST(SeededRng, StreamsAreReproducibleAndDistinct) {
  SeededRng a(9, "dropout"), b(9, "dropout"), c(9, "negatives"), d(10, "dropout");
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a.next_u64();
    EXPECT_EQ(x, b.next_u64());
    differs_c |= x != c.next_u64();
    differs_d |= x != d.next_u64();
  }
  EXPECT_TRUE(differs_c);
  EXPECT_TRUE(differs_d);
}

TEST(SeededRng, PositionRestoresSequence) {
  SeededRng a(1, "init");
  for (int i = 0; i < 17; ++i) a.uniform();
  const auto pos = a.position();
  const double next = a.uniform();
  SeededRng b(1, "init");
  b.set_position(pos);
  EXPECT_EQ(b.uniform(), next);
}

TEST(SeededRng, ForkDoesNotAdvanceParent) {
  SeededRng a(1, "x");
  const auto before = a.position();
  const auto child1 = a.fork(3);
  const auto child2 = a.fork(3);
  EXPECT_EQ(a.position(), before);
  auto c1 = child1, c2 = child2;
  EXPECT_EQ(c1.next_u64(), c2.next_u64());
  auto c3 = a.fork(4);
  auto c4 = a.fork(3);
  EXPECT_NE(c3.next_u64(), c4.next_u64());
}

TEST(SeededRng, UniformIntIsUnbiased) {
  SeededRng rng(11, "test");
  const std::size_t bins = 7, draws = 70000;
  std::vector<double> count(bins, 0);
  for (std::size_t i = 0; i < draws; ++i) ++count[rng.uniform_int(bins)];
  double chi2 = 0;
  const double expected = static_cast<double>(draws) / bins;
  for (double c : count) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 22.46);  // chi-square 0.999 quantile, 6 dof
  EXPECT_THROW(rng.uniform_int(0), RangeError);
}

TEST(SeededRng, ShuffleIsPermutation) {
  SeededRng rng(12, "test");
  std::vector<int> v(50);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(v.begin(), v.end());
  std::set<int> s(v.begin(), v.end());
  EXPECT_EQ(s.size(), 50u);
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
}

TEST(ParallelFor, CoversRangeExactlyOnce) {
  for (unsigned threads : {1u, 2u, 3u, 8u}) {
    std::vector<int> hits(101, 0);
    parallel_for(hits.size(), threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) ++hits[i];
    });
    for (int h : hits) EXPECT_EQ(h, 1);
  }
}
