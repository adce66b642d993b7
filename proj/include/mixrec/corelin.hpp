#pragma once

// Dense row-major matrices, the handful of kernels the model needs, and a
// counter-based seeded RNG. Everything else in mixrec is built on this file.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <type_traits>
#include <utility>
#include <vector>

namespace mixrec {

// ---------------------------------------------------------------------------
// Errors

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define MIXREC_DEFINE_ERROR(Name) \
  class Name : public Error {     \
   public:                        \
    using Error::Error;           \
  }

MIXREC_DEFINE_ERROR(ShapeError);
MIXREC_DEFINE_ERROR(ConfigError);
MIXREC_DEFINE_ERROR(ParseError);
MIXREC_DEFINE_ERROR(RangeError);
MIXREC_DEFINE_ERROR(DataError);
MIXREC_DEFINE_ERROR(SamplingError);
MIXREC_DEFINE_ERROR(NumericError);
MIXREC_DEFINE_ERROR(IndexError);
MIXREC_DEFINE_ERROR(ConsistencyError);
MIXREC_DEFINE_ERROR(ModeError);
MIXREC_DEFINE_ERROR(DivergenceError);
MIXREC_DEFINE_ERROR(CorruptionError);

#undef MIXREC_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Multiply-accumulate tallies gathered while a pass runs.
struct OpCounters {
  std::uint64_t graph_messages_user = 0;  // edge messages delivered to users
  std::uint64_t graph_messages_item = 0;
  std::uint64_t graph_macs = 0;
  std::uint64_t hyper_macs = 0;
  std::uint64_t cl_macs = 0;

  OpCounters& operator+=(const OpCounters& o) {
    graph_messages_user += o.graph_messages_user;
    graph_messages_item += o.graph_messages_item;
    graph_macs += o.graph_macs;
    hyper_macs += o.hyper_macs;
    cl_macs += o.cl_macs;
    return *this;
  }

  friend bool operator==(const OpCounters&, const OpCounters&) = default;
};

// ---------------------------------------------------------------------------
// DenseMatrix

template <typename T = double>
class DenseMatrix {
 public:
  using value_type = T;

  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, T fill = T(0))
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("DenseMatrix: data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" + std::to_string(cols_));
    }
  }
  DenseMatrix(std::initializer_list<std::initializer_list<T>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
      if (r.size() != cols_) throw ShapeError("DenseMatrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<T> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() { fill(T(0)); }

  std::string shape_string() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  DenseMatrix& operator+=(const DenseMatrix& o) {
    require_same_shape(o, "operator+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += o.data_[k];
    return *this;
  }
  DenseMatrix& operator-=(const DenseMatrix& o) {
    require_same_shape(o, "operator-=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= o.data_[k];
    return *this;
  }
  DenseMatrix& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend DenseMatrix operator+(DenseMatrix a, const DenseMatrix& b) { return a += b; }
  friend DenseMatrix operator-(DenseMatrix a, const DenseMatrix& b) { return a -= b; }
  friend DenseMatrix operator*(DenseMatrix a, T s) { return a *= s; }
  friend DenseMatrix operator*(T s, DenseMatrix a) { return a *= s; }
  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

  void require_same_shape(const DenseMatrix& o, std::string_view what) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) {
      throw ShapeError(std::string(what) + ": shape mismatch " + shape_string() + " vs " +
                       o.shape_string());
    }
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = DenseMatrix<double>;

namespace detail {
template <typename T>
void check_inner(const DenseMatrix<T>& a, const DenseMatrix<T>& b, std::size_t lhs,
                 std::size_t rhs, std::string_view op) {
  if (lhs != rhs) {
    throw ShapeError(std::string(op) + ": incompatible operands " + a.shape_string() + " and " +
                     b.shape_string());
  }
}
}  // namespace detail

// C = A * B
template <typename T>
DenseMatrix<T> matmul(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  detail::check_inner(a, b, a.cols(), b.rows(), "matmul");
  DenseMatrix<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto crow = c.row(i);
    for (std::size_t t = 0; t < a.cols(); ++t) {
      const T av = a(i, t);
      if (av == T(0)) continue;
      auto brow = b.row(t);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C = A^T * B
template <typename T>
DenseMatrix<T> matmul_tn(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  detail::check_inner(a, b, a.rows(), b.rows(), "matmul_tn");
  DenseMatrix<T> c(a.cols(), b.cols());
  for (std::size_t t = 0; t < a.rows(); ++t) {
    auto arow = a.row(t);
    auto brow = b.row(t);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const T av = arow[i];
      if (av == T(0)) continue;
      auto crow = c.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// C = A * B^T
template <typename T>
DenseMatrix<T> matmul_nt(const DenseMatrix<T>& a, const DenseMatrix<T>& b);

template <typename T>
DenseMatrix<T> transpose(const DenseMatrix<T>& a) {
  DenseMatrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <typename T>
DenseMatrix<T> matmul_nt(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  detail::check_inner(a, b, a.cols(), b.cols(), "matmul_nt");
  return matmul(a, transpose(b));
}

template <typename T>
DenseMatrix<T> hadamard(const DenseMatrix<T>& a, const DenseMatrix<T>& b) {
  a.require_same_shape(b, "hadamard");
  DenseMatrix<T> c(a.rows(), a.cols());
  for (std::size_t k = 0; k < a.size(); ++k) c.data()[k] = a.data()[k] * b.data()[k];
  return c;
}

template <typename A, typename B>
auto dot(const A& a, const B& b) {
  using T = std::remove_cv_t<typename A::element_type>;
  T acc = T(0);
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

template <typename T>
T frobenius_sq(const DenseMatrix<T>& a) {
  T acc = T(0);
  for (T v : a.data()) acc += v * v;
  return acc;
}

// Sum over rows, returned as a 1 x cols matrix.
template <typename T>
DenseMatrix<T> column_sums(const DenseMatrix<T>& a) {
  DenseMatrix<T> s(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) s(0, j) += r[j];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Activations and normalization

// slope == 1 is the identity map; diagnostics rely on that.
template <typename T>
T leaky_relu(T x, T slope) {
  return x >= T(0) ? x : slope * x;
}

template <typename T>
T leaky_relu_grad(T x, T slope) {
  return x >= T(0) ? T(1) : slope;
}

template <typename T>
DenseMatrix<T> leaky_relu(const DenseMatrix<T>& x, T slope) {
  if (!(slope >= T(0) && slope <= T(1))) {
    throw ConfigError("leaky_relu: slope must lie in [0, 1], got " + std::to_string(slope));
  }
  DenseMatrix<T> out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) out.data()[k] = leaky_relu(x.data()[k], slope);
  return out;
}

template <typename R>
auto row_norm(const R& r) {
  using T = std::remove_cv_t<typename R::element_type>;
  T acc = T(0);
  for (T v : r) acc += v * v;
  return std::sqrt(acc);
}

// Each row divided by max(||row||, eps). Zero rows stay zero.
template <typename T>
DenseMatrix<T> l2_normalize_rows(const DenseMatrix<T>& x, T eps) {
  if (!(eps > T(0))) throw ConfigError("l2_normalize_rows: eps must be positive");
  DenseMatrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    const T denom = std::max(row_norm(in), eps);
    auto o = out.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) o[j] = in[j] / denom;
  }
  return out;
}

// Vector-Jacobian product of l2_normalize_rows: given x and dL/dy, returns dL/dx.
template <typename T>
DenseMatrix<T> l2_normalize_rows_backward(const DenseMatrix<T>& x, const DenseMatrix<T>& grad_out,
                                          T eps) {
  x.require_same_shape(grad_out, "l2_normalize_rows_backward");
  DenseMatrix<T> g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto go = grad_out.row(i);
    auto gi = g.row(i);
    const T norm = row_norm(in);
    if (norm <= eps) {
      for (std::size_t j = 0; j < x.cols(); ++j) gi[j] = go[j] / eps;
      continue;
    }
    T proj = T(0);
    for (std::size_t j = 0; j < x.cols(); ++j) proj += in[j] * go[j];
    proj /= norm * norm;
    for (std::size_t j = 0; j < x.cols(); ++j) gi[j] = (go[j] - in[j] * proj) / norm;
  }
  return g;
}

// ---------------------------------------------------------------------------
// Seeded RNG
//
// Counter-based SplitMix64: output n of a stream is a pure function of
// (key, n), so the stream position is a single integer and sub-streams can be
// forked deterministically (e.g. one per graph row) without shared state.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class SeededRng {
 public:
  SeededRng() : SeededRng(0, "default") {}
  SeededRng(std::uint64_t seed, std::string_view stream_id)
      : seed_(seed), stream_(stream_id), key_(splitmix64(seed ^ splitmix64(fnv1a64(stream_id)))) {}

  std::uint64_t seed() const { return seed_; }
  const std::string& stream_id() const { return stream_; }
  std::uint64_t position() const { return counter_; }
  void set_position(std::uint64_t p) { counter_ = p; }

  std::uint64_t next_u64() { return splitmix64(key_ + counter_++ * 0x9e3779b97f4a7c15ULL); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), unbiased (Lemire's multiply-shift with rejection).
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n == 0) throw RangeError("SeededRng::uniform_int: empty range");
    __uint128_t m = static_cast<__uint128_t>(next_u64()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<__uint128_t>(next_u64()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::swap(first[i - 1], first[uniform_int(i)]);
    }
  }

  // Independent child stream keyed by `tag`; does not advance this stream.
  SeededRng fork(std::uint64_t tag) const {
    SeededRng child = *this;
    child.key_ = splitmix64(key_ ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
    child.counter_ = 0;
    return child;
  }

 private:
  std::uint64_t seed_ = 0;
  std::string stream_;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

// ---------------------------------------------------------------------------
// Parallel helper. fn(begin, end) is called on disjoint contiguous chunks.

template <typename Fn>
void parallel_for(std::size_t count, unsigned threads, Fn&& fn) {
  if (threads <= 1 || count < 2) {
    fn(std::size_t{0}, count);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, count);
  const std::size_t chunk = (count + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(count, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mixrec
