#pragma once

// Learnable node-hyperedge incidence, hypergraph message passing through the
// E intent hyperedges, and incidence corruption for graph-level negatives.

#include <cmath>
#include <numeric>
#include <vector>

#include "mixrec/corelin.hpp"

namespace mixrec {

enum class IncidenceMode : std::uint8_t {
  Scaled,      // H~ = H / sqrt(E)
  RowSoftmax,  // H~ = softmax over each node's hyperedges
};

template <typename T>
struct HyperIncidence {
  DenseMatrix<T> raw;    // nodes x E, Z * W^T
  DenseMatrix<T> tilde;  // stabilized form used for propagation
};

template <typename T>
struct HyperOutput {
  DenseMatrix<T> edge_pre;  // H~^T Z             (E x d)
  DenseMatrix<T> edge;      // Gamma = act(edge_pre)
  DenseMatrix<T> node_pre;  // H~ Gamma           (nodes x d)
  DenseMatrix<T> node;      // H = act(node_pre)
};

template <typename T>
DenseMatrix<T> row_softmax(const DenseMatrix<T>& x) {
  DenseMatrix<T> out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto in = x.row(i);
    auto o = out.row(i);
    const T mx = *std::max_element(in.begin(), in.end());
    T sum = T(0);
    for (std::size_t j = 0; j < x.cols(); ++j) sum += (o[j] = std::exp(in[j] - mx));
    for (auto& v : o) v /= sum;
  }
  return out;
}

template <typename T>
HyperIncidence<T> hyper_incidence(const DenseMatrix<T>& z, const DenseMatrix<T>& w,
                                  IncidenceMode mode = IncidenceMode::Scaled) {
  if (z.cols() != w.cols()) {
    throw ShapeError("hyper_incidence: embedding width " + z.shape_string() +
                     " does not match hyperedge table " + w.shape_string());
  }
  HyperIncidence<T> inc;
  inc.raw = matmul_nt(z, w);
  if (mode == IncidenceMode::Scaled) {
    inc.tilde = inc.raw * static_cast<T>(1.0 / std::sqrt(static_cast<double>(w.rows())));
  } else {
    inc.tilde = row_softmax(inc.raw);
  }
  return inc;
}

// Gamma = act(H~^T Z), H = act(H~ Gamma).
template <typename T>
HyperOutput<T> hyper_propagate(const DenseMatrix<T>& tilde, const DenseMatrix<T>& z, T slope) {
  if (tilde.rows() != z.rows())
    throw ShapeError("hyper_propagate: incidence " + tilde.shape_string() + " vs nodes " +
                     z.shape_string());
  HyperOutput<T> out;
  out.edge_pre = matmul_tn(tilde, z);
  out.edge = leaky_relu(out.edge_pre, slope);
  out.node_pre = matmul(tilde, out.edge);
  out.node = leaky_relu(out.node_pre, slope);
  return out;
}

// Hyperedge-only half of the pass; used for corrupted readouts.
template <typename T>
std::pair<DenseMatrix<T>, DenseMatrix<T>> hyper_edges(const DenseMatrix<T>& tilde,
                                                      const DenseMatrix<T>& z, T slope) {
  if (tilde.rows() != z.rows())
    throw ShapeError("hyper_edges: incidence " + tilde.shape_string() + " vs nodes " +
                     z.shape_string());
  auto pre = matmul_tn(tilde, z);
  auto act = leaky_relu(pre, slope);
  return {std::move(pre), std::move(act)};
}

// Graph readout: Gamma summed over hyperedges, as a 1 x d row.
template <typename T>
DenseMatrix<T> hyper_readout(const DenseMatrix<T>& edge) {
  return column_sums(edge);
}

struct Corruption {
  // corrupted row i is original row perm[i]
  std::vector<std::size_t> perm;
};

inline bool is_identity(const std::vector<std::size_t>& perm) {
  for (std::size_t i = 0; i < perm.size(); ++i)
    if (perm[i] != i) return false;
  return true;
}

// Uniform random non-identity permutation of `rows` node rows.
inline Corruption draw_corruption(std::size_t rows, SeededRng& rng) {
  if (rows < 2) throw CorruptionError("corrupt_incidence: need at least two node rows to shuffle");
  Corruption c;
  c.perm.resize(rows);
  do {
    std::iota(c.perm.begin(), c.perm.end(), std::size_t{0});
    rng.shuffle(c.perm.begin(), c.perm.end());
  } while (is_identity(c.perm));
  return c;
}

template <typename T>
DenseMatrix<T> apply_corruption(const DenseMatrix<T>& tilde, const Corruption& c) {
  if (c.perm.size() != tilde.rows()) throw ShapeError("apply_corruption: permutation size");
  DenseMatrix<T> out(tilde.rows(), tilde.cols());
  for (std::size_t i = 0; i < tilde.rows(); ++i) {
    auto src = tilde.row(c.perm[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

template <typename T>
std::pair<DenseMatrix<T>, Corruption> corrupt_incidence(const DenseMatrix<T>& tilde,
                                                        SeededRng& rng) {
  auto c = draw_corruption(tilde.rows(), rng);
  auto m = apply_corruption(tilde, c);
  return {std::move(m), std::move(c)};
}

// ---------------------------------------------------------------------------
// Adjoints

template <typename T>
struct HyperGrad {
  DenseMatrix<T> tilde;  // dL/dH~
  DenseMatrix<T> z;      // dL/dZ
};

template <typename T>
DenseMatrix<T> leaky_relu_backward(const DenseMatrix<T>& pre, const DenseMatrix<T>& grad_out,
                                   T slope) {
  DenseMatrix<T> g(pre.rows(), pre.cols());
  for (std::size_t k = 0; k < pre.size(); ++k)
    g.data()[k] = grad_out.data()[k] * leaky_relu_grad(pre.data()[k], slope);
  return g;
}

// grad_edge_extra is added to dL/dGamma (e.g. from the readout); may be empty.
template <typename T>
HyperGrad<T> hyper_propagate_backward(const DenseMatrix<T>& tilde, const DenseMatrix<T>& z,
                                      const HyperOutput<T>& out, const DenseMatrix<T>& grad_node,
                                      const DenseMatrix<T>& grad_edge_extra, T slope) {
  HyperGrad<T> g;
  const auto g_node_pre = leaky_relu_backward(out.node_pre, grad_node, slope);
  g.tilde = matmul_nt(g_node_pre, out.edge);
  auto g_edge = matmul_tn(tilde, g_node_pre);
  if (!grad_edge_extra.empty()) g_edge += grad_edge_extra;
  const auto g_edge_pre = leaky_relu_backward(out.edge_pre, g_edge, slope);
  g.tilde += matmul_nt(z, g_edge_pre);
  g.z = matmul(tilde, g_edge_pre);
  return g;
}

template <typename T>
HyperGrad<T> hyper_edges_backward(const DenseMatrix<T>& tilde, const DenseMatrix<T>& z,
                                  const DenseMatrix<T>& edge_pre, const DenseMatrix<T>& grad_edge,
                                  T slope) {
  HyperGrad<T> g;
  const auto g_pre = leaky_relu_backward(edge_pre, grad_edge, slope);
  g.tilde = matmul_nt(z, g_pre);
  g.z = matmul(tilde, g_pre);
  return g;
}

// Maps dL/d(corrupted H~) back onto the rows of the clean H~.
template <typename T>
void scatter_corruption_grad(const DenseMatrix<T>& grad_corrupted, const Corruption& c,
                             DenseMatrix<T>& grad_tilde) {
  for (std::size_t i = 0; i < grad_corrupted.rows(); ++i) {
    auto src = grad_corrupted.row(i);
    auto dst = grad_tilde.row(c.perm[i]);
    for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
  }
}

// Given dL/dH~, returns {dL/dZ, dL/dW} for H = Z W^T and the chosen H~ map.
template <typename T>
std::pair<DenseMatrix<T>, DenseMatrix<T>> hyper_incidence_backward(
    const DenseMatrix<T>& z, const DenseMatrix<T>& w, const HyperIncidence<T>& inc,
    const DenseMatrix<T>& grad_tilde, IncidenceMode mode) {
  DenseMatrix<T> g_raw;
  if (mode == IncidenceMode::Scaled) {
    g_raw = grad_tilde * static_cast<T>(1.0 / std::sqrt(static_cast<double>(w.rows())));
  } else {
    g_raw = DenseMatrix<T>(grad_tilde.rows(), grad_tilde.cols());
    for (std::size_t i = 0; i < grad_tilde.rows(); ++i) {
      auto s = inc.tilde.row(i);
      auto gt = grad_tilde.row(i);
      T inner = T(0);
      for (std::size_t e = 0; e < s.size(); ++e) inner += s[e] * gt[e];
      auto gr = g_raw.row(i);
      for (std::size_t e = 0; e < s.size(); ++e) gr[e] = s[e] * (gt[e] - inner);
    }
  }
  return {matmul(g_raw, w), matmul_tn(g_raw, z)};
}

}  // namespace mixrec
