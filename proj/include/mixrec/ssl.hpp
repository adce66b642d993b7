#pragma once

// Self-supervised terms: the meta network that adapts auxiliary-behavior
// embeddings, node-level InfoNCE across behaviors, and the graph-level
// contrast between hyperedge readouts and their corrupted counterparts.

#include <cmath>
#include <vector>

#include "mixrec/corelin.hpp"
#include "mixrec/hypergraph.hpp"

namespace mixrec {

struct ContrastConfig {
  double tau = 0.5;
  bool include_positive_in_denominator = true;
  double eps = 1e-12;

  void validate() const {
    if (!(tau > 0.0)) throw ConfigError("contrast: temperature tau must be > 0");
    if (!(eps > 0.0)) throw ConfigError("contrast: eps must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Meta network: H~ = H o act(Norm(H) W + b)

template <typename T>
struct MetaCache {
  DenseMatrix<T> normed;  // Norm(H)
  DenseMatrix<T> pre;     // Norm(H) W + b
  DenseMatrix<T> gate;    // act(pre)
  DenseMatrix<T> out;
};

template <typename T>
MetaCache<T> meta_forward(const DenseMatrix<T>& h, const DenseMatrix<T>& w,
                          const DenseMatrix<T>& b, T slope, T eps) {
  if (w.rows() != h.cols() || w.cols() != h.cols() || b.rows() != 1 || b.cols() != h.cols()) {
    throw ShapeError("meta_transform: H " + h.shape_string() + ", W " + w.shape_string() +
                     ", b " + b.shape_string());
  }
  MetaCache<T> c;
  c.normed = l2_normalize_rows(h, eps);
  c.pre = matmul(c.normed, w);
  for (std::size_t i = 0; i < c.pre.rows(); ++i) {
    auto r = c.pre.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += b(0, j);
  }
  c.gate = leaky_relu(c.pre, slope);
  c.out = hadamard(h, c.gate);
  return c;
}

template <typename T>
DenseMatrix<T> meta_transform(const DenseMatrix<T>& h, const DenseMatrix<T>& w,
                              const DenseMatrix<T>& b, T slope, T eps) {
  return meta_forward(h, w, b, slope, eps).out;
}

template <typename T>
struct MetaGrad {
  DenseMatrix<T> h;
  DenseMatrix<T> w;
  DenseMatrix<T> b;
};

template <typename T>
MetaGrad<T> meta_backward(const DenseMatrix<T>& h, const DenseMatrix<T>& w,
                          const MetaCache<T>& c, const DenseMatrix<T>& grad_out, T slope,
                          T eps) {
  MetaGrad<T> g;
  g.h = hadamard(grad_out, c.gate);
  const auto g_pre = leaky_relu_backward(c.pre, hadamard(grad_out, h), slope);
  g.w = matmul_tn(c.normed, g_pre);
  g.b = column_sums(g_pre);
  g.h += l2_normalize_rows_backward(h, matmul_nt(g_pre, w), eps);
  return g;
}

// ---------------------------------------------------------------------------
// Cosine similarity

template <typename T>
T cosine(std::span<const T> a, std::span<const T> b, T eps) {
  return dot(a, b) / (std::max(row_norm(a), eps) * std::max(row_norm(b), eps));
}

// ---------------------------------------------------------------------------
// Node-level InfoNCE
//
// For node i and auxiliary view k the positive is (target_i, aux_{k,i}); the
// denominator runs over the target embeddings of every node in the set,
// plus the positive itself when include_positive_in_denominator is set.

template <typename T>
struct NodeClGrad {
  DenseMatrix<T> target;
  std::vector<DenseMatrix<T>> aux;
};

template <typename T>
T node_cl_loss(const DenseMatrix<T>& target, const std::vector<DenseMatrix<T>>& aux,
               const ContrastConfig& cfg, NodeClGrad<T>* grad = nullptr,
               OpCounters* counters = nullptr) {
  cfg.validate();
  const std::size_t B = target.rows();
  const std::size_t d = target.cols();
  for (const auto& a : aux) target.require_same_shape(a, "node_cl_loss");
  const T eps = static_cast<T>(cfg.eps);
  const T inv_tau = static_cast<T>(1.0 / cfg.tau);

  const auto tn = l2_normalize_rows(target, eps);
  std::vector<DenseMatrix<T>> an;
  an.reserve(aux.size());
  for (const auto& a : aux) an.push_back(l2_normalize_rows(a, eps));
  const auto sim = matmul_nt(tn, tn);
  if (counters) counters->cl_macs += B * B * d + aux.size() * B * d;

  DenseMatrix<T> g_tn, g_sim;
  std::vector<DenseMatrix<T>> g_an;
  if (grad) {
    g_tn = DenseMatrix<T>(B, d);
    g_sim = DenseMatrix<T>(B, B);
    g_an.assign(aux.size(), DenseMatrix<T>(B, d));
  }

  T loss = T(0);
  std::vector<T> logits(B + 1);
  for (std::size_t i = 0; i < B; ++i) {
    auto srow = sim.row(i);
    T neg_max = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < B; ++j) neg_max = std::max(neg_max, srow[j] * inv_tau);
    for (std::size_t k = 0; k < aux.size(); ++k) {
      const T pos = dot(tn.row(i), an[k].row(i)) * inv_tau;
      const T mx = cfg.include_positive_in_denominator ? std::max(neg_max, pos) : neg_max;
      T z = T(0);
      for (std::size_t j = 0; j < B; ++j) z += (logits[j] = std::exp(srow[j] * inv_tau - mx));
      T pos_w = T(0);
      if (cfg.include_positive_in_denominator) z += (pos_w = std::exp(pos - mx));
      loss += -pos + mx + std::log(z);

      if (!grad) continue;
      const T g_pos = (-T(1) + pos_w / z) * inv_tau;
      auto gt = g_tn.row(i);
      auto ga = g_an[k].row(i);
      auto tr = tn.row(i);
      auto ar = an[k].row(i);
      for (std::size_t c = 0; c < d; ++c) {
        gt[c] += g_pos * ar[c];
        ga[c] += g_pos * tr[c];
      }
      auto gs = g_sim.row(i);
      for (std::size_t j = 0; j < B; ++j) gs[j] += logits[j] / z * inv_tau;
    }
  }

  if (grad) {
    // sim = tn tn^T  =>  d tn = (G + G^T) tn
    g_tn += matmul(g_sim, tn);
    g_tn += matmul_tn(g_sim, tn);
    grad->target = l2_normalize_rows_backward(target, g_tn, eps);
    grad->aux.clear();
    for (std::size_t k = 0; k < aux.size(); ++k)
      grad->aux.push_back(l2_normalize_rows_backward(aux[k], g_an[k], eps));
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Graph-level contrast
//
// L_g = sum_{k != target} softplus(s(corrupted_target, R_k) - s(R_target, R_k))
// with s the eps-guarded cosine. Readouts are 1 x d rows.

template <typename T>
T softplus(T x) {
  return x > T(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
struct GraphClGrad {
  std::vector<DenseMatrix<T>> readouts;
  DenseMatrix<T> corrupted;
};

template <typename T>
T graph_cl_loss(const std::vector<DenseMatrix<T>>& readouts, const DenseMatrix<T>& corrupted,
                std::size_t target, T eps, GraphClGrad<T>* grad = nullptr) {
  const std::size_t K = readouts.size();
  if (K < 2) throw ConfigError("graph_cl_loss: need at least two behaviors");
  if (target >= K) throw RangeError("graph_cl_loss: target behavior out of range");
  for (const auto& r : readouts) corrupted.require_same_shape(r, "graph_cl_loss");

  std::vector<DenseMatrix<T>> normed;
  for (const auto& r : readouts) normed.push_back(l2_normalize_rows(r, eps));
  const auto cn = l2_normalize_rows(corrupted, eps);

  std::vector<DenseMatrix<T>> g_n;
  DenseMatrix<T> g_cn;
  if (grad) {
    g_n.assign(K, DenseMatrix<T>(1, corrupted.cols()));
    g_cn = DenseMatrix<T>(1, corrupted.cols());
  }

  T loss = T(0);
  for (std::size_t k = 0; k < K; ++k) {
    if (k == target) continue;
    const T s_pos = dot(normed[target].row(0), normed[k].row(0));
    const T s_neg = dot(cn.row(0), normed[k].row(0));
    loss += softplus(s_neg - s_pos);
    if (!grad) continue;
    const T w = sigmoid(s_neg - s_pos);
    for (std::size_t c = 0; c < corrupted.cols(); ++c) {
      g_n[target](0, c) -= w * normed[k](0, c);
      g_n[k](0, c) += w * (cn(0, c) - normed[target](0, c));
      g_cn(0, c) += w * normed[k](0, c);
    }
  }
  if (grad) {
    grad->readouts.clear();
    for (std::size_t k = 0; k < K; ++k)
      grad->readouts.push_back(l2_normalize_rows_backward(readouts[k], g_n[k], eps));
    grad->corrupted = l2_normalize_rows_backward(corrupted, g_cn, eps);
  }
  return loss;
}

}  // namespace mixrec
