#pragma once

// Multiplex bipartite graph: one normalized adjacency per behavior, stored in
// compressed-row form for both directions, and relation-aware propagation.

#include <cmath>
#include <array>
#include <cstdint>
#include <vector>

#include "mixrec/corelin.hpp"
#include "mixrec/data.hpp"

namespace mixrec {

enum class Side : std::uint8_t { User = 0, Item = 1 };

inline constexpr Side other(Side s) { return s == Side::User ? Side::Item : Side::User; }
inline constexpr std::size_t side_index(Side s) { return static_cast<std::size_t>(s); }
inline const char* side_name(Side s) { return s == Side::User ? "user" : "item"; }

// One direction of one behavior layer. Row r lists its neighbours in
// cols[row_ptr[r] .. row_ptr[r+1]) with coef = 1/sqrt(deg(r) * deg(col)).
struct CsrBlock {
  std::vector<std::size_t> row_ptr;
  std::vector<Index> cols;
  std::vector<double> coef;

  std::size_t rows() const { return row_ptr.empty() ? 0 : row_ptr.size() - 1; }
  std::size_t nnz() const { return cols.size(); }
  std::size_t degree(std::size_t r) const { return row_ptr[r + 1] - row_ptr[r]; }
};

class BehaviorAdjacency {
 public:
  BehaviorAdjacency() = default;

  explicit BehaviorAdjacency(const InteractionTensor& train)
      : num_users_(train.num_users()), num_items_(train.num_items()),
        num_behaviors_(train.num_behaviors()), nnz_(train.nnz()) {
    blocks_.resize(num_behaviors_);
    for (std::size_t k = 0; k < num_behaviors_; ++k) {
      std::vector<std::size_t> deg_u(num_users_, 0), deg_v(num_items_, 0);
      for (const auto& t : train.triples()) {
        if (t.behavior != k) continue;
        ++deg_u[t.user];
        ++deg_v[t.item];
      }
      auto build = [&](Side dest) {
        const bool to_user = dest == Side::User;
        const std::size_t n = to_user ? num_users_ : num_items_;
        const auto& deg_dst = to_user ? deg_u : deg_v;
        const auto& deg_src = to_user ? deg_v : deg_u;
        CsrBlock b;
        b.row_ptr.assign(n + 1, 0);
        for (std::size_t r = 0; r < n; ++r) b.row_ptr[r + 1] = b.row_ptr[r] + deg_dst[r];
        b.cols.resize(b.row_ptr[n]);
        b.coef.resize(b.row_ptr[n]);
        std::vector<std::size_t> fill(b.row_ptr.begin(), b.row_ptr.end() - 1);
        for (const auto& t : train.triples()) {
          if (t.behavior != k) continue;
          const Index r = to_user ? t.user : t.item;
          const Index c = to_user ? t.item : t.user;
          const std::size_t pos = fill[r]++;
          b.cols[pos] = c;
          b.coef[pos] = 1.0 / std::sqrt(static_cast<double>(deg_dst[r]) *
                                        static_cast<double>(deg_src[c]));
        }
        return b;
      };
      blocks_[k][side_index(Side::User)] = build(Side::User);
      blocks_[k][side_index(Side::Item)] = build(Side::Item);
    }
  }

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_behaviors() const { return num_behaviors_; }
  std::size_t nnz() const { return nnz_; }
  std::size_t num_nodes(Side s) const { return s == Side::User ? num_users_ : num_items_; }

  // Edges that deliver messages *to* nodes on `dest`.
  const CsrBlock& block(std::size_t behavior, Side dest) const {
    return blocks_[behavior][side_index(dest)];
  }

 private:
  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::size_t num_behaviors_ = 0;
  std::size_t nnz_ = 0;
  std::vector<std::array<CsrBlock, 2>> blocks_;
};

struct DropoutSpec {
  double keep_prob = 1.0;
  bool enabled = false;

  bool active() const { return enabled && keep_prob < 1.0; }
};

template <typename T>
struct Propagation {
  std::vector<DenseMatrix<T>> per_behavior;  // Z_k
  DenseMatrix<T> summed;                     // sum_k Z_k
  // Per behavior, per edge scale m/keep_prob; empty when dropout is off.
  std::vector<std::vector<T>> masks;
};

// z_{r,k} = sum_{c in N_k(r)} m_{r,c} * coef_{r,c} * src_c.
//
// Each destination row draws its dropout bits from its own forked stream, so
// the result does not depend on `threads`.
template <typename T>
Propagation<T> relation_propagate(const BehaviorAdjacency& adj, Side dest,
                                  const DenseMatrix<T>& src, const DropoutSpec& drop,
                                  const SeededRng& rng, unsigned threads = 1,
                                  OpCounters* counters = nullptr) {
  const std::size_t d = src.cols();
  if (d == 0) throw ConfigError("relation_propagate: embedding dimension is 0");
  if (src.rows() != adj.num_nodes(other(dest))) {
    throw ShapeError("relation_propagate: source has " + std::to_string(src.rows()) +
                     " rows, graph side has " + std::to_string(adj.num_nodes(other(dest))));
  }
  if (drop.enabled && !(drop.keep_prob > 0.0 && drop.keep_prob <= 1.0))
    throw ConfigError("relation_propagate: keep_prob must lie in (0, 1]");

  const std::size_t n = adj.num_nodes(dest);
  const std::size_t K = adj.num_behaviors();
  const bool use_mask = drop.active();
  const T inv_keep = use_mask ? T(1.0 / drop.keep_prob) : T(1);

  Propagation<T> out;
  out.per_behavior.assign(K, DenseMatrix<T>(n, d));
  out.summed = DenseMatrix<T>(n, d);
  if (use_mask) out.masks.resize(K);

  for (std::size_t k = 0; k < K; ++k) {
    const CsrBlock& blk = adj.block(k, dest);
    if (use_mask) {
      auto& mask = out.masks[k];
      mask.resize(blk.nnz());
      const SeededRng krng = rng.fork(k);
      parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t r = b; r < e; ++r) {
          SeededRng rr = krng.fork(r);
          for (std::size_t p = blk.row_ptr[r]; p < blk.row_ptr[r + 1]; ++p)
            mask[p] = rr.uniform() < drop.keep_prob ? inv_keep : T(0);
        }
      });
    }
    auto& Z = out.per_behavior[k];
    const auto* mask = use_mask ? out.masks[k].data() : nullptr;
    parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
      for (std::size_t r = b; r < e; ++r) {
        auto zr = Z.row(r);
        for (std::size_t p = blk.row_ptr[r]; p < blk.row_ptr[r + 1]; ++p) {
          T w = static_cast<T>(blk.coef[p]);
          if (mask) w *= mask[p];
          if (w == T(0)) continue;
          auto sr = src.row(blk.cols[p]);
          for (std::size_t j = 0; j < d; ++j) zr[j] += w * sr[j];
        }
      }
    });
    out.summed += Z;
    if (counters) {
      (dest == Side::User ? counters->graph_messages_user : counters->graph_messages_item) +=
          blk.nnz();
      counters->graph_macs += blk.nnz() * d;
    }
  }
  return out;
}

// Adjoint of one behavior slice: accumulates A_k^T * grad into grad_src.
template <typename T>
void relation_propagate_adjoint(const BehaviorAdjacency& adj, Side dest, std::size_t behavior,
                                const DenseMatrix<T>& grad_z, const std::vector<T>& mask,
                                DenseMatrix<T>& grad_src) {
  const CsrBlock& blk = adj.block(behavior, dest);
  const std::size_t d = grad_z.cols();
  const bool use_mask = !mask.empty();
  for (std::size_t r = 0; r < blk.rows(); ++r) {
    auto gr = grad_z.row(r);
    for (std::size_t p = blk.row_ptr[r]; p < blk.row_ptr[r + 1]; ++p) {
      T w = static_cast<T>(blk.coef[p]);
      if (use_mask) w *= mask[p];
      if (w == T(0)) continue;
      auto gs = grad_src.row(blk.cols[p]);
      for (std::size_t j = 0; j < d; ++j) gs[j] += w * gr[j];
    }
  }
}

}  // namespace mixrec
