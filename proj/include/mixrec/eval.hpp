#pragma once

// Leave-one-out top-N evaluation and a BPR matrix-factorization baseline.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "mixrec/corelin.hpp"
#include "mixrec/data.hpp"
#include "mixrec/model.hpp"
#include "mixrec/ssl.hpp"

namespace mixrec {

struct UserRank {
  Index user = 0;
  std::size_t rank = 0;  // 1-based
};

struct Metrics {
  std::map<std::size_t, double> hr;
  std::map<std::size_t, double> ndcg;
  std::vector<UserRank> per_user;
  std::size_t num_eval_users = 0;
};

// Rank of `scores[0]` (the held-out item) among all candidates. Higher score
// ranks first; equal scores are ordered by ascending item id.
template <typename T>
std::size_t rank_of_first(std::span<const T> scores, std::span<const Index> items) {
  const T s0 = scores[0];
  const Index id0 = items[0];
  std::size_t better = 0;
  for (std::size_t c = 1; c < scores.size(); ++c)
    if (scores[c] > s0 || (scores[c] == s0 && items[c] < id0)) ++better;
  return better + 1;
}

// Sorts every candidate and looks up the held-out item's position.
template <typename T>
std::size_t rank_by_sorting(std::span<const T> scores, std::span<const Index> items) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items[a] < items[b];
  });
  return static_cast<std::size_t>(std::find(order.begin(), order.end(), 0) - order.begin()) + 1;
}

inline double ndcg_at(std::size_t rank, std::size_t n) {
  return rank <= n ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

inline Metrics metrics_from_ranks(std::vector<UserRank> ranks, std::span<const std::size_t> cutoffs) {
  Metrics m;
  m.per_user = std::move(ranks);
  m.num_eval_users = m.per_user.size();
  for (std::size_t n : cutoffs) {
    double hr = 0, nd = 0;
    for (const auto& r : m.per_user) {
      hr += r.rank <= n ? 1.0 : 0.0;
      nd += ndcg_at(r.rank, n);
    }
    const double denom = m.num_eval_users ? static_cast<double>(m.num_eval_users) : 1.0;
    m.hr[n] = hr / denom;
    m.ndcg[n] = nd / denom;
  }
  return m;
}

// Candidate list for a user: held-out item first, then its negatives.
inline std::vector<Index> candidates_for(const SplitDataset& split, Index u) {
  if (split.eval_negatives[u].empty())
    throw DataError("evaluate: user " + std::to_string(u) + " has a test item but no negatives");
  std::vector<Index> c;
  c.reserve(split.eval_negatives[u].size() + 1);
  c.push_back(*split.test_items[u]);
  c.insert(c.end(), split.eval_negatives[u].begin(), split.eval_negatives[u].end());
  return c;
}

// Scorer: (user, candidate items) -> scores.
using Scorer = std::function<std::vector<double>(Index, std::span<const Index>)>;

inline Metrics evaluate_scorer(const Scorer& score, const SplitDataset& split,
                               std::span<const std::size_t> cutoffs, unsigned threads = 1) {
  const auto users = split.eval_users();
  std::vector<UserRank> ranks(users.size());
  // Throwing from a worker would terminate, so validate up front.
  for (Index u : users) (void)candidates_for(split, u);
  parallel_for(users.size(), threads, [&](std::size_t b, std::size_t e) {
    for (std::size_t q = b; q < e; ++q) {
      const auto cands = candidates_for(split, users[q]);
      const auto scores = score(users[q], cands);
      ranks[q] = {users[q], rank_of_first<double>(scores, cands)};
    }
  });
  return metrics_from_ranks(std::move(ranks), cutoffs);
}

template <typename T>
Scorer model_scorer(const ForwardState<T>& st) {
  return [&st](Index u, std::span<const Index> items) {
    const auto s = score_items(st, u, items);
    return std::vector<double>(s.begin(), s.end());
  };
}

template <typename T>
Metrics evaluate(const ForwardState<T>& st, const SplitDataset& split,
                 std::span<const std::size_t> cutoffs, unsigned threads = 1) {
  return evaluate_scorer(model_scorer(st), split, cutoffs, threads);
}

struct RankCheckReport {
  std::size_t users_checked = 0;
  std::size_t agreements = 0;
  bool all_agree() const { return users_checked == agreements; }
};

// Fast counting rank vs sort-everything rank on up to `max_users` sampled users.
inline RankCheckReport rank_oracle_check(const Scorer& score, const SplitDataset& split,
                                         SeededRng& rng, std::size_t max_users = 50) {
  auto users = split.eval_users();
  rng.shuffle(users.begin(), users.end());
  if (users.size() > max_users) users.resize(max_users);
  RankCheckReport rep;
  for (Index u : users) {
    const auto cands = candidates_for(split, u);
    const auto scores = score(u, cands);
    ++rep.users_checked;
    if (rank_of_first<double>(scores, cands) == rank_by_sorting<double>(scores, cands))
      ++rep.agreements;
  }
  return rep;
}

// ---------------------------------------------------------------------------
// BPR matrix factorization on the target behavior only

struct MfConfig {
  std::size_t dim = 32;
  std::size_t epochs = 30;
  double lr = 0.05;
  double reg = 1e-2;
  std::size_t pairs_per_user = 1;
  std::uint64_t seed = 42;
};

struct MfModel {
  Matrix user;
  Matrix item;

  std::vector<double> score(Index u, std::span<const Index> items) const {
    std::vector<double> out(items.size());
    for (std::size_t k = 0; k < items.size(); ++k) out[k] = dot(user.row(u), item.row(items[k]));
    return out;
  }
};

// Plain SGD on -log sigmoid(x_up - x_un) + reg * (|p_u|^2 + |q_i|^2 + |q_j|^2).
inline MfModel train_mf(const InteractionTensor& train, const MfConfig& cfg) {
  if (train.count_behavior(train.target_behavior()) == 0)
    throw DataError("train_mf: no target-behavior training data");
  SeededRng init(cfg.seed, "mf_init"), neg(cfg.seed, "mf_negatives"), order(cfg.seed, "mf_shuffle");
  MfModel m{Matrix(train.num_users(), cfg.dim), Matrix(train.num_items(), cfg.dim)};
  const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
  for (auto* t : {&m.user, &m.item})
    for (auto& v : t->data()) v = init.uniform(-bound, bound);

  // One slot per target interaction, so an epoch sees each positive once in expectation.
  TargetIndex index(train);
  std::vector<Index> users;
  for (std::size_t u = 0; u < index.lists.size(); ++u)
    users.insert(users.end(), index.lists[u].size(), static_cast<Index>(u));
  std::vector<double> pu(cfg.dim);
  for (std::size_t ep = 0; ep < cfg.epochs; ++ep) {
    order.shuffle(users.begin(), users.end());
    const auto batch = sample_pairs(index, users, cfg.pairs_per_user, neg);
    for (const auto& e : batch.entries) {
      auto u = m.user.row(e.user);
      auto qi = m.item.row(e.positive);
      auto qj = m.item.row(e.negative);
      const double x = dot(u, qi) - dot(u, qj);
      const double g = sigmoid(-x);  // d(-log sigmoid(x))/dx = -sigmoid(-x)
      std::copy(u.begin(), u.end(), pu.begin());
      for (std::size_t f = 0; f < cfg.dim; ++f) {
        u[f] += cfg.lr * (g * (qi[f] - qj[f]) - cfg.reg * u[f]);
        qi[f] += cfg.lr * (g * pu[f] - cfg.reg * qi[f]);
        qj[f] += cfg.lr * (-g * pu[f] - cfg.reg * qj[f]);
      }
    }
  }
  return m;
}

inline Metrics train_mf_baseline(const SplitDataset& split, const MfConfig& cfg,
                                 std::span<const std::size_t> cutoffs, unsigned threads = 1) {
  const auto model = train_mf(split.train, cfg);
  return evaluate_scorer([&](Index u, std::span<const Index> items) { return model.score(u, items); },
                         split, cutoffs, threads);
}

// ---------------------------------------------------------------------------
// Activity buckets: users grouped by total training interactions.

struct BucketMetrics {
  std::size_t lo = 0, hi = 0;  // inclusive interaction-count range
  std::size_t users = 0;
  double hr = 0;
};

inline std::vector<std::size_t> activity_counts(const InteractionTensor& train) {
  std::vector<std::size_t> c(train.num_users(), 0);
  for (const auto& t : train.triples()) ++c[t.user];
  return c;
}

// Splits eval users into `buckets` equal-population groups by activity and
// reports HR@cutoff within each.
inline std::vector<BucketMetrics> bucket_hr(const Metrics& m, const InteractionTensor& train,
                                            std::size_t buckets, std::size_t cutoff) {
  const auto counts = activity_counts(train);
  auto ranks = m.per_user;
  std::stable_sort(ranks.begin(), ranks.end(), [&](const UserRank& a, const UserRank& b) {
    return counts[a.user] < counts[b.user];
  });
  std::vector<BucketMetrics> out;
  for (std::size_t b = 0; b < buckets; ++b) {
    const std::size_t lo = ranks.size() * b / buckets;
    const std::size_t hi = ranks.size() * (b + 1) / buckets;
    if (lo == hi) continue;
    BucketMetrics bm;
    bm.lo = counts[ranks[lo].user];
    bm.hi = counts[ranks[hi - 1].user];
    bm.users = hi - lo;
    for (std::size_t q = lo; q < hi; ++q) bm.hr += ranks[q].rank <= cutoff ? 1.0 : 0.0;
    bm.hr /= static_cast<double>(bm.users);
    out.push_back(bm);
  }
  return out;
}

}  // namespace mixrec
