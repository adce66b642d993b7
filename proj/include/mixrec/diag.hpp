#pragma once

// Executable checks of the score decompositions:
//
//   linear GNN:   z_i . z_j = sum_{i',j'} alpha_i' alpha_j' e_i' . e_j'
//                 (alpha = sums over L-step paths of degree-normalization products)
//   hypergraph:   H_i . H_j = sum_{i',j'} beta_i' beta_j' z_i' . z_j'
//                 (beta_i' = sum_e H~_{i,e} H~_{i',e}, identity activation)
//
// plus operation counters checked against the asymptotic cost formulas.

#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "mixrec/corelin.hpp"
#include "mixrec/graph.hpp"
#include "mixrec/hypergraph.hpp"
#include "mixrec/model.hpp"
#include "mixrec/train.hpp"

namespace mixrec {

struct NodeCoef {
  std::size_t node = 0;  // combined index: users [0, I), items [I, I+J)
  double coef = 0;
};

struct DecompositionReport {
  double direct_score = 0;
  double reconstructed_score = 0;
  double max_abs_error = 0;
  std::vector<NodeCoef> left;   // coefficients around the user
  std::vector<NodeCoef> right;  // coefficients around the item
  // Hypergraph only: users in a different connected component from the
  // scored user, and how many of them carry |beta| > 1e-6.
  std::size_t disconnected_users = 0;
  std::size_t disconnected_nonzero = 0;
};

namespace detail {

// Combined (users + items) neighbour lists over every behavior.
struct CombinedGraph {
  std::size_t num_users = 0;
  std::vector<std::vector<std::pair<std::size_t, double>>> nbrs;
};

inline CombinedGraph combined_graph(const BehaviorAdjacency& adj) {
  CombinedGraph g;
  g.num_users = adj.num_users();
  g.nbrs.resize(adj.num_users() + adj.num_items());
  for (std::size_t k = 0; k < adj.num_behaviors(); ++k) {
    for (Side s : {Side::User, Side::Item}) {
      const auto& blk = adj.block(k, s);
      const std::size_t row_off = s == Side::User ? 0 : adj.num_users();
      const std::size_t col_off = s == Side::User ? adj.num_users() : 0;
      for (std::size_t r = 0; r < blk.rows(); ++r)
        for (std::size_t p = blk.row_ptr[r]; p < blk.row_ptr[r + 1]; ++p)
          g.nbrs[row_off + r].push_back({col_off + blk.cols[p], blk.coef[p]});
    }
  }
  return g;
}

// alpha[n] = sum over all walks of exactly L steps from `start` to n of the
// product of edge coefficients. Enumerates walks explicitly.
inline std::map<std::size_t, double> path_coefficients(const CombinedGraph& g, std::size_t start,
                                                       std::size_t L) {
  std::map<std::size_t, double> out;
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t n, std::size_t left,
                                                                    double prod) {
    if (left == 0) {
      out[n] += prod;
      return;
    }
    for (const auto& [m, c] : g.nbrs[n]) walk(m, left - 1, prod * c);
  };
  walk(start, L, 1.0);
  return out;
}

inline std::vector<std::size_t> components(const CombinedGraph& g) {
  std::vector<std::size_t> comp(g.nbrs.size(), std::numeric_limits<std::size_t>::max());
  std::size_t next = 0;
  for (std::size_t s = 0; s < g.nbrs.size(); ++s) {
    if (comp[s] != std::numeric_limits<std::size_t>::max()) continue;
    std::vector<std::size_t> stack{s};
    comp[s] = next;
    while (!stack.empty()) {
      const auto n = stack.back();
      stack.pop_back();
      for (const auto& [m, c] : g.nbrs[n])
        if (comp[m] == std::numeric_limits<std::size_t>::max()) {
          comp[m] = next;
          stack.push_back(m);
        }
    }
    ++next;
  }
  return comp;
}

}  // namespace detail

// Linear L-layer GNN on the multiplex graph (no residual, no activation):
// X^l = A X^(l-1), score = X^L_user . X^L_item.
inline DecompositionReport gnn_decompose(const BehaviorAdjacency& adj, const Matrix& user_emb,
                                         const Matrix& item_emb, std::size_t L, std::size_t user,
                                         std::size_t item) {
  if (user >= adj.num_users() || item >= adj.num_items())
    throw IndexError("gnn_decompose: node out of range");
  const std::size_t I = adj.num_users();
  const auto g = detail::combined_graph(adj);

  // direct: dense propagation on the combined node set
  Matrix x(I + adj.num_items(), user_emb.cols());
  for (std::size_t i = 0; i < I; ++i) std::copy(user_emb.row(i).begin(), user_emb.row(i).end(), x.row(i).begin());
  for (std::size_t j = 0; j < adj.num_items(); ++j)
    std::copy(item_emb.row(j).begin(), item_emb.row(j).end(), x.row(I + j).begin());
  const Matrix base = x;
  for (std::size_t l = 0; l < L; ++l) {
    Matrix next(x.rows(), x.cols());
    for (std::size_t n = 0; n < g.nbrs.size(); ++n)
      for (const auto& [m, c] : g.nbrs[n])
        for (std::size_t q = 0; q < x.cols(); ++q) next(n, q) += c * x(m, q);
    x = std::move(next);
  }

  DecompositionReport rep;
  rep.direct_score = dot(x.row(user), x.row(I + item));
  const auto left = detail::path_coefficients(g, user, L);
  const auto right = detail::path_coefficients(g, I + item, L);
  for (const auto& [n, c] : left) rep.left.push_back({n, c});
  for (const auto& [n, c] : right) rep.right.push_back({n, c});
  double acc = 0;
  for (const auto& a : rep.left)
    for (const auto& b : rep.right) acc += a.coef * b.coef * dot(base.row(a.node), base.row(b.node));
  rep.reconstructed_score = acc;
  rep.max_abs_error = std::abs(rep.direct_score - rep.reconstructed_score);
  return rep;
}

// Single hypergraph hop for `behavior`, fed by the first-layer graph
// embeddings Z_k (dropout off). Requires identity activations.
inline DecompositionReport hyper_decompose(const ModelParams<double>& params,
                                           const BehaviorAdjacency& adj, std::size_t behavior,
                                           std::size_t user, std::size_t item) {
  if (!params.cfg.identity_activation())
    throw ModeError("hyper_decompose: identity-activation mode (slope = 1) is required");
  if (user >= adj.num_users() || item >= adj.num_items())
    throw IndexError("hyper_decompose: node out of range");
  if (behavior >= adj.num_behaviors()) throw IndexError("hyper_decompose: behavior out of range");

  const SeededRng unused(0, "dropout");
  const DropoutSpec off{1.0, false};
  const auto zu = relation_propagate(adj, Side::User, params.item_emb, off, unused).per_behavior[behavior];
  const auto zv = relation_propagate(adj, Side::Item, params.user_emb, off, unused).per_behavior[behavior];
  const auto iu = hyper_incidence(zu, params.hyper[0][behavior], params.cfg.incidence);
  const auto iv = hyper_incidence(zv, params.hyper[1][behavior], params.cfg.incidence);
  const auto hu = hyper_propagate(iu.tilde, zu, 1.0).node;
  const auto hv = hyper_propagate(iv.tilde, zv, 1.0).node;

  DecompositionReport rep;
  rep.direct_score = dot(hu.row(user), hv.row(item));
  const std::size_t I = adj.num_users();
  for (std::size_t q = 0; q < zu.rows(); ++q)
    rep.left.push_back({q, dot(iu.tilde.row(user), iu.tilde.row(q))});
  for (std::size_t q = 0; q < zv.rows(); ++q)
    rep.right.push_back({I + q, dot(iv.tilde.row(item), iv.tilde.row(q))});
  double acc = 0;
  for (const auto& a : rep.left)
    for (const auto& b : rep.right)
      acc += a.coef * b.coef * dot(zu.row(a.node), zv.row(b.node - I));
  rep.reconstructed_score = acc;
  rep.max_abs_error = std::abs(rep.direct_score - rep.reconstructed_score);

  const auto comp = detail::components(detail::combined_graph(adj));
  for (std::size_t q = 0; q < I; ++q) {
    if (comp[q] == comp[user]) continue;
    ++rep.disconnected_users;
    if (std::abs(rep.left[q].coef) > 1e-6) ++rep.disconnected_nonzero;
  }
  return rep;
}

// Largest |beta| change for `user` after one SGD step of the full objective.
inline double beta_adaptivity(const ModelParams<double>& params, const BehaviorAdjacency& adj,
                              const PairBatch& batch, const TrainConfig& cfg,
                              std::size_t behavior, std::size_t user, std::size_t item,
                              double lr) {
  const auto before = hyper_decompose(params, adj, behavior, user, item);
  SeededRng drop(0, "dropout"), corr(cfg.seed, "corruption");
  ForwardOptions opts;
  opts.corrupt = {cfg.graph_cl_user, cfg.graph_cl_item};
  const auto st = forward(params, adj, opts, drop, corr);
  auto stepped = params;
  sgd_step(stepped, backward(st, params, adj, batch, cfg), lr);
  const auto after = hyper_decompose(stepped, adj, behavior, user, item);
  double mx = 0;
  for (std::size_t q = 0; q < before.left.size(); ++q)
    mx = std::max(mx, std::abs(before.left[q].coef - after.left[q].coef));
  return mx;
}

// ---------------------------------------------------------------------------
// Random instances

// Bernoulli(p) triples over I x J x K; every user also gets one target edge so
// the pairwise loss has something to rank.
inline InteractionTensor random_instance(std::uint64_t seed, std::size_t I, std::size_t J,
                                         std::size_t K, double p) {
  SeededRng r(seed, "tiny");
  InteractionTensor t(I, J, K, K - 1);
  for (Index u = 0; u < I; ++u)
    for (Index v = 0; v < J; ++v)
      for (Index k = 0; k < K; ++k)
        if (r.uniform() < p) t.add(u, v, k);
  for (Index u = 0; u < I; ++u) t.add(u, static_cast<Index>(u % J), static_cast<Index>(K - 1));
  return t;
}

// I=6, J=5, K=3: the instance used for gradient checks.
inline InteractionTensor tiny_instance(std::uint64_t seed) { return random_instance(seed, 6, 5, 3, 0.35); }

struct DecompositionCase {
  std::uint64_t seed = 0;
  double gnn_error = 0;
  double hyper_error = 0;
  // Users outside the L-hop support of the scored user that still carry |beta| > 1e-6.
  std::size_t beyond_support_nonzero = 0;
};

struct DecompositionSuite {
  std::vector<DecompositionCase> cases;
  double max_gnn_error = 0;
  double max_hyper_error = 0;
  std::size_t witnessed = 0;
};

// Both decompositions on `instances` sparse random graphs (I=10, J=8, K=3,
// d=4, E=3, L=2, identity activation), every user scored against one item.
inline DecompositionSuite decomposition_suite(std::size_t instances, std::uint64_t seed) {
  DecompositionSuite out;
  for (std::size_t n = 0; n < instances; ++n) {
    DecompositionCase c;
    c.seed = seed + n;
    const auto t = random_instance(c.seed, 10, 8, 3, 0.1);
    BehaviorAdjacency adj(t);
    ModelConfig mc;
    mc.dim = 4;
    mc.hyperedges = 3;
    mc.layers = 2;
    mc.slope = 1.0;
    SeededRng init(c.seed, "init");
    const auto p = init_params<double>(dims_of(adj, t.target_behavior()), mc, init);
    for (std::size_t u = 0; u < adj.num_users(); ++u) {
      const std::size_t v = (u * 3) % adj.num_items();
      const auto g = gnn_decompose(adj, p.user_emb, p.item_emb, mc.layers, u, v);
      c.gnn_error = std::max(c.gnn_error, g.max_abs_error);
      std::vector<bool> in_support(adj.num_users(), false);
      for (const auto& a : g.left)
        if (a.node < adj.num_users()) in_support[a.node] = true;
      for (std::size_t k = 0; k < adj.num_behaviors(); ++k) {
        const auto h = hyper_decompose(p, adj, k, u, v);
        c.hyper_error = std::max(c.hyper_error, h.max_abs_error);
        if (k != t.target_behavior()) continue;
        for (const auto& b : h.left)
          if (!in_support[b.node] && std::abs(b.coef) > 1e-6) ++c.beyond_support_nonzero;
      }
    }
    out.max_gnn_error = std::max(out.max_gnn_error, c.gnn_error);
    out.max_hyper_error = std::max(out.max_hyper_error, c.hyper_error);
    if (c.beyond_support_nonzero > 0) ++out.witnessed;
    out.cases.push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Complexity counters

struct ComplexityEntry {
  std::string component;
  double measured = 0;   // MACs
  double formula = 0;    // asymptotic expression at run sizes
  double constant = 0;   // tabulated constant factor
  double ratio() const { return measured / (constant * formula); }
  bool within_2x() const { return ratio() >= 0.5 && ratio() <= 2.0; }
};

struct ComplexityReport {
  std::vector<ComplexityEntry> entries;
  std::uint64_t messages_user = 0;
  std::uint64_t messages_item = 0;
};

struct RunSizes {
  std::size_t nnz = 0, num_users = 0, num_items = 0, num_behaviors = 0;
  std::size_t dim = 0, hyperedges = 0, layers = 0;
  std::size_t batch_users = 0, batch_items = 0;
  std::size_t passes = 1;  // forward passes the counters cover
};

// Constants: graph propagation runs once per direction (2); the hypergraph
// does three E-wide products per behavior, layer and side (3KL) with
// corruption adding at most one more; node contrast builds one B x B
// similarity per side and layer.
inline ComplexityReport complexity_counters(const OpCounters& c, const RunSizes& r) {
  ComplexityReport rep;
  rep.messages_user = c.graph_messages_user;
  rep.messages_item = c.graph_messages_item;
  const double P = static_cast<double>(r.passes);
  rep.entries.push_back({"graph", static_cast<double>(c.graph_macs),
                         P * static_cast<double>(r.nnz * r.dim * r.layers), 2.0});
  rep.entries.push_back({"hypergraph", static_cast<double>(c.hyper_macs),
                         P * static_cast<double>((r.num_users + r.num_items) * r.hyperedges * r.dim),
                         3.0 * static_cast<double>(r.num_behaviors * r.layers)});
  if (r.batch_users && r.batch_items) {
    const double bu = static_cast<double>(r.batch_users), bv = static_cast<double>(r.batch_items);
    rep.entries.push_back({"contrastive", static_cast<double>(c.cl_macs),
                           P * bu * bv * static_cast<double>(r.dim),
                           static_cast<double>(r.layers) * (bu / bv + bv / bu)});
  }
  return rep;
}

// Forward-pass MACs for a given model config on a fixed graph.
inline OpCounters measure_forward(const BehaviorAdjacency& adj, std::size_t target,
                                  const ModelConfig& cfg, std::uint64_t seed = 1) {
  SeededRng init(seed, "init"), drop(seed, "dropout"), corr(seed, "corruption");
  const auto p = init_params<double>(dims_of(adj, target), cfg, init);
  ForwardOptions opts;
  opts.corrupt = {false, false};
  return forward(p, adj, opts, drop, corr).counters;
}

}  // namespace mixrec
