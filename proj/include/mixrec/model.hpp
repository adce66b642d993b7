#pragma once

// Trainable tables, initialization and the residual multi-order forward pass:
//
//   Zbar^(u,l) = f(Lambda^(v,l-1))        relation-aware propagation
//   Hbar^(u,l) = g(Z_k^(u,l))             per-behavior hypergraph, summed
//   Lambda^(u,l) = Zbar + Hbar + Lambda^(u,l-1)
//   Psi^(u) = sum_{l=0..L} Lambda^(u,l)
//
// and symmetrically for items.

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <string>
#include <vector>

#include "mixrec/corelin.hpp"
#include "mixrec/graph.hpp"
#include "mixrec/hypergraph.hpp"

namespace mixrec {

struct Ablation {
  bool no_node_cl = false;
  bool no_graph_cl = false;
  bool no_meta = false;
  bool no_intents = false;

  friend bool operator==(const Ablation&, const Ablation&) = default;
};

struct ModelConfig {
  std::size_t dim = 32;
  std::size_t hyperedges = 32;
  std::size_t layers = 2;
  double slope = 0.5;  // 1.0 makes every activation the identity
  IncidenceMode incidence = IncidenceMode::Scaled;
  double norm_eps = 1e-8;
  Ablation ablation;

  bool identity_activation() const { return slope == 1.0; }

  void validate() const {
    if (dim == 0 || hyperedges == 0) throw ConfigError("model: dim and hyperedges must be >= 1");
    if (!(slope >= 0.0 && slope <= 1.0)) throw ConfigError("model: slope must lie in [0, 1]");
    if (!(norm_eps > 0.0)) throw ConfigError("model: norm_eps must be > 0");
  }
};

struct GraphDims {
  std::size_t num_users = 0;
  std::size_t num_items = 0;
  std::size_t num_behaviors = 0;
  std::size_t target = 0;

  std::size_t nodes(Side s) const { return s == Side::User ? num_users : num_items; }
  // Behaviors other than the target, in ascending order.
  std::vector<std::size_t> auxiliary() const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < num_behaviors; ++k)
      if (k != target) out.push_back(k);
    return out;
  }
};

template <typename T = double>
struct ModelParams {
  GraphDims dims;
  ModelConfig cfg;
  DenseMatrix<T> user_emb;                          // I x d
  DenseMatrix<T> item_emb;                          // J x d
  std::array<std::vector<DenseMatrix<T>>, 2> hyper; // [side][k], E x d
  // Meta network, one (d x d, 1 x d) pair per (layer, side, auxiliary behavior).
  std::vector<DenseMatrix<T>> meta_w;
  std::vector<DenseMatrix<T>> meta_b;

  std::size_t meta_slot(std::size_t layer, Side s, std::size_t aux_pos) const {
    return (layer * 2 + side_index(s)) * (dims.num_behaviors - 1) + aux_pos;
  }

  const DenseMatrix<T>& base(Side s) const { return s == Side::User ? user_emb : item_emb; }
  DenseMatrix<T>& base(Side s) { return s == Side::User ? user_emb : item_emb; }

  // Visits every table in a fixed order with a stable name and group label.
  template <typename Self, typename Fn>
  static void visit(Self& self, Fn&& fn) {
    fn("user_emb", "user_emb", self.user_emb);
    fn("item_emb", "item_emb", self.item_emb);
    for (std::size_t s = 0; s < 2; ++s)
      for (std::size_t k = 0; k < self.hyper[s].size(); ++k)
        fn(std::string(s == 0 ? "user" : "item") + "_hyper_" + std::to_string(k),
           s == 0 ? "user_hyper" : "item_hyper", self.hyper[s][k]);
    for (std::size_t m = 0; m < self.meta_w.size(); ++m) {
      fn("meta_w_" + std::to_string(m), "meta_weight", self.meta_w[m]);
      fn("meta_b_" + std::to_string(m), "meta_bias", self.meta_b[m]);
    }
  }
  template <typename Fn> void for_each_table(Fn&& fn) { visit(*this, fn); }
  template <typename Fn> void for_each_table(Fn&& fn) const { visit(*this, fn); }

  std::vector<DenseMatrix<T>*> tables() {
    std::vector<DenseMatrix<T>*> out;
    for_each_table([&](const std::string&, const char*, DenseMatrix<T>& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const DenseMatrix<T>*> tables() const {
    std::vector<const DenseMatrix<T>*> out;
    for_each_table(
        [&](const std::string&, const char*, const DenseMatrix<T>& m) { out.push_back(&m); });
    return out;
  }

  // Same shapes, all zeros.
  ModelParams zeros_like() const {
    ModelParams z = *this;
    z.for_each_table([](const std::string&, const char*, DenseMatrix<T>& m) { m.set_zero(); });
    return z;
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for_each_table([&](const std::string&, const char*, const DenseMatrix<T>& m) { n += m.size(); });
    return n;
  }

  // FNV-1a over the raw bytes of every table.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for_each_table([&](const std::string&, const char*, const DenseMatrix<T>& m) {
      const auto* p = reinterpret_cast<const unsigned char*>(m.data().data());
      for (std::size_t b = 0; b < m.size() * sizeof(T); ++b) {
        h ^= p[b];
        h *= 0x100000001b3ULL;
      }
    });
    return h;
  }

  bool all_finite() const {
    bool ok = true;
    for_each_table([&](const std::string&, const char*, const DenseMatrix<T>& m) {
      ok = ok && m.all_finite();
    });
    return ok;
  }
};

// Uniform in [-1/sqrt(d), 1/sqrt(d)] for every table.
template <typename T = double>
ModelParams<T> init_params(const GraphDims& dims, const ModelConfig& cfg, SeededRng& rng) {
  cfg.validate();
  if (dims.num_users == 0 || dims.num_items == 0 || dims.num_behaviors == 0)
    throw ConfigError("init_params: graph dimensions must be >= 1");
  if (dims.target >= dims.num_behaviors) throw ConfigError("init_params: target out of range");
  ModelParams<T> p;
  p.dims = dims;
  p.cfg = cfg;
  const std::size_t d = cfg.dim;
  const std::size_t K = dims.num_behaviors;
  p.user_emb = DenseMatrix<T>(dims.num_users, d);
  p.item_emb = DenseMatrix<T>(dims.num_items, d);
  for (auto& side : p.hyper) side.assign(K, DenseMatrix<T>(cfg.hyperedges, d));
  const std::size_t slots = cfg.layers * 2 * (K - 1);
  p.meta_w.assign(slots, DenseMatrix<T>(d, d));
  p.meta_b.assign(slots, DenseMatrix<T>(1, d));
  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  p.for_each_table([&](const std::string&, const char*, DenseMatrix<T>& m) {
    for (auto& v : m.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  });
  return p;
}

inline GraphDims dims_of(const BehaviorAdjacency& adj, std::size_t target) {
  return {adj.num_users(), adj.num_items(), adj.num_behaviors(), target};
}

// ---------------------------------------------------------------------------
// Forward pass

template <typename T>
struct SideLayer {
  Propagation<T> prop;                        // Z_k and Zbar
  std::vector<HyperIncidence<T>> incidence;   // per behavior
  std::vector<HyperOutput<T>> hyper;          // per behavior
  DenseMatrix<T> hyper_sum;                   // Hbar
  DenseMatrix<T> lambda;                      // Lambda^(l)

  // Graph-level negative for the target behavior.
  bool corrupted = false;
  Corruption corruption;
  DenseMatrix<T> corrupted_tilde;
  DenseMatrix<T> corrupted_edge_pre;
  DenseMatrix<T> corrupted_edge;
};

struct ForwardOptions {
  DropoutSpec dropout;
  std::array<bool, 2> corrupt{true, false};  // per side
  unsigned threads = 1;
};

template <typename T>
struct ForwardState {
  GraphDims dims;
  ModelConfig cfg;
  std::array<DenseMatrix<T>, 2> lambda0;
  std::vector<std::array<SideLayer<T>, 2>> layers;  // index l-1 holds layer l
  std::array<DenseMatrix<T>, 2> psi;
  std::uint64_t params_checksum = 0;
  OpCounters counters;

  const DenseMatrix<T>& lambda(std::size_t l, Side s) const {
    return l == 0 ? lambda0[side_index(s)] : layers[l - 1][side_index(s)].lambda;
  }
};

// One layer for one side: consumes the other side's previous Lambda.
template <typename T>
SideLayer<T> layer_forward(const ModelParams<T>& params, const BehaviorAdjacency& adj, Side side,
                           std::size_t layer, const DenseMatrix<T>& prev_same,
                           const DenseMatrix<T>& prev_other, const ForwardOptions& opts,
                           const SeededRng& dropout_rng, SeededRng& corruption_rng,
                           OpCounters* counters) {
  const auto& cfg = params.cfg;
  const T slope = static_cast<T>(cfg.slope);
  const std::size_t K = params.dims.num_behaviors;
  const std::size_t n = params.dims.nodes(side);
  const std::size_t d = cfg.dim;

  SideLayer<T> out;
  out.prop = relation_propagate(adj, side, prev_other, opts.dropout, dropout_rng, opts.threads,
                                counters);
  out.hyper_sum = DenseMatrix<T>(n, d);

  auto check = [&](const DenseMatrix<T>& m, std::size_t k, const char* what) {
    if (!m.all_finite())
      throw NumericError(std::string("forward: non-finite ") + what + " at layer " +
                         std::to_string(layer) + ", behavior " + std::to_string(k) + ", " +
                         side_name(side) + " side");
  };

  if (!cfg.ablation.no_intents) {
    out.incidence.reserve(K);
    out.hyper.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
      const auto& zk = out.prop.per_behavior[k];
      check(zk, k, "graph embedding");
      out.incidence.push_back(hyper_incidence(zk, params.hyper[side_index(side)][k], cfg.incidence));
      out.hyper.push_back(hyper_propagate(out.incidence.back().tilde, zk, slope));
      check(out.hyper.back().node, k, "hypergraph embedding");
      out.hyper_sum += out.hyper.back().node;
      if (counters) counters->hyper_macs += 3 * n * cfg.hyperedges * d;
    }
    const std::size_t kt = params.dims.target;
    if (opts.corrupt[side_index(side)] && n >= 2) {
      out.corrupted = true;
      out.corruption = draw_corruption(n, corruption_rng);
      out.corrupted_tilde = apply_corruption(out.incidence[kt].tilde, out.corruption);
      auto [pre, edge] = hyper_edges(out.corrupted_tilde, out.prop.per_behavior[kt], slope);
      out.corrupted_edge_pre = std::move(pre);
      out.corrupted_edge = std::move(edge);
      if (counters) counters->hyper_macs += n * cfg.hyperedges * d;
    }
  }

  out.lambda = out.prop.summed;
  out.lambda += out.hyper_sum;
  out.lambda += prev_same;
  check(out.lambda, K, "layer output");
  return out;
}

// Each call consumes one draw from `dropout_rng` (the pass key) and one
// permutation per corrupted (layer, side) from `corruption_rng`.
template <typename T>
ForwardState<T> forward(const ModelParams<T>& params, const BehaviorAdjacency& adj,
                        const ForwardOptions& opts, SeededRng& dropout_rng,
                        SeededRng& corruption_rng) {
  if (adj.num_users() != params.dims.num_users || adj.num_items() != params.dims.num_items ||
      adj.num_behaviors() != params.dims.num_behaviors)
    throw ShapeError("forward: graph does not match parameter dimensions");

  ForwardState<T> st;
  st.dims = params.dims;
  st.cfg = params.cfg;
  st.params_checksum = params.checksum();
  st.lambda0[0] = params.user_emb;
  st.lambda0[1] = params.item_emb;
  st.psi = st.lambda0;

  const SeededRng pass = dropout_rng.fork(dropout_rng.next_u64());
  st.layers.reserve(params.cfg.layers);
  for (std::size_t l = 1; l <= params.cfg.layers; ++l) {
    std::array<SideLayer<T>, 2> both;
    for (Side s : {Side::User, Side::Item}) {
      const auto& prev_same = st.lambda(l - 1, s);
      const auto& prev_other = st.lambda(l - 1, other(s));
      both[side_index(s)] =
          layer_forward(params, adj, s, l, prev_same, prev_other, opts,
                        pass.fork(l * 2 + side_index(s)), corruption_rng, &st.counters);
    }
    st.layers.push_back(std::move(both));
    for (Side s : {Side::User, Side::Item}) st.psi[side_index(s)] += st.lambda(l, s);
  }
  return st;
}

// Dropout off, no corruption.
template <typename T>
ForwardState<T> forward_eval(const ModelParams<T>& params, const BehaviorAdjacency& adj,
                             unsigned threads = 1) {
  SeededRng unused_drop(0, "dropout"), unused_corrupt(0, "corruption");
  ForwardOptions opts;
  opts.corrupt = {false, false};
  opts.threads = threads;
  return forward(params, adj, opts, unused_drop, unused_corrupt);
}

template <typename T>
T predict(const ForwardState<T>& st, std::size_t user, std::size_t item) {
  if (user >= st.dims.num_users || item >= st.dims.num_items)
    throw IndexError("predict: (" + std::to_string(user) + ", " + std::to_string(item) +
                     ") out of range");
  return dot(st.psi[0].row(user), st.psi[1].row(item));
}

template <typename T>
std::vector<T> score_items(const ForwardState<T>& st, std::size_t user,
                           std::span<const Index> items) {
  if (user >= st.dims.num_users) throw IndexError("score_items: user out of range");
  std::vector<T> out(items.size());
  const auto u = st.psi[0].row(user);
  for (std::size_t k = 0; k < items.size(); ++k) {
    if (items[k] >= st.dims.num_items) throw IndexError("score_items: item out of range");
    out[k] = dot(u, st.psi[1].row(items[k]));
  }
  return out;
}

// CSV with header `node_id,dim_0,...`; one file per side.
template <typename T>
void export_embeddings(const std::filesystem::path& path, const DenseMatrix<T>& emb) {
  std::ofstream out(path);
  if (!out) throw DataError("export_embeddings: cannot open " + path.string());
  out << "node_id";
  for (std::size_t j = 0; j < emb.cols(); ++j) out << ",dim_" << j;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    out << i;
    for (T v : emb.row(i)) out << ',' << v;
    out << '\n';
  }
}

}  // namespace mixrec
