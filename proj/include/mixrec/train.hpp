#pragma once

// Joint objective, hand-written reverse-mode gradients, optimizers, the epoch
// loop, a central-difference gradient checker and checkpoints.
//
//   L = sum_pairs max(0, 1 - (x_pos - x_neg)) + l1 ||Theta||^2 + l2 L_node + l3 L_graph

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixrec/corelin.hpp"
#include "mixrec/data.hpp"
#include "mixrec/graph.hpp"
#include "mixrec/hypergraph.hpp"
#include "mixrec/model.hpp"
#include "mixrec/ssl.hpp"

namespace mixrec {

enum class Optimizer : std::uint8_t { Adam, Sgd };

struct TrainConfig {
  double lambda1 = 1e-4;
  double lambda2 = 1e-5;
  double lambda3 = 1e-5;
  std::size_t pairs_per_user = 1;
  double lr = 1e-3;
  std::size_t epochs = 30;
  std::size_t batch_size = 256;
  double keep_prob = 0.8;
  ContrastConfig contrast;
  bool node_cl_user = true;
  bool node_cl_item = true;
  bool graph_cl_user = true;
  bool graph_cl_item = false;
  // Node-level denominators over all nodes instead of the batch.
  bool cl_full_denominator = false;
  Optimizer optimizer = Optimizer::Adam;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 42;
  unsigned threads = 1;

  void validate() const {
    for (double l : {lambda1, lambda2, lambda3})
      if (!(l >= 0.0)) throw ConfigError("train: regularization weights must be >= 0");
    if (pairs_per_user == 0) throw ConfigError("train: pairs_per_user must be >= 1");
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw ConfigError("train: keep_prob in (0, 1]");
    contrast.validate();
  }
};

// Extended precision so finite-difference probes are not limited by the sum.
struct LossBreakdown {
  long double hinge = 0;
  long double reg = 0;       // ||Theta||_F^2 over active tables
  long double node_cl = 0;   // unweighted, averaged over layers
  long double graph_cl = 0;  // unweighted, averaged over layers
  long double total = 0;
  std::size_t active_pairs = 0;
};

// Tables that take part in the objective under the current ablation flags.
// Inactive tables get neither loss nor weight decay.
inline bool table_active(const std::string& group, const Ablation& ab) {
  if (group == "user_hyper" || group == "item_hyper") return !ab.no_intents;
  if (group == "meta_weight" || group == "meta_bias") return !ab.no_meta && !ab.no_node_cl;
  return true;
}

namespace detail {

template <typename T>
DenseMatrix<T> gather_rows(const DenseMatrix<T>& m, std::span<const Index> rows) {
  DenseMatrix<T> out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = m.row(rows[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

template <typename T>
void scatter_add_rows(const DenseMatrix<T>& g, std::span<const Index> rows, T scale,
                      DenseMatrix<T>& dst) {
  for (std::size_t r = 0; r < rows.size(); ++r) {
    auto src = g.row(r);
    auto d = dst.row(rows[r]);
    for (std::size_t j = 0; j < src.size(); ++j) d[j] += scale * src[j];
  }
}

template <typename T>
DenseMatrix<T> broadcast_rows(const DenseMatrix<T>& row, std::size_t n, T scale) {
  DenseMatrix<T> out(n, row.cols());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < row.cols(); ++j) out(i, j) = scale * row(0, j);
  return out;
}

// Embedding that feeds node-level contrast for (layer, side, behavior).
template <typename T>
const DenseMatrix<T>& cl_source(const ForwardState<T>& st, std::size_t l, Side s, std::size_t k) {
  const auto& sl = st.layers[l - 1][side_index(s)];
  return st.cfg.ablation.no_intents ? sl.prop.per_behavior[k] : sl.hyper[k].node;
}

}  // namespace detail

// Σ max(0, 1 - (pos - neg)); the subgradient at the kink is 0.
template <typename T>
T hinge_loss(std::span<const T> pos, std::span<const T> neg) {
  if (pos.size() != neg.size())
    throw ShapeError("hinge_loss: " + std::to_string(pos.size()) + " positive vs " +
                     std::to_string(neg.size()) + " negative scores");
  T acc = T(0);
  for (std::size_t s = 0; s < pos.size(); ++s) acc += std::max(T(0), T(1) - (pos[s] - neg[s]));
  return acc;
}

// Objective value and, when `grads` is non-null, its exact gradient with
// respect to every table of `params`. `st` must come from forward() on the
// same params.
template <typename T>
LossBreakdown loss_and_grad(const ForwardState<T>& st, const ModelParams<T>& params,
                            const BehaviorAdjacency& adj, const PairBatch& batch,
                            const TrainConfig& cfg, ModelParams<T>* grads = nullptr,
                            OpCounters* counters = nullptr) {
  if (st.params_checksum != params.checksum())
    throw ConsistencyError("loss_and_grad: parameters changed since the forward pass");
  cfg.validate();
  const auto& mc = params.cfg;
  const Ablation& ab = mc.ablation;
  const std::size_t L = mc.layers;
  const std::size_t K = params.dims.num_behaviors;
  const std::size_t kt = params.dims.target;
  const std::size_t d = mc.dim;
  const T slope = static_cast<T>(mc.slope);
  const T eps = static_cast<T>(mc.norm_eps);
  const auto aux = params.dims.auxiliary();
  const bool want = grads != nullptr;

  LossBreakdown out;
  if (want) *grads = params.zeros_like();

  // ---- pairwise hinge on Psi
  std::array<DenseMatrix<T>, 2> g_psi;
  if (want)
    for (Side s : {Side::User, Side::Item})
      g_psi[side_index(s)] = DenseMatrix<T>(params.dims.nodes(s), d);
  for (const auto& e : batch.entries) {
    const auto pu = st.psi[0].row(e.user);
    const auto pp = st.psi[1].row(e.positive);
    const auto pn = st.psi[1].row(e.negative);
    const T margin = T(1) - (dot(pu, pp) - dot(pu, pn));
    if (margin <= T(0)) continue;
    out.hinge += static_cast<long double>(margin);
    ++out.active_pairs;
    if (!want) continue;
    auto gu = g_psi[0].row(e.user);
    auto gp = g_psi[1].row(e.positive);
    auto gn = g_psi[1].row(e.negative);
    for (std::size_t j = 0; j < d; ++j) {
      gu[j] -= pp[j] - pn[j];
      gp[j] -= pu[j];
      gn[j] += pu[j];
    }
  }

  // ---- weight decay
  {
    const auto ptabs = params.tables();
    std::vector<DenseMatrix<T>*> gtabs;
    if (want) gtabs = grads->tables();
    std::size_t idx = 0;
    params.for_each_table([&](const std::string&, const char* group, const DenseMatrix<T>& m) {
      if (table_active(group, ab)) {
        out.reg += static_cast<long double>(frobenius_sq(m));
        if (want) {
          auto& g = *gtabs[idx];
          const T c = static_cast<T>(2.0 * cfg.lambda1);
          for (std::size_t q = 0; q < m.size(); ++q) g.data()[q] += c * m.data()[q];
        }
      }
      ++idx;
    });
  }

  // Per (layer, side, behavior) gradient arriving at the embeddings that feed
  // the contrastive terms, and at hyperedge embeddings from readouts.
  auto make3 = [&] {
    return std::vector<std::array<std::vector<DenseMatrix<T>>, 2>>(
        L, std::array<std::vector<DenseMatrix<T>>, 2>{std::vector<DenseMatrix<T>>(K),
                                                      std::vector<DenseMatrix<T>>(K)});
  };
  auto g_cl_node = make3();
  auto g_edge_extra = make3();
  std::vector<std::array<DenseMatrix<T>, 2>> g_corrupt_edge(L);

  const bool have_aux = K >= 2 && L >= 1;

  // ---- node-level InfoNCE
  if (have_aux && !ab.no_node_cl) {
    const auto batch_users = batch.users();
    const auto batch_items = batch.items();
    const T scale = static_cast<T>(cfg.lambda2 / static_cast<double>(L));
    for (Side s : {Side::User, Side::Item}) {
      if ((s == Side::User && !cfg.node_cl_user) || (s == Side::Item && !cfg.node_cl_item)) continue;
      std::vector<Index> rows;
      if (cfg.cl_full_denominator) {
        rows.resize(params.dims.nodes(s));
        std::iota(rows.begin(), rows.end(), Index{0});
      } else {
        rows = s == Side::User ? batch_users : batch_items;
      }
      if (rows.empty()) continue;
      for (std::size_t l = 1; l <= L; ++l) {
        const auto target = detail::gather_rows(detail::cl_source(st, l, s, kt), rows);
        std::vector<DenseMatrix<T>> inputs, adapted;
        std::vector<MetaCache<T>> caches;
        for (std::size_t a = 0; a < aux.size(); ++a) {
          inputs.push_back(detail::gather_rows(detail::cl_source(st, l, s, aux[a]), rows));
          if (ab.no_meta) {
            adapted.push_back(inputs.back());
          } else {
            const auto slot = params.meta_slot(l - 1, s, a);
            caches.push_back(
                meta_forward(inputs.back(), params.meta_w[slot], params.meta_b[slot], slope, eps));
            adapted.push_back(caches.back().out);
          }
        }
        NodeClGrad<T> g;
        const T value = node_cl_loss(target, adapted, cfg.contrast, want ? &g : nullptr, counters);
        out.node_cl += static_cast<long double>(value) / static_cast<long double>(L);
        if (!want) continue;
        auto& gl = g_cl_node[l - 1][side_index(s)];
        const std::size_t n = params.dims.nodes(s);
        auto ensure = [&](std::size_t k) -> DenseMatrix<T>& {
          if (gl[k].empty()) gl[k] = DenseMatrix<T>(n, d);
          return gl[k];
        };
        detail::scatter_add_rows(g.target, rows, scale, ensure(kt));
        for (std::size_t a = 0; a < aux.size(); ++a) {
          if (ab.no_meta) {
            detail::scatter_add_rows(g.aux[a], rows, scale, ensure(aux[a]));
            continue;
          }
          const auto slot = params.meta_slot(l - 1, s, a);
          const auto mg = meta_backward(inputs[a], params.meta_w[slot], caches[a], g.aux[a], slope, eps);
          detail::scatter_add_rows(mg.h, rows, scale, ensure(aux[a]));
          grads->meta_w[slot] += mg.w * scale;
          grads->meta_b[slot] += mg.b * scale;
        }
      }
    }
  }

  // ---- graph-level contrast on hyperedge readouts
  if (have_aux && !ab.no_graph_cl && !ab.no_intents) {
    const T scale = static_cast<T>(cfg.lambda3 / static_cast<double>(L));
    for (Side s : {Side::User, Side::Item}) {
      if ((s == Side::User && !cfg.graph_cl_user) || (s == Side::Item && !cfg.graph_cl_item)) continue;
      for (std::size_t l = 1; l <= L; ++l) {
        const auto& sl = st.layers[l - 1][side_index(s)];
        if (!sl.corrupted) continue;
        std::vector<DenseMatrix<T>> readouts;
        for (std::size_t k = 0; k < K; ++k) readouts.push_back(hyper_readout(sl.hyper[k].edge));
        const auto corrupted = hyper_readout(sl.corrupted_edge);
        GraphClGrad<T> g;
        const T value = graph_cl_loss(readouts, corrupted, kt, eps, want ? &g : nullptr);
        out.graph_cl += static_cast<long double>(value) / static_cast<long double>(L);
        if (!want) continue;
        const std::size_t E = mc.hyperedges;
        for (std::size_t k = 0; k < K; ++k)
          g_edge_extra[l - 1][side_index(s)][k] = detail::broadcast_rows(g.readouts[k], E, scale);
        g_corrupt_edge[l - 1][side_index(s)] = detail::broadcast_rows(g.corrupted, E, scale);
      }
    }
  }

  const double w2 = ab.no_node_cl ? 0.0 : cfg.lambda2;
  const double w3 = (ab.no_graph_cl || ab.no_intents) ? 0.0 : cfg.lambda3;
  out.total = out.hinge + cfg.lambda1 * out.reg + w2 * out.node_cl + w3 * out.graph_cl;
  if (!want) return out;

  // ---- reverse pass through the layers
  // G[s][l] = dL/dLambda^(s,l); every order feeds Psi directly.
  std::array<std::vector<DenseMatrix<T>>, 2> G;
  for (Side s : {Side::User, Side::Item})
    G[side_index(s)].assign(L + 1, g_psi[side_index(s)]);

  for (std::size_t l = L; l >= 1; --l) {
    for (Side s : {Side::User, Side::Item}) {
      const std::size_t si = side_index(s);
      const auto& sl = st.layers[l - 1][si];
      const DenseMatrix<T>& gl = G[si][l];
      G[si][l - 1] += gl;

      std::vector<DenseMatrix<T>> g_z(K, gl);
      for (std::size_t k = 0; k < K; ++k) {
        const auto& extra = g_cl_node[l - 1][si][k];
        if (ab.no_intents) {
          if (!extra.empty()) g_z[k] += extra;
          continue;
        }
        DenseMatrix<T> g_h = gl;
        if (!extra.empty()) g_h += extra;
        const auto& zk = sl.prop.per_behavior[k];
        const auto& inc = sl.incidence[k];
        auto hg = hyper_propagate_backward(inc.tilde, zk, sl.hyper[k], g_h,
                                           g_edge_extra[l - 1][si][k], slope);
        g_z[k] += hg.z;
        if (k == kt && sl.corrupted && !g_corrupt_edge[l - 1][si].empty()) {
          auto cg = hyper_edges_backward(sl.corrupted_tilde, zk, sl.corrupted_edge_pre,
                                         g_corrupt_edge[l - 1][si], slope);
          scatter_corruption_grad(cg.tilde, sl.corruption, hg.tilde);
          g_z[k] += cg.z;
        }
        auto [gz_inc, g_w] =
            hyper_incidence_backward(zk, params.hyper[si][k], inc, hg.tilde, mc.incidence);
        g_z[k] += gz_inc;
        grads->hyper[si][k] += g_w;
      }
      static const std::vector<T> no_mask;
      for (std::size_t k = 0; k < K; ++k) {
        const auto& mask = sl.prop.masks.empty() ? no_mask : sl.prop.masks[k];
        relation_propagate_adjoint(adj, s, k, g_z[k], mask, G[side_index(other(s))][l - 1]);
      }
    }
  }
  grads->user_emb += G[0][0];
  grads->item_emb += G[1][0];
  return out;
}

template <typename T>
LossBreakdown total_loss(const ForwardState<T>& st, const ModelParams<T>& params,
                         const BehaviorAdjacency& adj, const PairBatch& batch,
                         const TrainConfig& cfg) {
  return loss_and_grad(st, params, adj, batch, cfg, static_cast<ModelParams<T>*>(nullptr));
}

template <typename T>
ModelParams<T> backward(const ForwardState<T>& st, const ModelParams<T>& params,
                        const BehaviorAdjacency& adj, const PairBatch& batch,
                        const TrainConfig& cfg) {
  ModelParams<T> g;
  loss_and_grad(st, params, adj, batch, cfg, &g);
  return g;
}

// ---------------------------------------------------------------------------
// Optimizers

template <typename T>
struct AdamState {
  ModelParams<T> m;
  ModelParams<T> v;
  std::uint64_t step = 0;
  bool initialized = false;
};

template <typename T>
void adam_step(ModelParams<T>& params, const ModelParams<T>& grads, AdamState<T>& state,
               double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  if (!state.initialized) {
    state.m = params.zeros_like();
    state.v = params.zeros_like();
    state.step = 0;
    state.initialized = true;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  auto p = params.tables();
  auto g = grads.tables();
  auto m = state.m.tables();
  auto v = state.v.tables();
  if (p.size() != g.size() || p.size() != m.size()) throw ShapeError("adam_step: table mismatch");
  for (std::size_t t = 0; t < p.size(); ++t) {
    p[t]->require_same_shape(*g[t], "adam_step");
    auto& pd = p[t]->data();
    const auto& gd = g[t]->data();
    auto& md = m[t]->data();
    auto& vd = v[t]->data();
    for (std::size_t q = 0; q < pd.size(); ++q) {
      const double gq = static_cast<double>(gd[q]);
      md[q] = static_cast<T>(beta1 * md[q] + (1.0 - beta1) * gq);
      vd[q] = static_cast<T>(beta2 * vd[q] + (1.0 - beta2) * gq * gq);
      const double mhat = md[q] / bc1;
      const double vhat = vd[q] / bc2;
      pd[q] = static_cast<T>(pd[q] - lr * mhat / (std::sqrt(vhat) + eps));
    }
  }
}

template <typename T>
void sgd_step(ModelParams<T>& params, const ModelParams<T>& grads, double lr) {
  auto p = params.tables();
  auto g = grads.tables();
  for (std::size_t t = 0; t < p.size(); ++t)
    for (std::size_t q = 0; q < p[t]->size(); ++q)
      p[t]->data()[q] -= static_cast<T>(lr) * g[t]->data()[q];
}

// ---------------------------------------------------------------------------
// Epoch loop

struct TrainRngs {
  SeededRng init, shuffle, negatives, dropout, corruption;

  explicit TrainRngs(std::uint64_t seed = 0)
      : init(seed, "init"), shuffle(seed, "shuffle"), negatives(seed, "negatives"),
        dropout(seed, "dropout"), corruption(seed, "corruption") {}

  std::vector<SeededRng*> all() { return {&init, &shuffle, &negatives, &dropout, &corruption}; }
};

struct EpochStats {
  std::size_t epoch = 0;
  LossBreakdown loss;  // summed over batches
  std::size_t batches = 0;
  std::size_t pairs = 0;
  double wall_seconds = 0;
  OpCounters counters;
};

template <typename T = double>
class Trainer {
 public:
  Trainer(const SplitDataset& split, const ModelConfig& mcfg, const TrainConfig& tcfg)
      : adj_(split.train), index_(split.train), tcfg_(tcfg),
        rngs_(tcfg.seed) {
    tcfg_.validate();
    params_ = init_params<T>(dims_of(adj_, split.train.target_behavior()), mcfg, rngs_.init);
  }

  const ModelParams<T>& params() const { return params_; }
  ModelParams<T>& mutable_params() { return params_; }
  const AdamState<T>& optimizer_state() const { return adam_; }
  const BehaviorAdjacency& adjacency() const { return adj_; }
  const TrainConfig& config() const { return tcfg_; }
  TrainRngs& rngs() { return rngs_; }
  std::size_t epochs_done() const { return epoch_; }

  // One pass over all users with a training target set. On a non-finite
  // loss the parameters and optimizer state roll back to the epoch start.
  EpochStats train_epoch() {
    const auto start = std::chrono::steady_clock::now();
    const auto saved_params = params_;
    const auto saved_adam = adam_;

    std::vector<Index> users;
    for (std::size_t u = 0; u < index_.lists.size(); ++u)
      if (!index_.lists[u].empty()) users.push_back(static_cast<Index>(u));
    rngs_.shuffle.shuffle(users.begin(), users.end());

    EpochStats stats;
    stats.epoch = epoch_ + 1;
    ForwardOptions opts;
    opts.dropout = {tcfg_.keep_prob, tcfg_.keep_prob < 1.0};
    opts.corrupt = {tcfg_.graph_cl_user, tcfg_.graph_cl_item};
    opts.threads = tcfg_.threads;

    for (std::size_t b = 0; b < users.size(); b += tcfg_.batch_size) {
      const std::size_t e = std::min(users.size(), b + tcfg_.batch_size);
      const std::span<const Index> batch_users(users.data() + b, e - b);
      const auto batch = sample_pairs(index_, batch_users, tcfg_.pairs_per_user, rngs_.negatives);
      const auto st = forward(params_, adj_, opts, rngs_.dropout, rngs_.corruption);
      ModelParams<T> grads;
      const auto lb = loss_and_grad(st, params_, adj_, batch, tcfg_, &grads, &stats.counters);
      stats.counters += st.counters;
      if (!std::isfinite(lb.total) || !grads.all_finite()) {
        params_ = saved_params;
        adam_ = saved_adam;
        throw DivergenceError("train_epoch: non-finite loss in epoch " +
                              std::to_string(stats.epoch) + "; parameters rolled back");
      }
      if (tcfg_.optimizer == Optimizer::Adam) {
        adam_step(params_, grads, adam_, tcfg_.lr, tcfg_.beta1, tcfg_.beta2, tcfg_.adam_eps);
      } else {
        sgd_step(params_, grads, tcfg_.lr);
      }
      stats.loss.hinge += lb.hinge;
      stats.loss.reg += lb.reg;
      stats.loss.node_cl += lb.node_cl;
      stats.loss.graph_cl += lb.graph_cl;
      stats.loss.total += lb.total;
      stats.loss.active_pairs += lb.active_pairs;
      stats.pairs += batch.entries.size();
      ++stats.batches;
    }
    ++epoch_;
    stats.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return stats;
  }

  ForwardState<T> eval_state() const { return forward_eval(params_, adj_, tcfg_.threads); }

  // ---- checkpoints

  nlohmann::json to_json(const std::string& config_hash) const {
    nlohmann::json j;
    j["format"] = "mixrec-checkpoint";
    j["version"] = 1;
    j["config_hash"] = config_hash;
    j["epoch"] = epoch_;
    j["params"] = tables_to_json(params_);
    j["adam"] = {{"step", adam_.step}, {"initialized", adam_.initialized}};
    if (adam_.initialized) {
      j["adam"]["m"] = tables_to_json(adam_.m);
      j["adam"]["v"] = tables_to_json(adam_.v);
    }
    auto& r = j["rng"];
    for (auto* s : const_cast<TrainRngs&>(rngs_).all())
      r[s->stream_id()] = {{"seed", s->seed()}, {"position", s->position()}};
    return j;
  }

  void from_json(const nlohmann::json& j, const std::string& expected_hash) {
    if (j.value("format", "") != "mixrec-checkpoint" || j.value("version", 0) != 1)
      throw DataError("checkpoint: unrecognized format");
    if (j.at("config_hash").get<std::string>() != expected_hash)
      throw ConfigError("checkpoint: config hash " + j.at("config_hash").get<std::string>() +
                        " does not match " + expected_hash);
    epoch_ = j.at("epoch").get<std::size_t>();
    tables_from_json(j.at("params"), params_);
    adam_.step = j.at("adam").at("step").get<std::uint64_t>();
    adam_.initialized = j.at("adam").at("initialized").get<bool>();
    if (adam_.initialized) {
      adam_.m = params_.zeros_like();
      adam_.v = params_.zeros_like();
      tables_from_json(j.at("adam").at("m"), adam_.m);
      tables_from_json(j.at("adam").at("v"), adam_.v);
    }
    for (auto* s : rngs_.all()) {
      const auto& e = j.at("rng").at(s->stream_id());
      if (e.at("seed").get<std::uint64_t>() != s->seed())
        throw ConsistencyError("checkpoint: rng seed mismatch for " + s->stream_id());
      s->set_position(e.at("position").get<std::uint64_t>());
    }
  }

  void save_checkpoint(const std::filesystem::path& path, const std::string& config_hash) const {
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp);
      if (!out) throw DataError("save_checkpoint: cannot open " + tmp);
      out << to_json(config_hash).dump() << '\n';
    }
    std::filesystem::rename(tmp, path);
  }

  void load_checkpoint(const std::filesystem::path& path, const std::string& config_hash) {
    std::ifstream in(path);
    if (!in) throw DataError("load_checkpoint: cannot open " + path.string());
    from_json(nlohmann::json::parse(in), config_hash);
  }

 private:
  static nlohmann::json tables_to_json(const ModelParams<T>& p) {
    nlohmann::json out = nlohmann::json::object();
    p.for_each_table([&](const std::string& name, const char*, const DenseMatrix<T>& m) {
      out[name] = {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
    });
    return out;
  }

  static void tables_from_json(const nlohmann::json& j, ModelParams<T>& p) {
    p.for_each_table([&](const std::string& name, const char*, DenseMatrix<T>& m) {
      const auto& e = j.at(name);
      if (e.at("rows").get<std::size_t>() != m.rows() || e.at("cols").get<std::size_t>() != m.cols())
        throw ShapeError("checkpoint: table " + name + " has unexpected shape");
      m.data() = e.at("data").get<std::vector<T>>();
      if (m.data().size() != m.rows() * m.cols())
        throw ShapeError("checkpoint: table " + name + " has wrong length");
    });
  }

  BehaviorAdjacency adj_;
  TargetIndex index_;
  TrainConfig tcfg_;
  TrainRngs rngs_;
  ModelParams<T> params_;
  AdamState<T> adam_;
  std::size_t epoch_ = 0;
};

// ---------------------------------------------------------------------------
// Central-difference gradient check (64-bit only)

struct GradGroupReport {
  std::string group;
  double max_rel = 0;
  double mean_rel = 0;
  double max_abs_grad = 0;
  std::size_t count = 0;
};

struct GradCheckReport {
  std::vector<GradGroupReport> groups;
  double max_rel = 0;
  double step = 0;
  std::size_t checked = 0;
  std::size_t excluded_pairs = 0;
};

// |a - n| / max(|a|, |n|, floor): the floor keeps exact zeros comparable.
inline double relative_error(double analytic, double numeric, double floor = 1e-7) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

template <typename To, typename From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  out.dims = p.dims;
  out.cfg = p.cfg;
  auto convert = [](const DenseMatrix<From>& m) {
    return DenseMatrix<To>(m.rows(), m.cols(), std::vector<To>(m.data().begin(), m.data().end()));
  };
  out.user_emb = convert(p.user_emb);
  out.item_emb = convert(p.item_emb);
  for (std::size_t s = 0; s < 2; ++s)
    for (const auto& w : p.hyper[s]) out.hyper[s].push_back(convert(w));
  for (const auto& w : p.meta_w) out.meta_w.push_back(convert(w));
  for (const auto& b : p.meta_b) out.meta_b.push_back(convert(b));
  return out;
}

// Compares 64-bit analytic gradients to (L(θ+h) - L(θ-h)) / 2h for every
// entry (or a seeded subsample of at most `max_per_table` entries per table).
// The probes evaluate L in `Probe` precision: with double probes, rounding
// noise of order eps*|L|/h swamps entries whose gradient is below ~1e-3.
// Dropout is off and the corruption stream is replayed so every probe sees
// the same permutations. Pairs within 10h of the hinge kink are dropped.
template <typename Probe = long double>
GradCheckReport grad_check(const ModelParams<double>& params, const BehaviorAdjacency& adj,
                           const PairBatch& batch, const TrainConfig& cfg, double step,
                           std::size_t max_per_table, SeededRng& sampler,
                           const SeededRng& corruption = SeededRng(0, "corruption")) {
  ForwardOptions opts;
  opts.dropout = {1.0, false};
  opts.corrupt = {cfg.graph_cl_user, cfg.graph_cl_item};
  auto run_forward = [&](const auto& p) {
    SeededRng drop(0, "dropout");
    SeededRng corr = corruption;
    return forward(p, adj, opts, drop, corr);
  };

  GradCheckReport rep;
  rep.step = step;
  const auto st0 = run_forward(params);
  PairBatch kept;
  kept.pairs_per_user = batch.pairs_per_user;
  for (const auto& e : batch.entries) {
    const double margin = 1.0 - (predict(st0, e.user, e.positive) - predict(st0, e.user, e.negative));
    if (std::abs(margin) < 10.0 * step) {
      ++rep.excluded_pairs;
    } else {
      kept.entries.push_back(e);
    }
  }

  ModelParams<double> grads;
  loss_and_grad(st0, params, adj, kept, cfg, &grads);

  auto probe = cast_params<Probe>(params);
  auto loss_at = [&]() {
    const auto st = run_forward(probe);
    const auto lb = loss_and_grad(st, probe, adj, kept, cfg, static_cast<ModelParams<Probe>*>(nullptr));
    if (!std::isfinite(lb.total)) throw NumericError("grad_check: non-finite loss while probing");
    return lb.total;
  };

  auto ptabs = probe.tables();
  auto gtabs = grads.tables();
  std::map<std::string, GradGroupReport> groups;
  std::vector<std::string> order;
  std::size_t t = 0;
  params.for_each_table([&](const std::string&, const char* group, const DenseMatrix<double>&) {
    auto& tab = *ptabs[t];
    const auto& g = *gtabs[t];
    ++t;
    std::vector<std::size_t> entries(tab.size());
    std::iota(entries.begin(), entries.end(), std::size_t{0});
    if (entries.size() > max_per_table) {
      sampler.shuffle(entries.begin(), entries.end());
      entries.resize(max_per_table);
      std::sort(entries.begin(), entries.end());
    }
    if (!groups.count(group)) {
      order.push_back(group);
      groups[group].group = group;
    }
    auto& rg = groups[group];
    for (std::size_t q : entries) {
      const Probe orig = tab.data()[q];
      tab.data()[q] = orig + static_cast<Probe>(step);
      const Probe up = loss_at();
      tab.data()[q] = orig - static_cast<Probe>(step);
      const Probe down = loss_at();
      tab.data()[q] = orig;
      const double numeric = static_cast<double>((up - down) / (2 * static_cast<Probe>(step)));
      const double rel = relative_error(g.data()[q], numeric);
      rg.max_rel = std::max(rg.max_rel, rel);
      rg.mean_rel += rel;
      rg.max_abs_grad = std::max(rg.max_abs_grad, std::abs(g.data()[q]));
      ++rg.count;
      ++rep.checked;
    }
  });
  for (const auto& name : order) {
    auto r = groups[name];
    if (r.count) r.mean_rel /= static_cast<double>(r.count);
    rep.max_rel = std::max(rep.max_rel, r.max_rel);
    rep.groups.push_back(r);
  }
  return rep;
}

}  // namespace mixrec
