#pragma once

// End-to-end training runs driven by a RunConfig: data loading or synthesis,
// the leave-one-out split, the epoch loop with per-epoch checkpoints, final
// evaluation, the MF baseline and the on-disk artifacts.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mixrec/config.hpp"
#include "mixrec/eval.hpp"
#include "mixrec/train.hpp"

namespace mixrec {

inline InteractionTensor load_or_synthesize(const RunConfig& cfg) {
  if (!cfg.get("data").empty()) return load_interactions(cfg.get("data"), cfg.schema());
  return synth_generate(cfg.synth()).tensor;
}

inline SplitDataset make_split(const InteractionTensor& t, const RunConfig& cfg) {
  SeededRng rng(static_cast<std::uint64_t>(cfg.get_int("split_seed")), "split");
  return leave_one_out_split(t, rng, cfg.get_size("negatives"));
}

inline std::filesystem::path default_run_dir(const RunConfig& cfg) {
  if (!cfg.get("out").empty()) return cfg.get("out");
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream name;
  name << std::put_time(&tm, "%Y%m%d-%H%M%S") << '_' << cfg.config_hash();
  return std::filesystem::path("runs") / name.str();
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline nlohmann::json metrics_json(const Metrics& m) {
  nlohmann::json j;
  j["num_eval_users"] = m.num_eval_users;
  for (const auto& [n, v] : m.hr) j["hr"][std::to_string(n)] = v;
  for (const auto& [n, v] : m.ndcg) j["ndcg"][std::to_string(n)] = v;
  return j;
}

inline void write_ranks(const std::filesystem::path& path, const Metrics& m) {
  std::ofstream out(path);
  out << "user,rank\n";
  for (const auto& r : m.per_user) out << r.user << ',' << r.rank << '\n';
}

struct BucketComparison {
  BucketMetrics mixrec;
  double mf_hr = 0;
};

struct RunOutcome {
  Metrics metrics;
  std::optional<Metrics> mf;
  std::vector<BucketComparison> buckets;
  std::vector<EpochStats> epochs;
  std::uint64_t params_checksum = 0;
  bool diverged = false;
  std::string error;
};

inline constexpr std::size_t kActivityBuckets = 4;

namespace detail {

inline void epoch_row(std::ostream& out, const EpochStats& s) {
  out << s.epoch << ',' << static_cast<double>(s.loss.hinge) << ',' << static_cast<double>(s.loss.reg)
      << ',' << static_cast<double>(s.loss.node_cl) << ',' << static_cast<double>(s.loss.graph_cl)
      << ',' << static_cast<double>(s.loss.total) << ',' << s.loss.active_pairs << ',' << s.pairs
      << ',' << s.counters.graph_macs << ',' << s.counters.hyper_macs << ',' << s.counters.cl_macs
      << ',' << s.wall_seconds << '\n';
}

template <typename T>
RunOutcome run_training_as(const RunConfig& cfg, const SplitDataset& split,
                           const std::optional<std::filesystem::path>& dir, std::ostream* log) {
  const auto mc = cfg.model();
  const auto tc = cfg.train();
  const auto cutoffs = cfg.get_sizes("cutoffs");
  const auto ckpt_hash = cfg.checkpoint_hash();
  Trainer<T> trainer(split, mc, tc);
  if (!cfg.get("checkpoint").empty()) {
    trainer.load_checkpoint(cfg.get("checkpoint"), ckpt_hash);
    if (log) *log << "resumed from " << cfg.get("checkpoint") << " at epoch " << trainer.epochs_done() << '\n';
  }

  std::ofstream csv;
  if (dir) {
    csv.open(*dir / "epochs.csv");
    csv << std::setprecision(12)
        << "epoch,hinge,reg,node_cl,graph_cl,total,active_pairs,pairs,graph_macs,hyper_macs,cl_macs,"
           "wall_seconds\n";
  }

  RunOutcome out;
  while (trainer.epochs_done() < tc.epochs) {
    try {
      out.epochs.push_back(trainer.train_epoch());
    } catch (const DivergenceError& e) {
      out.diverged = true;
      out.error = e.what();
      if (log) *log << e.what() << '\n';
      break;
    }
    const auto& s = out.epochs.back();
    if (dir) {
      detail::epoch_row(csv, s);
      csv.flush();
      trainer.save_checkpoint(*dir / "checkpoint.json", ckpt_hash);
    }
    if (log)
      *log << "epoch " << s.epoch << " hinge " << static_cast<double>(s.loss.hinge) << " total "
           << static_cast<double>(s.loss.total) << " (" << std::fixed << std::setprecision(2)
           << s.wall_seconds << "s)" << std::defaultfloat << std::setprecision(6) << '\n';
  }
  if (dir && out.epochs.empty() && !out.diverged)
    trainer.save_checkpoint(*dir / "checkpoint.json", ckpt_hash);

  out.params_checksum = trainer.params().checksum();
  const auto st = trainer.eval_state();
  out.metrics = evaluate(st, split, cutoffs, tc.threads);
  if (cfg.get_bool("mf_baseline")) {
    out.mf = train_mf_baseline(split, cfg.mf(), cutoffs, tc.threads);
    const std::size_t at = std::find(cutoffs.begin(), cutoffs.end(), 10) != cutoffs.end() ? 10 : cutoffs.front();
    const auto mine = bucket_hr(out.metrics, split.train, kActivityBuckets, at);
    const auto base = bucket_hr(*out.mf, split.train, kActivityBuckets, at);
    for (std::size_t b = 0; b < mine.size(); ++b) out.buckets.push_back({mine[b], base[b].hr});
  }

  if (dir) {
    nlohmann::json j;
    j["config_hash"] = cfg.config_hash();
    j["checkpoint_hash"] = ckpt_hash;
    j["seed"] = tc.seed;
    j["epochs_completed"] = trainer.epochs_done();
    j["diverged"] = out.diverged;
    j["params_checksum"] = out.params_checksum;
    j["ablation"] = cfg.get("ablate");
    const auto& ab = mc.ablation;
    j["active_terms"] = {{"hinge", true},
                         {"weight_decay", tc.lambda1 > 0},
                         {"node_cl", !ab.no_node_cl && tc.lambda2 > 0},
                         {"graph_cl", !ab.no_graph_cl && !ab.no_intents && tc.lambda3 > 0},
                         {"meta", !ab.no_meta && !ab.no_node_cl},
                         {"intents", !ab.no_intents}};
    j["mixrec"] = metrics_json(out.metrics);
    j["per_user_ranks_path"] = "ranks.csv";
    if (out.mf) {
      j["mf"] = metrics_json(*out.mf);
      for (const auto& b : out.buckets)
        j["buckets"].push_back({{"interactions_lo", b.mixrec.lo},
                                {"interactions_hi", b.mixrec.hi},
                                {"users", b.mixrec.users},
                                {"mixrec_hr", b.mixrec.hr},
                                {"mf_hr", b.mf_hr}});
    }
    write_json(*dir / "metrics.json", j);
    write_ranks(*dir / "ranks.csv", out.metrics);
    export_embeddings(*dir / "user_embeddings.csv", st.psi[0]);
    export_embeddings(*dir / "item_embeddings.csv", st.psi[1]);
  }
  return out;
}

}  // namespace detail

// Trains on `split` per `cfg`. With `dir` set, writes config.json,
// epochs.csv, checkpoint.json (after every epoch), metrics.json, ranks.csv
// and the final embeddings there.
inline RunOutcome run_training(const RunConfig& cfg, const SplitDataset& split,
                               const std::optional<std::filesystem::path>& dir = std::nullopt,
                               std::ostream* log = nullptr) {
  if (dir) {
    std::filesystem::create_directories(*dir);
    write_json(*dir / "config.json", cfg.to_json());
  }
  if (cfg.get("precision") == "float") return detail::run_training_as<float>(cfg, split, dir, log);
  return detail::run_training_as<double>(cfg, split, dir, log);
}

}  // namespace mixrec
