#pragma once

// Multi-behavior interaction data: TSV ingest, leave-one-out split, training
// pair sampling and a planted-intent synthetic generator.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixrec/corelin.hpp"

namespace mixrec {

using Index = std::uint32_t;

struct Triple {
  Index user = 0;
  Index item = 0;
  Index behavior = 0;
  friend bool operator==(const Triple&, const Triple&) = default;
};

// Sparse (user, item, behavior) record with implicit value 1. Triples keep
// insertion order, which doubles as the "time" order for the split.
class InteractionTensor {
 public:
  InteractionTensor() = default;
  InteractionTensor(std::size_t num_users, std::size_t num_items, std::size_t num_behaviors,
                    Index target_behavior)
      : num_users_(num_users), num_items_(num_items), num_behaviors_(num_behaviors),
        target_(target_behavior) {
    if (num_behaviors_ == 0) throw ConfigError("InteractionTensor: need at least one behavior");
    if (target_ >= num_behaviors_) {
      throw RangeError("InteractionTensor: target behavior " + std::to_string(target_) +
                       " >= K=" + std::to_string(num_behaviors_));
    }
  }

  // Returns false when the triple was already present.
  bool add(Index u, Index v, Index k) {
    if (u >= num_users_ || v >= num_items_ || k >= num_behaviors_) {
      throw RangeError("InteractionTensor::add: triple (" + std::to_string(u) + "," +
                       std::to_string(v) + "," + std::to_string(k) + ") out of range");
    }
    if (!seen_.insert(key(u, v, k)).second) return false;
    triples_.push_back({u, v, k});
    return true;
  }

  bool contains(Index u, Index v, Index k) const { return seen_.count(key(u, v, k)) != 0; }

  std::size_t num_users() const { return num_users_; }
  std::size_t num_items() const { return num_items_; }
  std::size_t num_behaviors() const { return num_behaviors_; }
  Index target_behavior() const { return target_; }
  std::size_t nnz() const { return triples_.size(); }
  const std::vector<Triple>& triples() const { return triples_; }

  std::size_t count_behavior(Index k) const {
    std::size_t n = 0;
    for (const auto& t : triples_) n += (t.behavior == k);
    return n;
  }

  // Per-user item lists for one behavior, in insertion order.
  std::vector<std::vector<Index>> items_by_user(Index k) const {
    std::vector<std::vector<Index>> out(num_users_);
    for (const auto& t : triples_)
      if (t.behavior == k) out[t.user].push_back(t.item);
    return out;
  }

  std::vector<std::vector<Index>> target_items_by_user() const { return items_by_user(target_); }

  friend bool operator==(const InteractionTensor& a, const InteractionTensor& b) {
    return a.num_users_ == b.num_users_ && a.num_items_ == b.num_items_ &&
           a.num_behaviors_ == b.num_behaviors_ && a.target_ == b.target_ &&
           a.triples_ == b.triples_;
  }

 private:
  std::uint64_t key(Index u, Index v, Index k) const {
    return (static_cast<std::uint64_t>(u) * num_items_ + v) * num_behaviors_ + k;
  }

  std::size_t num_users_ = 0;
  std::size_t num_items_ = 0;
  std::size_t num_behaviors_ = 0;
  Index target_ = 0;
  std::vector<Triple> triples_;
  std::unordered_set<std::uint64_t> seen_;
};

// Column spec for TSV ingest. Zero user/item counts mean "infer from file".
struct Schema {
  std::size_t num_behaviors = 3;
  Index target_behavior = 2;
  std::size_t num_users = 0;
  std::size_t num_items = 0;
};

namespace detail {

inline bool parse_index(std::string_view tok, Index& out) {
  if (tok.empty()) return false;
  std::uint64_t v = 0;
  for (char c : tok) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + static_cast<unsigned>(c - '0');
    if (v > std::numeric_limits<Index>::max()) return false;
  }
  out = static_cast<Index>(v);
  return true;
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (start <= line.size()) {
    const auto tab = line.find('\t', start);
    const auto end = tab == std::string_view::npos ? line.size() : tab;
    out.push_back(line.substr(start, end - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return out;
}

}  // namespace detail

// Reads `user<TAB>item<TAB>behavior` lines. Blank lines are skipped;
// duplicate triples are stored once.
inline InteractionTensor load_interactions(const std::filesystem::path& path,
                                           const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("load_interactions: cannot open " + path.string());

  std::vector<Triple> raw;
  std::size_t max_user = 0, max_item = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    while (!sv.empty() && (sv.back() == '\r' || sv.back() == ' ')) sv.remove_suffix(1);
    if (sv.empty()) continue;
    const auto fields = detail::split_fields(sv);
    Triple t;
    if (fields.size() != 3 || !detail::parse_index(fields[0], t.user) ||
        !detail::parse_index(fields[1], t.item) || !detail::parse_index(fields[2], t.behavior)) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) +
                       ": expected three non-negative integers separated by tabs, got '" + line +
                       "'");
    }
    if (t.behavior >= schema.num_behaviors) {
      throw RangeError(path.string() + ":" + std::to_string(lineno) + ": behavior id " +
                       std::to_string(t.behavior) + " >= declared K=" +
                       std::to_string(schema.num_behaviors));
    }
    max_user = std::max<std::size_t>(max_user, t.user + 1);
    max_item = std::max<std::size_t>(max_item, t.item + 1);
    raw.push_back(t);
  }
  if (schema.num_users && max_user > schema.num_users)
    throw RangeError("load_interactions: user id exceeds declared user count");
  if (schema.num_items && max_item > schema.num_items)
    throw RangeError("load_interactions: item id exceeds declared item count");

  InteractionTensor t(std::max(max_user, schema.num_users), std::max(max_item, schema.num_items),
                      schema.num_behaviors, schema.target_behavior);
  for (const auto& r : raw) t.add(r.user, r.item, r.behavior);
  return t;
}

inline void save_interactions(const std::filesystem::path& path, const InteractionTensor& t) {
  std::ofstream out(path);
  if (!out) throw DataError("save_interactions: cannot open " + path.string());
  for (const auto& tr : t.triples()) out << tr.user << '\t' << tr.item << '\t' << tr.behavior << '\n';
}

// ---------------------------------------------------------------------------
// Leave-one-out split

struct SplitDataset {
  InteractionTensor train;
  std::vector<std::optional<Index>> test_items;
  std::vector<std::vector<Index>> eval_negatives;
  std::uint64_t seed = 0;

  std::vector<Index> eval_users() const {
    std::vector<Index> out;
    for (std::size_t u = 0; u < test_items.size(); ++u)
      if (test_items[u]) out.push_back(static_cast<Index>(u));
    return out;
  }
};

// Users with >= 2 target interactions lose their last one (file order) to the
// test set; auxiliary copies of that pair stay in train.
inline SplitDataset leave_one_out_split(const InteractionTensor& t, SeededRng& rng,
                                        std::size_t num_negatives = 99) {
  if (t.num_users() == 0 || t.nnz() == 0) throw DataError("leave_one_out_split: empty dataset");
  const Index target = t.target_behavior();
  const auto target_sets = t.target_items_by_user();

  SplitDataset s;
  s.seed = rng.seed();
  s.test_items.assign(t.num_users(), std::nullopt);
  s.eval_negatives.assign(t.num_users(), {});
  for (std::size_t u = 0; u < t.num_users(); ++u)
    if (target_sets[u].size() >= 2) s.test_items[u] = target_sets[u].back();

  s.train = InteractionTensor(t.num_users(), t.num_items(), t.num_behaviors(), target);
  for (const auto& tr : t.triples()) {
    if (tr.behavior == target && s.test_items[tr.user] == tr.item) continue;
    s.train.add(tr.user, tr.item, tr.behavior);
  }

  for (std::size_t u = 0; u < t.num_users(); ++u) {
    if (!s.test_items[u]) continue;
    std::unordered_set<Index> excluded(target_sets[u].begin(), target_sets[u].end());
    const std::size_t eligible = t.num_items() - excluded.size();
    const std::size_t want = std::min(num_negatives, eligible);
    auto& negs = s.eval_negatives[u];
    negs.reserve(want);
    while (negs.size() < want) {
      const auto cand = static_cast<Index>(rng.uniform_int(t.num_items()));
      if (excluded.insert(cand).second) negs.push_back(cand);
    }
  }
  return s;
}

// Persists train.tsv, test.tsv and a JSON sidecar next to each other.
inline void save_split(const std::filesystem::path& dir, const SplitDataset& s) {
  std::filesystem::create_directories(dir);
  save_interactions(dir / "train.tsv", s.train);
  std::ofstream test(dir / "test.tsv");
  for (std::size_t u = 0; u < s.test_items.size(); ++u)
    if (s.test_items[u]) test << u << '\t' << *s.test_items[u] << '\n';
  nlohmann::json side;
  side["seed"] = s.seed;
  side["target_behavior"] = s.train.target_behavior();
  nlohmann::json negs = nlohmann::json::object();
  for (std::size_t u = 0; u < s.eval_negatives.size(); ++u)
    if (!s.eval_negatives[u].empty()) negs[std::to_string(u)] = s.eval_negatives[u];
  side["negatives"] = std::move(negs);
  std::ofstream(dir / "split.json") << side.dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Training pairs

struct PairEntry {
  Index user = 0;
  Index positive = 0;
  Index negative = 0;
};

struct PairBatch {
  std::vector<PairEntry> entries;
  std::size_t pairs_per_user = 1;

  std::vector<Index> users() const {
    std::vector<Index> out;
    std::unordered_set<Index> seen;
    for (const auto& e : entries)
      if (seen.insert(e.user).second) out.push_back(e.user);
    return out;
  }
  std::vector<Index> items() const {
    std::vector<Index> out;
    std::unordered_set<Index> seen;
    for (const auto& e : entries) {
      if (seen.insert(e.positive).second) out.push_back(e.positive);
      if (seen.insert(e.negative).second) out.push_back(e.negative);
    }
    return out;
  }
};

// Per-user target sets as hash sets, built once per dataset.
struct TargetIndex {
  std::vector<std::vector<Index>> lists;
  std::vector<std::unordered_set<Index>> sets;
  std::size_t num_items = 0;

  explicit TargetIndex(const InteractionTensor& train)
      : lists(train.target_items_by_user()), num_items(train.num_items()) {
    sets.reserve(lists.size());
    for (const auto& l : lists) sets.emplace_back(l.begin(), l.end());
  }
};

// S (positive, negative) pairs for each listed user with a non-empty target set.
inline PairBatch sample_pairs(const TargetIndex& index, std::span<const Index> users,
                              std::size_t S, SeededRng& rng) {
  if (S == 0) throw ConfigError("sample_pairs: S must be >= 1");
  PairBatch batch;
  batch.pairs_per_user = S;
  for (Index u : users) {
    const auto& pos = index.lists[u];
    if (pos.empty()) continue;
    if (index.sets[u].size() >= index.num_items) {
      throw SamplingError("sample_pairs: user " + std::to_string(u) +
                          " interacted with every item; no negative exists");
    }
    for (std::size_t s = 0; s < S; ++s) {
      const Index p = pos[rng.uniform_int(pos.size())];
      Index n;
      do {
        n = static_cast<Index>(rng.uniform_int(index.num_items));
      } while (index.sets[u].count(n));
      batch.entries.push_back({u, p, n});
    }
  }
  return batch;
}

inline PairBatch sample_pairs(const InteractionTensor& train, std::size_t S, SeededRng& rng) {
  TargetIndex index(train);
  std::vector<Index> users(train.num_users());
  std::iota(users.begin(), users.end(), Index{0});
  return sample_pairs(index, users, S, rng);
}

// ---------------------------------------------------------------------------
// Planted-intent synthetic data

struct SynthConfig {
  std::size_t num_users = 2000;
  std::size_t num_items = 1000;
  std::size_t num_behaviors = 3;
  std::size_t intents = 4;
  // Probability that a candidate (user, item) pair reaches behavior level k.
  std::vector<double> funnel_probs{1.0, 0.35, 0.2};
  // Level k >= 1 probabilities are multiplied by this for intent mismatches.
  double mismatch_factor = 0.2;
  // Chance a candidate item is drawn from the user's own intent.
  double intent_affinity = 0.7;
  std::size_t min_candidates = 4;
  std::size_t max_candidates = 60;
  std::uint64_t seed = 2024;
};

struct SynthDataset {
  InteractionTensor tensor;
  std::vector<Index> user_intent;
  std::vector<Index> item_intent;
};

inline void validate(const SynthConfig& c) {
  if (c.num_users == 0 || c.num_items == 0 || c.num_behaviors == 0)
    throw ConfigError("synth: sizes must be positive");
  if (c.intents == 0) throw ConfigError("synth: intents must be >= 1");
  if (c.funnel_probs.size() != c.num_behaviors)
    throw ConfigError("synth: funnel_probs needs one entry per behavior");
  for (std::size_t k = 0; k < c.funnel_probs.size(); ++k) {
    const double p = c.funnel_probs[k];
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synth: probability outside [0,1]");
    if (k > 0 && p > c.funnel_probs[k - 1])
      throw ConfigError("synth: funnel_probs must be non-increasing");
  }
  for (double p : {c.mismatch_factor, c.intent_affinity})
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("synth: probability outside [0,1]");
  if (c.min_candidates == 0 || c.min_candidates > c.max_candidates)
    throw ConfigError("synth: need 1 <= min_candidates <= max_candidates");
}

// Each user draws a candidate list; each candidate climbs the behavior funnel
// with a single uniform draw, so behavior k+1 implies behavior k. Intent
// mismatch damps every level above the first. The last behavior is the target.
inline SynthDataset synth_generate(const SynthConfig& cfg) {
  validate(cfg);
  SeededRng rng(cfg.seed, "synth");
  SynthDataset out;
  out.tensor = InteractionTensor(cfg.num_users, cfg.num_items, cfg.num_behaviors,
                                 static_cast<Index>(cfg.num_behaviors - 1));
  out.user_intent.resize(cfg.num_users);
  out.item_intent.resize(cfg.num_items);
  std::vector<std::vector<Index>> items_of_intent(cfg.intents);
  for (std::size_t v = 0; v < cfg.num_items; ++v) {
    out.item_intent[v] = static_cast<Index>(rng.uniform_int(cfg.intents));
    items_of_intent[out.item_intent[v]].push_back(static_cast<Index>(v));
  }
  for (std::size_t u = 0; u < cfg.num_users; ++u)
    out.user_intent[u] = static_cast<Index>(rng.uniform_int(cfg.intents));

  // Events are generated per user and then interleaved by round so file order
  // mixes users the way a log would.
  std::vector<std::vector<Triple>> per_user(cfg.num_users);
  const std::size_t span = cfg.max_candidates - cfg.min_candidates + 1;
  for (std::size_t u = 0; u < cfg.num_users; ++u) {
    const Index ui = out.user_intent[u];
    // Skewed activity: squaring a uniform draw gives many light users.
    const double a = rng.uniform();
    const std::size_t n = cfg.min_candidates + static_cast<std::size_t>(a * a * span);
    for (std::size_t c = 0; c < n; ++c) {
      Index v;
      if (!items_of_intent[ui].empty() && rng.uniform() < cfg.intent_affinity) {
        v = items_of_intent[ui][rng.uniform_int(items_of_intent[ui].size())];
      } else {
        v = static_cast<Index>(rng.uniform_int(cfg.num_items));
      }
      const bool match = out.item_intent[v] == ui;
      const double draw = rng.uniform();
      for (std::size_t k = 0; k < cfg.num_behaviors; ++k) {
        const double p = cfg.funnel_probs[k] * ((k == 0 || match) ? 1.0 : cfg.mismatch_factor);
        if (draw < p) per_user[u].push_back({static_cast<Index>(u), v, static_cast<Index>(k)});
      }
    }
  }
  for (std::size_t round = 0;; ++round) {
    bool any = false;
    for (std::size_t u = 0; u < cfg.num_users; ++u) {
      const auto& ev = per_user[u];
      if (round < ev.size()) {
        any = true;
        out.tensor.add(ev[round].user, ev[round].item, ev[round].behavior);
      }
    }
    if (!any) break;
  }
  return out;
}

}  // namespace mixrec
