#pragma once

// Flat key=value run configuration shared by every command. Sources are
// applied in order file < MIXREC_* environment < explicit overrides, and
// every key must be known to the schema.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mixrec/data.hpp"
#include "mixrec/eval.hpp"
#include "mixrec/model.hpp"
#include "mixrec/train.hpp"

namespace mixrec {

enum class KeyType : std::uint8_t { Int, Real, Bool, Text, IntList, RealList, Choice };

struct KeySpec {
  std::string name;
  KeyType type;
  std::string fallback;
  std::vector<std::string> choices;  // Choice keys; also the vocabulary for `ablate`
  bool identity = true;              // participates in config_hash
  bool model_state = true;           // participates in the checkpoint hash
  std::string help;
};

inline const std::vector<KeySpec>& config_schema() {
  using K = KeyType;
  static const std::vector<KeySpec> schema = {
      {"data", K::Text, "", {}, true, true, "interaction TSV (user item behavior)"},
      {"out", K::Text, "", {}, false, false, "run directory (default runs/<timestamp>_<hash>)"},
      {"checkpoint", K::Text, "", {}, false, false, "checkpoint to load"},
      {"seed", K::Int, "42", {}, true, true, "seed for init, sampling, dropout and corruption"},
      {"split_seed", K::Int, "7", {}, true, true, "seed for the leave-one-out split"},
      {"threads", K::Int, "1", {}, false, false, "worker threads"},
      {"precision", K::Choice, "double", {"double", "float"}, true, true, "training scalar type"},
      {"num_users", K::Int, "0", {}, true, true, "user count (0: infer from data)"},
      {"num_items", K::Int, "0", {}, true, true, "item count (0: infer from data)"},
      {"num_behaviors", K::Int, "3", {}, true, true, "behavior count"},
      {"target_behavior", K::Int, "2", {}, true, true, "target behavior id"},
      {"negatives", K::Int, "99", {}, true, true, "evaluation negatives per user"},
      {"cutoffs", K::IntList, "5,10,20", {}, true, false, "HR/NDCG cutoffs"},
      {"dim", K::Int, "32", {}, true, true, "embedding dimension"},
      {"hyperedges", K::Int, "32", {}, true, true, "intent hyperedges per behavior"},
      {"layers", K::Int, "2", {}, true, true, "propagation layers"},
      {"slope", K::Real, "0.5", {}, true, true, "LeakyReLU slope (1 = identity)"},
      {"incidence", K::Choice, "scaled", {"scaled", "softmax"}, true, true, "incidence normalization"},
      {"ablate", K::Text, "", {"no_node_cl", "no_graph_cl", "no_meta", "no_intents"}, true, true,
       "comma list of disabled modules"},
      {"lambda1", K::Real, "1e-4", {}, true, true, "weight decay"},
      {"lambda2", K::Real, "1e-5", {}, true, true, "node-level contrast weight"},
      {"lambda3", K::Real, "1e-5", {}, true, true, "graph-level contrast weight"},
      {"tau", K::Real, "0.5", {}, true, true, "InfoNCE temperature"},
      {"include_positive", K::Bool, "true", {}, true, true, "positive term in InfoNCE denominator"},
      {"node_cl_user", K::Bool, "true", {}, true, true, "node contrast on users"},
      {"node_cl_item", K::Bool, "true", {}, true, true, "node contrast on items"},
      {"graph_cl_user", K::Bool, "true", {}, true, true, "graph contrast on users"},
      {"graph_cl_item", K::Bool, "false", {}, true, true, "graph contrast on items"},
      {"cl_full_denominator", K::Bool, "false", {}, true, true, "InfoNCE over all nodes"},
      {"pairs_per_user", K::Int, "1", {}, true, true, "sampled pairs per user per epoch"},
      {"optimizer", K::Choice, "adam", {"adam", "sgd"}, true, true, "optimizer"},
      {"lr", K::Real, "1e-3", {}, true, true, "learning rate"},
      {"epochs", K::Int, "30", {}, true, false, "training epochs"},
      {"batch_size", K::Int, "256", {}, true, true, "users per batch"},
      {"keep_prob", K::Real, "0.8", {}, true, true, "dropout keep probability"},
      {"mf_baseline", K::Bool, "true", {}, true, false, "also train the MF baseline"},
      {"mf_epochs", K::Int, "30", {}, true, false, "MF epochs"},
      {"mf_lr", K::Real, "0.05", {}, true, false, "MF learning rate"},
      {"mf_reg", K::Real, "1e-2", {}, true, false, "MF L2 weight"},
      {"synth_users", K::Int, "2000", {}, true, true, "synthetic users"},
      {"synth_items", K::Int, "1000", {}, true, true, "synthetic items"},
      {"synth_behaviors", K::Int, "3", {}, true, true, "synthetic behaviors"},
      {"synth_intents", K::Int, "4", {}, true, true, "planted intents"},
      {"synth_funnel", K::RealList, "1,0.35,0.2", {}, true, true, "per-level funnel probabilities"},
      {"synth_mismatch", K::Real, "0.2", {}, true, true, "funnel damping for off-intent items"},
      {"synth_affinity", K::Real, "0.7", {}, true, true, "on-intent candidate share"},
      {"synth_seed", K::Int, "2024", {}, true, true, "synthetic data seed"},
      {"gradcheck_step", K::Real, "1e-5", {}, true, false, "finite-difference step"},
      {"gradcheck_tol", K::Real, "1e-6", {}, true, false, "max relative error"},
      {"gradcheck_entries", K::Int, "0", {}, true, false, "probes per table (0: all)"},
      {"diag_instances", K::Int, "20", {}, true, false, "random instances per decomposition"},
  };
  return schema;
}

inline const KeySpec& key_spec(const std::string& name) {
  for (const auto& k : config_schema())
    if (k.name == name) return k;
  throw ConfigError("config: unknown key '" + name + "'");
}

namespace detail {

inline std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto tok = trim(std::string_view(s).substr(start, comma == std::string::npos ? s.npos : comma - start));
    if (!tok.empty()) out.push_back(tok);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline bool parse_int(const std::string& s, long long& out) {
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

inline bool parse_real(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t used = 0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    return false;
  }
  return used == s.size() && std::isfinite(out);
}

inline bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return out = true, true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return out = false, true;
  return false;
}

// Canonical spelling so that "1e-4" and "0.0001" hash the same.
inline std::string canonical_real(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

}  // namespace detail

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_schema()) values_[k.name] = k.fallback;
  }

  // Validates and canonicalizes `value` for `key`.
  void set(const std::string& key, const std::string& raw) {
    const auto& spec = key_spec(key);
    const std::string value = detail::trim(raw);
    auto bad = [&](const char* what) {
      throw ConfigError("config: key '" + key + "' expects " + what + ", got '" + value + "'");
    };
    switch (spec.type) {
      case KeyType::Int: {
        long long v;
        if (!detail::parse_int(value, v) || v < 0) bad("a non-negative integer");
        values_[key] = std::to_string(v);
        break;
      }
      case KeyType::Real: {
        double v;
        if (!detail::parse_real(value, v)) bad("a real number");
        values_[key] = detail::canonical_real(v);
        break;
      }
      case KeyType::Bool: {
        bool v;
        if (!detail::parse_bool(value, v)) bad("true/false");
        values_[key] = v ? "true" : "false";
        break;
      }
      case KeyType::IntList:
      case KeyType::RealList: {
        std::string canon;
        for (const auto& tok : detail::split_list(value)) {
          if (!canon.empty()) canon += ',';
          if (spec.type == KeyType::IntList) {
            long long v;
            if (!detail::parse_int(tok, v) || v <= 0) bad("a list of positive integers");
            canon += std::to_string(v);
          } else {
            double v;
            if (!detail::parse_real(tok, v)) bad("a list of reals");
            canon += detail::canonical_real(v);
          }
        }
        if (canon.empty()) bad("a non-empty list");
        values_[key] = canon;
        break;
      }
      case KeyType::Choice:
        if (std::find(spec.choices.begin(), spec.choices.end(), value) == spec.choices.end())
          bad("one of its listed choices");
        values_[key] = value;
        break;
      case KeyType::Text:
        if (key == "ablate") {
          std::set<std::string> flags;
          for (const auto& tok : detail::split_list(value)) {
            if (tok == "none") continue;
            if (std::find(spec.choices.begin(), spec.choices.end(), tok) == spec.choices.end())
              bad("ablation names (no_node_cl, no_graph_cl, no_meta, no_intents)");
            flags.insert(tok);
          }
          std::string canon;
          for (const auto& f : flags) canon += (canon.empty() ? "" : ",") + f;
          values_[key] = canon;
        } else {
          values_[key] = value;
        }
        break;
    }
    explicit_.insert(key);
  }

  // `key=value` lines; '#' starts a comment.
  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
      const auto body = detail::trim(line);
      if (body.empty()) continue;
      const auto eq = body.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config: " + path.string() + ":" + std::to_string(lineno) +
                          ": expected key=value");
      try {
        set(detail::trim(std::string_view(body).substr(0, eq)), body.substr(eq + 1));
      } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  // MIXREC_<KEY> overrides; unknown MIXREC_ variables are errors.
  void apply_env(char** envp) {
    if (!envp) return;
    constexpr std::string_view prefix = "MIXREC_";
    for (char** e = envp; *e; ++e) {
      std::string_view entry(*e);
      if (entry.substr(0, prefix.size()) != prefix) continue;
      const auto eq = entry.find('=');
      if (eq == std::string_view::npos) continue;
      std::string key(entry.substr(prefix.size(), eq - prefix.size()));
      std::transform(key.begin(), key.end(), key.begin(),
                     [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
      set(key, std::string(entry.substr(eq + 1)));
    }
  }

  const std::string& get(const std::string& key) const {
    (void)key_spec(key);
    return values_.at(key);
  }
  bool is_set(const std::string& key) const { return explicit_.count(key) > 0; }

  long long get_int(const std::string& key) const {
    long long v = 0;
    detail::parse_int(get(key), v);
    return v;
  }
  std::size_t get_size(const std::string& key) const { return static_cast<std::size_t>(get_int(key)); }
  double get_real(const std::string& key) const {
    double v = 0;
    detail::parse_real(get(key), v);
    return v;
  }
  bool get_bool(const std::string& key) const { return get(key) == "true"; }
  std::vector<double> get_reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& t : detail::split_list(get(key))) out.push_back(std::stod(t));
    return out;
  }
  std::vector<std::size_t> get_sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& t : detail::split_list(get(key))) out.push_back(std::stoull(t));
    return out;
  }

  // FNV-1a over "key=value\n" for the selected keys in name order, so the
  // digest does not depend on the order keys were supplied in.
  std::string hash(bool model_state_only = false) const {
    std::string canon;
    for (const auto& [k, v] : values_) {
      const auto& spec = key_spec(k);
      if (!spec.identity || (model_state_only && !spec.model_state)) continue;
      canon += k + "=" + v + "\n";
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canon)));
    return buf;
  }
  std::string config_hash() const { return hash(false); }
  std::string checkpoint_hash() const { return hash(true); }

  nlohmann::json to_json() const {
    nlohmann::json j;
    for (const auto& [k, v] : values_) j[k] = v;
    j["config_hash"] = config_hash();
    return j;
  }

  // ---- typed views

  ModelConfig model() const {
    ModelConfig m;
    m.dim = get_size("dim");
    m.hyperedges = get_size("hyperedges");
    m.layers = get_size("layers");
    m.slope = get_real("slope");
    m.incidence = get("incidence") == "softmax" ? IncidenceMode::RowSoftmax : IncidenceMode::Scaled;
    for (const auto& f : detail::split_list(get("ablate"))) {
      if (f == "no_node_cl") m.ablation.no_node_cl = true;
      if (f == "no_graph_cl") m.ablation.no_graph_cl = true;
      if (f == "no_meta") m.ablation.no_meta = true;
      if (f == "no_intents") m.ablation.no_intents = true;
    }
    m.validate();
    return m;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.lambda1 = get_real("lambda1");
    t.lambda2 = get_real("lambda2");
    t.lambda3 = get_real("lambda3");
    t.pairs_per_user = get_size("pairs_per_user");
    t.lr = get_real("lr");
    t.epochs = get_size("epochs");
    t.batch_size = get_size("batch_size");
    t.keep_prob = get_real("keep_prob");
    t.contrast.tau = get_real("tau");
    t.contrast.include_positive_in_denominator = get_bool("include_positive");
    t.node_cl_user = get_bool("node_cl_user");
    t.node_cl_item = get_bool("node_cl_item");
    t.graph_cl_user = get_bool("graph_cl_user");
    t.graph_cl_item = get_bool("graph_cl_item");
    t.cl_full_denominator = get_bool("cl_full_denominator");
    t.optimizer = get("optimizer") == "sgd" ? Optimizer::Sgd : Optimizer::Adam;
    t.seed = static_cast<std::uint64_t>(get_int("seed"));
    t.threads = static_cast<unsigned>(std::max<long long>(1, get_int("threads")));
    t.validate();
    return t;
  }

  SynthConfig synth() const {
    SynthConfig s;
    s.num_users = get_size("synth_users");
    s.num_items = get_size("synth_items");
    s.num_behaviors = get_size("synth_behaviors");
    s.intents = get_size("synth_intents");
    s.funnel_probs = get_reals("synth_funnel");
    s.mismatch_factor = get_real("synth_mismatch");
    s.intent_affinity = get_real("synth_affinity");
    s.seed = static_cast<std::uint64_t>(get_int("synth_seed"));
    validate(s);
    return s;
  }

  MfConfig mf() const {
    MfConfig m;
    m.dim = get_size("dim");
    m.epochs = get_size("mf_epochs");
    m.lr = get_real("mf_lr");
    m.reg = get_real("mf_reg");
    m.pairs_per_user = get_size("pairs_per_user");
    m.seed = static_cast<std::uint64_t>(get_int("seed"));
    return m;
  }

  Schema schema() const {
    Schema s;
    s.num_behaviors = get_size("num_behaviors");
    s.target_behavior = get_size("target_behavior");
    s.num_users = get_size("num_users");
    s.num_items = get_size("num_items");
    return s;
  }

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace mixrec
