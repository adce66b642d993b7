// mixrec: train, evaluate and inspect the multi-behavior hypergraph recommender.
//
//   mixrec train     [--config f] [--set k=v]... [--<key> v]...
//   mixrec eval      --checkpoint path | --fresh
//   mixrec gradcheck
//   mixrec synth
//   mixrec diag
//   mixrec sweep     --grid key=v1,v2 [--grid ...]
//
// Every schema key is also a flag. Precedence: defaults < --config file <
// MIXREC_* environment < --set < named flags.

#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "mixrec/mixrec.hpp"

extern char** environ;

namespace {

using namespace mixrec;
namespace fs = std::filesystem;

enum Exit : int { kOk = 0, kCheckFailed = 1, kUsage = 2, kDiverged = 3 };

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> flags;
  std::map<std::string, CLI::Option*> flag_opts;
};

void add_common(CLI::App* sub, CommonArgs& args) {
  sub->add_option("--config", args.config_file, "key=value config file")->check(CLI::ExistingFile);
  sub->add_option("--set", args.sets, "override as key=value (repeatable)");
  for (const auto& k : config_schema())
    args.flag_opts[k.name] = sub->add_option("--" + k.name, args.flags[k.name], k.help);
}

void split_assignment(const std::string& kv, std::string& key, std::string& value) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + kv + "'");
  key = kv.substr(0, eq);
  value = kv.substr(eq + 1);
}

RunConfig resolve(const CommonArgs& args) {
  RunConfig cfg;
  if (!args.config_file.empty()) cfg.load_file(args.config_file);
  cfg.apply_env(environ);
  for (const auto& kv : args.sets) {
    std::string k, v;
    split_assignment(kv, k, v);
    cfg.set(k, v);
  }
  for (const auto& [k, opt] : args.flag_opts)
    if (opt->count()) cfg.set(k, args.flags.at(k));
  return cfg;
}

fs::path prepare_run_dir(const RunConfig& cfg) {
  const auto dir = default_run_dir(cfg);
  fs::create_directories(dir);
  write_json(dir / "config.json", cfg.to_json());
  return dir;
}

void print_metrics(const char* label, const Metrics& m) {
  std::cout << label;
  for (const auto& [n, v] : m.hr) std::cout << "  HR@" << n << " " << std::fixed << std::setprecision(4) << v;
  for (const auto& [n, v] : m.ndcg) std::cout << "  NDCG@" << n << " " << v;
  std::cout << std::defaultfloat << "  (" << m.num_eval_users << " users)\n";
}

int cmd_train(const RunConfig& cfg) {
  const auto dir = prepare_run_dir(cfg);
  const auto split = make_split(load_or_synthesize(cfg), cfg);
  save_split(dir / "split", split);
  std::cout << "run dir " << dir.string() << "  config_hash " << cfg.config_hash() << '\n';
  const auto out = run_training(cfg, split, dir, &std::cout);
  print_metrics("mixrec", out.metrics);
  if (out.mf) print_metrics("mf    ", *out.mf);
  if (out.diverged) {
    std::cerr << "training diverged; last good checkpoint kept at " << (dir / "checkpoint.json").string() << '\n';
    return kDiverged;
  }
  return kOk;
}

int cmd_eval(RunConfig cfg, bool fresh) {
  if (cfg.get("checkpoint").empty() && !fresh)
    throw ConfigError("eval: pass --checkpoint <path> or --fresh");
  if (!fresh && !fs::exists(cfg.get("checkpoint")))
    throw DataError("eval: checkpoint " + cfg.get("checkpoint") + " does not exist");
  if (fresh) cfg.set("checkpoint", "");
  cfg.set("epochs", "0");
  const auto dir = prepare_run_dir(cfg);
  const auto split = make_split(load_or_synthesize(cfg), cfg);
  const auto out = run_training(cfg, split, dir, nullptr);
  print_metrics("mixrec", out.metrics);
  if (out.mf) print_metrics("mf    ", *out.mf);
  std::cout << "wrote " << (dir / "metrics.json").string() << '\n';
  return kOk;
}

int cmd_gradcheck(RunConfig cfg) {
  // The canonical tiny model unless the user asked for something else.
  for (const auto& [k, v] : {std::pair{"dim", "8"}, {"hyperedges", "4"}, {"layers", "2"}})
    if (!cfg.is_set(k)) cfg.set(k, v);
  const auto dir = prepare_run_dir(cfg);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  const auto t = cfg.get("data").empty() ? tiny_instance(seed) : load_or_synthesize(cfg);
  BehaviorAdjacency adj(t);
  const auto mc = cfg.model();
  const auto tc = cfg.train();
  SeededRng init(seed, "init"), neg(seed, "negatives"), sampler(seed, "gradcheck");
  const auto params = init_params<double>(dims_of(adj, t.target_behavior()), mc, init);
  const auto batch = sample_pairs(t, tc.pairs_per_user, neg);
  const std::size_t per_table =
      cfg.get_size("gradcheck_entries") ? cfg.get_size("gradcheck_entries") : params.num_scalars();
  const double step = cfg.get_real("gradcheck_step");
  const double tol = cfg.get_real("gradcheck_tol");
  const auto start = std::chrono::steady_clock::now();
  const auto rep = grad_check(params, adj, batch, tc, step, per_table, sampler, SeededRng(seed, "corruption"));
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  nlohmann::json j;
  j["config_hash"] = cfg.config_hash();
  j["seed"] = seed;
  j["step"] = step;
  j["tolerance"] = tol;
  j["max_rel"] = rep.max_rel;
  j["checked"] = rep.checked;
  j["excluded_pairs"] = rep.excluded_pairs;
  j["passed"] = rep.max_rel < tol;
  for (const auto& g : rep.groups) {
    j["groups"].push_back({{"group", g.group}, {"max_rel", g.max_rel}, {"mean_rel", g.mean_rel},
                           {"max_abs_grad", g.max_abs_grad}, {"count", g.count}});
    std::cout << std::left << std::setw(12) << g.group << " max_rel " << std::scientific
              << std::setprecision(3) << g.max_rel << "  mean_rel " << g.mean_rel << "  n " << g.count
              << std::defaultfloat << '\n';
  }
  write_json(dir / "gradcheck.json", j);
  std::cout << "max relative error " << std::scientific << rep.max_rel << " over " << rep.checked
            << " entries (" << rep.excluded_pairs << " pairs excluded at the kink) in " << std::fixed
            << std::setprecision(2) << secs << "s\n";
  return rep.max_rel < tol ? kOk : kCheckFailed;
}

int cmd_synth(const RunConfig& cfg) {
  const auto dir = prepare_run_dir(cfg);
  const auto ds = synth_generate(cfg.synth());
  save_interactions(dir / "interactions.tsv", ds.tensor);
  {
    std::ofstream out(dir / "intents.csv");
    out << "side,id,intent\n";
    for (std::size_t u = 0; u < ds.user_intent.size(); ++u) out << "user," << u << ',' << ds.user_intent[u] << '\n';
    for (std::size_t v = 0; v < ds.item_intent.size(); ++v) out << "item," << v << ',' << ds.item_intent[v] << '\n';
  }
  save_split(dir / "split", make_split(ds.tensor, cfg));
  nlohmann::json j;
  j["config_hash"] = cfg.config_hash();
  j["seed"] = cfg.get_int("synth_seed");
  j["num_users"] = ds.tensor.num_users();
  j["num_items"] = ds.tensor.num_items();
  for (std::size_t k = 0; k < ds.tensor.num_behaviors(); ++k)
    j["interactions_per_behavior"].push_back(ds.tensor.count_behavior(static_cast<Index>(k)));
  write_json(dir / "synth.json", j);
  std::cout << "wrote " << ds.tensor.nnz() << " interactions to " << (dir / "interactions.tsv").string() << '\n';
  return kOk;
}

int cmd_diag(const RunConfig& cfg) {
  const auto dir = prepare_run_dir(cfg);
  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  const std::size_t instances = cfg.get_size("diag_instances");
  const auto suite = decomposition_suite(instances, seed);

  nlohmann::json j;
  j["config_hash"] = cfg.config_hash();
  j["seed"] = seed;
  j["decomposition"] = {{"instances", instances},
                        {"max_gnn_error", suite.max_gnn_error},
                        {"max_hyper_error", suite.max_hyper_error},
                        {"global_support_witnessed", suite.witnessed}};
  for (const auto& c : suite.cases)
    j["decomposition"]["cases"].push_back({{"seed", c.seed}, {"gnn_error", c.gnn_error},
                                           {"hyper_error", c.hyper_error},
                                           {"beyond_support_nonzero", c.beyond_support_nonzero}});
  std::cout << "decompositions: " << instances << " instances, max GNN error " << std::scientific
            << std::setprecision(2) << suite.max_gnn_error << ", max hypergraph error "
            << suite.max_hyper_error << std::defaultfloat << ", global support on " << suite.witnessed
            << "/" << instances << '\n';

  // Counter scaling on the configured data.
  const auto t = load_or_synthesize(cfg);
  BehaviorAdjacency adj(t);
  const auto base = cfg.model();
  const auto c0 = measure_forward(adj, t.target_behavior(), base, seed);
  auto scaled = [&](const char* what, auto mutate, auto pick) {
    auto mc = base;
    mutate(mc);
    const auto c = measure_forward(adj, t.target_behavior(), mc, seed);
    const double ratio = static_cast<double>(pick(c)) / static_cast<double>(pick(c0));
    j["scaling"][what] = ratio;
    std::cout << "doubling " << what << ": MAC ratio " << std::fixed << std::setprecision(4) << ratio
              << std::defaultfloat << '\n';
    return std::abs(ratio - 2.0) <= 0.1;
  };
  bool scaling_ok = true;
  scaling_ok &= scaled("dim", [](ModelConfig& m) { m.dim *= 2; }, [](const OpCounters& c) { return c.graph_macs; });
  scaling_ok &= scaled("hyperedges", [](ModelConfig& m) { m.hyperedges *= 2; },
                       [](const OpCounters& c) { return c.hyper_macs; });
  if (base.layers > 0)
    scaling_ok &= scaled("layers", [](ModelConfig& m) { m.layers *= 2; },
                         [](const OpCounters& c) { return c.graph_macs; });

  RunSizes sizes{t.nnz(), t.num_users(), t.num_items(), t.num_behaviors(), base.dim, base.hyperedges, base.layers};
  for (const auto& e : complexity_counters(c0, sizes).entries) {
    j["complexity"].push_back({{"component", e.component}, {"measured_macs", e.measured},
                               {"formula", e.formula}, {"constant", e.constant}, {"ratio", e.ratio()}});
    std::cout << std::left << std::setw(12) << e.component << " measured/formula " << std::fixed
              << std::setprecision(3) << e.ratio() << std::defaultfloat << '\n';
  }
  const bool ok = suite.max_gnn_error <= 1e-8 && suite.max_hyper_error <= 1e-8 &&
                  suite.witnessed == instances && scaling_ok;
  j["passed"] = ok;
  write_json(dir / "diag.json", j);
  return ok ? kOk : kCheckFailed;
}

int cmd_sweep(const RunConfig& cfg, const std::vector<std::string>& grid) {
  if (grid.empty()) throw ConfigError("sweep: pass at least one --grid key=v1,v2");
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& g : grid) {
    std::string k, v;
    split_assignment(g, k, v);
    (void)key_spec(k);
    std::vector<std::string> values;
    std::size_t start = 0;
    while (true) {
      const auto sep = v.find(',', start);
      values.push_back(v.substr(start, sep == std::string::npos ? std::string::npos : sep - start));
      if (sep == std::string::npos) break;
      start = sep + 1;
    }
    axes.emplace_back(k, values);
  }

  const auto dir = prepare_run_dir(cfg);
  const auto cutoffs = cfg.get_sizes("cutoffs");
  std::ofstream csv(dir / "sweep.csv");
  csv << "cell";
  for (const auto& [k, _] : axes) csv << ',' << k;
  csv << ",config_hash";
  for (auto n : cutoffs) csv << ",hr@" << n;
  for (auto n : cutoffs) csv << ",ndcg@" << n;
  csv << ",mf_hr@" << cutoffs.front() << ",diverged\n";

  std::vector<std::size_t> idx(axes.size(), 0);
  std::size_t cell = 0;
  while (true) {
    RunConfig c = cfg;
    for (std::size_t a = 0; a < axes.size(); ++a) c.set(axes[a].first, axes[a].second[idx[a]]);
    c.set("out", "");
    const auto cell_dir = dir / ("cell_" + std::to_string(cell));
    std::cout << "cell " << cell;
    for (std::size_t a = 0; a < axes.size(); ++a) std::cout << ' ' << axes[a].first << '=' << c.get(axes[a].first);
    std::cout << '\n';
    const auto split = make_split(load_or_synthesize(c), c);
    const auto out = run_training(c, split, cell_dir, nullptr);
    csv << cell;
    for (const auto& [k, _] : axes) csv << ',' << c.get(k);
    csv << ',' << c.config_hash();
    for (auto n : cutoffs) csv << ',' << out.metrics.hr.at(n);
    for (auto n : cutoffs) csv << ',' << out.metrics.ndcg.at(n);
    csv << ',' << (out.mf ? out.mf->hr.at(cutoffs.front()) : 0.0) << ',' << out.diverged << '\n';
    csv.flush();
    print_metrics("  mixrec", out.metrics);

    ++cell;
    std::size_t a = 0;
    for (; a < axes.size(); ++a) {
      if (++idx[a] < axes[a].second.size()) break;
      idx[a] = 0;
    }
    if (a == axes.size()) break;
  }
  std::cout << "wrote " << (dir / "sweep.csv").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MixRec multi-behavior hypergraph recommender"};
  app.require_subcommand(1);

  std::map<std::string, CommonArgs> args;
  auto* train = app.add_subcommand("train", "train, evaluate and write run artifacts");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint (or untrained params with --fresh)");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradients");
  auto* synth = app.add_subcommand("synth", "generate a planted-intent synthetic dataset");
  auto* diag = app.add_subcommand("diag", "score decompositions and operation counters");
  auto* sweep = app.add_subcommand("sweep", "Cartesian grid of training runs");
  for (auto* sub : {train, eval, gradcheck, synth, diag, sweep}) add_common(sub, args[sub->get_name()]);
  bool fresh = false;
  eval->add_flag("--fresh", fresh, "evaluate freshly initialized parameters");
  std::vector<std::string> grid;
  sweep->add_option("--grid", grid, "key=v1,v2 axis (repeatable)");

  CLI11_PARSE(app, argc, argv);

  try {
    for (auto* sub : app.get_subcommands()) {
      const auto cfg = resolve(args.at(sub->get_name()));
      if (sub == train) return cmd_train(cfg);
      if (sub == eval) return cmd_eval(cfg, fresh);
      if (sub == gradcheck) return cmd_gradcheck(cfg);
      if (sub == synth) return cmd_synth(cfg);
      if (sub == diag) return cmd_diag(cfg);
      if (sub == sweep) return cmd_sweep(cfg, grid);
    }
  } catch (const std::exception& e) {
    std::cerr << "mixrec: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
