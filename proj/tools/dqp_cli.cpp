// Batch driver: generate, solve, compare, train, bound.
//
// Exit codes: 0 success, 1 unexpected failure, 2 configuration or usage error,
// 3 numeric failure, 4 integrity violation.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "dqp/dqp.hpp"
#include "dqp/errors.hpp"
#include "dqp/evaluate.hpp"
#include "dqp/generators.hpp"
#include "dqp/io.hpp"
#include "dqp/osqp.hpp"
#include "dqp/pac_bayes.hpp"
#include "dqp/parallel.hpp"
#include "dqp/train.hpp"

namespace fs = std::filesystem;
using dqp::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--seed", c.seed, "Base seed (overrides the config)");
  cmd->add_option("--threads", c.threads, "Worker threads; 1 is bit-reproducible, 0 uses every core")
      ->check(CLI::NonNegativeNumber);
  cmd->add_option("--out", c.out, "Output path");
}

/// Relative paths resolve against $DQP_WORKSPACE (default: the working directory).
std::string resolve(const std::string& path) {
  if (path.empty()) return path;
  const fs::path p(path);
  if (p.is_absolute()) return path;
  const char* ws = std::getenv("DQP_WORKSPACE");
  if (!ws || !*ws) return path;
  return (fs::path(ws) / p).string();
}

json load_config(const Common& c) {
  if (c.config.empty()) return json::object();
  json j;
  try {
    j = json::parse(dqp::read_text(resolve(c.config)));
  } catch (const json::exception& e) {
    throw dqp::ConfigError("config '" + c.config + "': " + e.what());
  }
  if (!j.is_object()) throw dqp::ConfigError("config '" + c.config + "' must be a JSON object");
  return j;
}

template <class T>
T get_or(const json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw dqp::ConfigError(std::string("config field '") + key + "': " + e.what());
  }
}

std::string require_string(const json& j, const char* key, const char* cmd) {
  if (!j.contains(key)) throw dqp::ConfigError(std::string(cmd) + ": missing '" + key + "'");
  return get_or<std::string>(j, key, "");
}

json stamp(json j, const json& cfg) {
  j["schema_version"] = dqp::kSchemaVersion;
  j["config_hash"] = dqp::config_hash(cfg);
  return j;
}

void emit(const json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (!out.empty()) dqp::write_text(resolve(out), text);
  std::cout << text;
}

std::string sibling(const std::string& path, const std::string& ext) {
  fs::path p(path);
  p.replace_extension(ext);
  return p.string();
}

dqp::LinearSolverConfig linsys_from(const json& cfg, dqp::LinearSolver fallback) {
  dqp::LinearSolverConfig ls;
  ls.kind = dqp::linear_solver_from_string(get_or<std::string>(cfg, "linsys", dqp::to_string(fallback)));
  ls.cg_tol = get_or(cfg, "cg_tol", 1e-12);
  ls.cg_max_iter = get_or(cfg, "cg_max_iter", 0);
  return ls;
}

std::vector<dqp::LabeledInstance> load_nonempty(const std::string& path, const char* what) {
  auto data = dqp::read_dataset(resolve(path));
  if (data.empty()) throw dqp::ConfigError(std::string(what) + " dataset '" + path + "' is empty");
  return data;
}

bool single_node_family(const std::vector<dqp::LabeledInstance>& data) {
  return !dqp::is_distributed_kind(data.front().kind) && data.front().problem.num_nodes() == 1;
}

// ---- generate -------------------------------------------------------------

struct GenerateFlags {
  std::optional<std::string> kind;
  std::optional<int> n, m, p, H, N, T, grid, n_i, m_ij;
};

int cmd_generate(const Common& c, const GenerateFlags& f) {
  json cfg = load_config(c);
  if (f.kind) cfg["kind"] = *f.kind;
  if (f.n) cfg["n"] = *f.n;
  if (f.m) cfg["m"] = *f.m;
  if (f.p) cfg["p"] = *f.p;
  if (f.N) cfg["N"] = *f.N;
  if (f.T) cfg["T"] = *f.T;
  if (f.grid) cfg["grid_side"] = *f.grid;
  if (f.n_i) cfg["n_i"] = *f.n_i;
  if (f.m_ij) cfg["m_ij"] = *f.m_ij;
  if (f.H) cfg["H"] = *f.H;
  if (c.seed) cfg["seed"] = *c.seed;
  const int H = get_or(cfg, "H", 0);
  if (H < 1) throw dqp::ConfigError("generate: H must be at least 1");
  json spec_json = cfg;
  spec_json.erase("H");
  const dqp::GenSpec spec = dqp::genspec_from_json(spec_json);
  spec.check();
  if (c.out.empty()) throw dqp::ConfigError("generate: --out is required");

  const json effective = {{"command", "generate"}, {"spec", dqp::genspec_to_json(spec)}, {"H", H}};
  const std::string hash = dqp::config_hash(effective);
  const dqp::Dataset ds = dqp::build_dataset(spec, H, dqp::resolve_threads(c.threads));
  dqp::write_dataset(resolve(c.out), ds.instances, hash);
  json summary = {{"command", "generate"},
                  {"out", c.out},
                  {"count", ds.instances.size()},
                  {"rejected", ds.rejected},
                  {"mean_label_iters", static_cast<double>(ds.label_iters) / H},
                  {"fingerprint", dqp::file_fingerprint(resolve(c.out))}};
  emit(stamp(summary, effective), "");
  return 0;
}

// ---- solve ----------------------------------------------------------------

int cmd_solve(const Common& c) {
  json cfg = load_config(c);
  dqp::reject_unknown_keys(cfg,
                           {"dataset", "solver", "rho", "mu", "sigma", "alpha", "adaptive", "max_iter", "gap_tol",
                            "linsys", "cg_tol", "cg_max_iter", "instance"},
                           "solve config");
  const auto data = load_nonempty(require_string(cfg, "dataset", "solve"), "solve");
  const bool single = single_node_family(data);
  const std::string solver = get_or<std::string>(cfg, "solver", single ? "osqp" : "dqp");
  if (solver != "osqp" && solver != "dqp") throw dqp::ConfigError("solve: solver must be 'osqp' or 'dqp'");
  const double rho = get_or(cfg, "rho", dqp::penalty_median(data.front().kind));
  const int instance = get_or(cfg, "instance", -1);
  if (instance >= static_cast<int>(data.size())) throw dqp::ConfigError("solve: instance index out of range");

  std::ostringstream csv;
  csv << "instance,iter,gap,prim_res,dual_res,rho,mu\n";
  csv.precision(17);
  json finals = json::array();
  for (int i = 0; i < static_cast<int>(data.size()); ++i) {
    if (instance >= 0 && i != instance) continue;
    const auto& inst = data[static_cast<std::size_t>(i)];
    std::vector<dqp::TraceRow> trace;
    dqp::Vec w;
    if (solver == "osqp") {
      const dqp::QuadProgram p = dqp::centralize(inst.problem);
      dqp::OsqpSettings s;
      s.rho = rho;
      s.sigma = get_or(cfg, "sigma", 1e-6);
      s.alpha = get_or(cfg, "alpha", 1.6);
      s.mode = get_or(cfg, "adaptive", false) ? dqp::PenaltyMode::kAdaptive : dqp::PenaltyMode::kFixed;
      s.max_iter = get_or(cfg, "max_iter", 1000);
      s.gap_tol = get_or(cfg, "gap_tol", 0.0);
      s.linsys = linsys_from(cfg, dqp::LinearSolver::kDirect);
      auto r = dqp::osqp_solve(p, s, &inst.w_star);
      trace = std::move(r.trace);
      w = r.x;
    } else {
      dqp::DqpSettings s;
      s.rho = rho;
      s.mu = get_or(cfg, "mu", rho);
      s.alpha = get_or(cfg, "alpha", 1.6);
      s.mode = get_or(cfg, "adaptive", false) ? dqp::PenaltyMode::kAdaptive : dqp::PenaltyMode::kFixed;
      s.max_iter = get_or(cfg, "max_iter", 1000);
      s.gap_tol = get_or(cfg, "gap_tol", 0.0);
      s.linsys = linsys_from(cfg, dqp::LinearSolver::kDirect);
      s.threads = dqp::resolve_threads(c.threads);
      auto r = dqp::dqp_solve(inst.problem, s, &inst.w_star);
      trace = std::move(r.trace);
      w = r.w;
    }
    for (const auto& row : trace)
      csv << i << ',' << row.iter << ',' << row.gap << ',' << row.prim_res << ',' << row.dual_res << ','
          << row.rho << ',' << row.mu << '\n';
    finals.push_back({{"instance", i},
                      {"seed", inst.seed},
                      {"iters", trace.size()},
                      {"final_gap", dqp::optimality_gap(w, inst.w_star)}});
  }
  json effective = cfg;
  effective["command"] = "solve";
  effective["solver"] = solver;
  effective["rho"] = rho;
  std::string csv_path;
  if (!c.out.empty()) {
    csv_path = c.out;
    dqp::write_text(resolve(csv_path), "# schema_version=" + std::to_string(dqp::kSchemaVersion) +
                                           " config_hash=" + dqp::config_hash(effective) + "\n" + csv.str());
  }
  emit(stamp({{"command", "solve"}, {"solver", solver}, {"trace", csv_path}, {"results", finals}}, effective), "");
  return 0;
}

// ---- checkpoints ----------------------------------------------------------

struct Checkpoint {
  dqp::Policy policy;
  dqp::UnfoldedOptions unfolded;
  std::string dataset;
  std::string dataset_fingerprint;
  std::vector<std::uint64_t> train_seeds;
  std::optional<dqp::Vec> log_std;
};

json unfolded_to_json(const dqp::UnfoldedOptions& o) {
  return {{"linsys", dqp::to_string(o.linsys.kind)},
          {"cg_tol", o.linsys.cg_tol},
          {"cg_max_iter", o.linsys.cg_max_iter},
          {"centralized", o.centralized},
          {"fixed_mu", o.fixed_mu}};
}

dqp::UnfoldedOptions unfolded_from_json(const json& j) {
  dqp::UnfoldedOptions o;
  o.linsys.kind = dqp::linear_solver_from_string(j.at("linsys").get<std::string>());
  o.linsys.cg_tol = j.at("cg_tol").get<double>();
  o.linsys.cg_max_iter = j.at("cg_max_iter").get<int>();
  o.centralized = j.at("centralized").get<bool>();
  o.fixed_mu = j.at("fixed_mu").get<double>();
  return o;
}

Checkpoint load_checkpoint(const std::string& path) {
  json j;
  try {
    j = json::parse(dqp::read_text(resolve(path)));
    if (j.at("schema_version").get<int>() != dqp::kSchemaVersion)
      throw dqp::ConfigError("checkpoint '" + path + "': unsupported schema_version");
    Checkpoint ck;
    ck.policy = dqp::policy_from_json(j.at("policy"));
    ck.unfolded = unfolded_from_json(j.at("unfolded"));
    ck.dataset = j.at("dataset").get<std::string>();
    ck.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    ck.train_seeds = j.at("train_seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("log_std")) ck.log_std = dqp::vec_from_json(j.at("log_std"));
    return ck;
  } catch (const json::exception& e) {
    throw dqp::ConfigError("checkpoint '" + path + "': " + e.what());
  }
}

/// Refuses a checkpoint whose training dataset no longer matches its fingerprint.
void verify_fingerprint(const Checkpoint& ck, const std::string& what) {
  const std::string path = resolve(ck.dataset);
  if (!fs::exists(path)) throw dqp::IntegrityError(what + ": training dataset '" + ck.dataset + "' is missing");
  const std::string now = dqp::file_fingerprint(path);
  if (now != ck.dataset_fingerprint)
    throw dqp::IntegrityError(what + ": dataset '" + ck.dataset + "' fingerprint " + now + " differs from recorded " +
                              ck.dataset_fingerprint);
}

std::vector<std::uint64_t> seeds_of(const std::vector<dqp::LabeledInstance>& data) {
  std::vector<std::uint64_t> s;
  for (const auto& inst : data) s.push_back(inst.seed);
  return s;
}

// ---- train ----------------------------------------------------------------

int cmd_train(const Common& c, std::optional<int> epochs_flag) {
  json cfg = load_config(c);
  dqp::reject_unknown_keys(cfg,
                           {"dataset", "K", "sharing", "closed_loop", "learn_mu", "epochs", "batch", "lr",
                            "val_fraction", "rho", "alpha", "fixed_mu", "linsys", "cg_tol", "cg_max_iter",
                            "centralized", "init_seed"},
                           "train config");
  if (epochs_flag) cfg["epochs"] = *epochs_flag;
  const std::string dataset = require_string(cfg, "dataset", "train");
  const auto data = load_nonempty(dataset, "train");
  if (c.out.empty()) throw dqp::ConfigError("train: --out is required");

  const bool centralized = get_or(cfg, "centralized", single_node_family(data));
  const int nodes = data.front().problem.num_nodes();
  const auto sharing = dqp::sharing_from_string(get_or<std::string>(cfg, "sharing", "shared"));
  const bool learn_mu = get_or(cfg, "learn_mu", !centralized);
  dqp::PolicyLayout layout{get_or(cfg, "K", 30), nodes, sharing, get_or(cfg, "closed_loop", true), learn_mu};
  const double median = dqp::penalty_median(data.front().kind);
  const double rho = get_or(cfg, "rho", median);
  const std::uint64_t seed = c.seed.value_or(0);
  const dqp::Policy init =
      dqp::init_policy(layout, dqp::PolicyInit{rho, rho, get_or(cfg, "alpha", 1.6), get_or<std::uint64_t>(cfg, "init_seed", seed)});

  dqp::TrainConfig tc;
  tc.epochs = get_or(cfg, "epochs", 10);
  if (tc.epochs < 0) throw dqp::ConfigError("train: epochs must be nonnegative");
  tc.batch = get_or(cfg, "batch", 50);
  tc.adam.lr = get_or(cfg, "lr", 1e-3);
  tc.val_fraction = get_or(cfg, "val_fraction", 0.1);
  tc.seed = seed;
  tc.threads = dqp::resolve_threads(c.threads);
  tc.unfolded.centralized = centralized;
  tc.unfolded.fixed_mu = get_or(cfg, "fixed_mu", centralized ? 1e-6 : rho);
  tc.unfolded.linsys = linsys_from(cfg, dqp::LinearSolver::kCholesky);
  dqp::check_compatible(data.front().problem, init, tc.unfolded);

  const dqp::TrainResult r = dqp::train(data, tc, init, [](const dqp::EpochLog& e) {
    std::cerr << "epoch " << e.epoch << " train " << e.train_loss << " val " << e.val_loss << "\n";
  });

  json log = json::array();
  for (const auto& e : r.log) log.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"val_loss", e.val_loss}});
  std::vector<std::uint64_t> train_seeds;
  for (int i : r.train_indices) train_seeds.push_back(data[static_cast<std::size_t>(i)].seed);
  for (int i : r.val_indices) train_seeds.push_back(data[static_cast<std::size_t>(i)].seed);
  json effective = cfg;
  effective["command"] = "train";
  effective["seed"] = seed;
  const json policy_json = dqp::policy_to_json(r.policy);
  json ck = {{"command", "train"},
             {"config", cfg},
             {"dataset", dataset},
             {"dataset_fingerprint", dqp::file_fingerprint(resolve(dataset))},
             {"train_seeds", train_seeds},
             {"split", {{"train", r.train_indices}, {"val", r.val_indices}}},
             {"best_epoch", r.best_epoch},
             {"best_loss", r.best_loss},
             {"log", log},
             {"unfolded", unfolded_to_json(tc.unfolded)},
             {"initial_policy_hash", dqp::config_hash(dqp::policy_to_json(init))},
             {"policy_hash", dqp::config_hash(policy_json)},
             {"policy", policy_json}};
  dqp::write_text(resolve(c.out), stamp(ck, effective).dump() + "\n");
  emit(stamp({{"command", "train"}, {"out", c.out}, {"best_epoch", r.best_epoch}, {"best_loss", r.best_loss}}, effective),
       "");
  return 0;
}

// ---- compare --------------------------------------------------------------

int cmd_compare(const Common& c) {
  json cfg = load_config(c);
  dqp::reject_unknown_keys(cfg,
                           {"test", "policies", "K", "sweep", "adaptive", "adaptive_rho", "alpha", "horizon", "sigma",
                            "linsys", "cg_tol", "cg_max_iter", "centralized"},
                           "compare config");
  const auto test = load_nonempty(require_string(cfg, "test", "compare"), "test");
  if (c.out.empty()) throw dqp::ConfigError("compare: --out is required");

  std::vector<dqp::NamedPolicy> policies;
  std::optional<dqp::UnfoldedOptions> opt;
  for (const auto& entry : get_or(cfg, "policies", json::array())) {
    const std::string path = entry.at("path").get<std::string>();
    const Checkpoint ck = load_checkpoint(path);
    for (const auto& inst : test) {
      try {
        dqp::check_compatible(inst.problem, ck.policy, ck.unfolded);
      } catch (const dqp::ConfigError& e) {
        throw dqp::ConfigError("compare: checkpoint '" + path + "' does not fit the test set: " + e.what());
      }
    }
    if (opt && (opt->centralized != ck.unfolded.centralized || opt->linsys.kind != ck.unfolded.linsys.kind))
      throw dqp::ConfigError("compare: checkpoints disagree on solver options");
    opt = ck.unfolded;
    policies.push_back({entry.value("name", path), ck.policy});
  }

  dqp::EvalConfig ec;
  ec.K = get_or(cfg, "K", policies.empty() ? 30 : policies.front().policy.layout.K);
  ec.centralized = get_or(cfg, "centralized", single_node_family(test));
  ec.sweep = get_or(cfg, "sweep", dqp::penalty_sweep(test.front().kind));
  ec.adaptive = get_or(cfg, "adaptive", true);
  ec.adaptive_rho = get_or(cfg, "adaptive_rho", dqp::penalty_median(test.front().kind));
  ec.alpha = get_or(cfg, "alpha", 1.6);
  ec.horizon = get_or(cfg, "horizon", 0);
  ec.sigma = get_or(cfg, "sigma", 1e-6);
  ec.linsys = linsys_from(cfg, dqp::LinearSolver::kCholesky);
  ec.threads = dqp::resolve_threads(c.threads);
  for (const auto& np : policies)
    if (np.policy.layout.K != ec.K) throw dqp::ConfigError("compare: policy '" + np.name + "' has a different K");

  const dqp::Comparison cmp = dqp::compare(test, policies, opt.value_or(dqp::UnfoldedOptions{}), ec);
  json effective = cfg;
  effective["command"] = "compare";
  effective["K"] = ec.K;
  effective["sweep"] = ec.sweep;
  const std::string hash = dqp::config_hash(effective);
  dqp::write_text(resolve(c.out), "# schema_version=" + std::to_string(dqp::kSchemaVersion) + " config_hash=" + hash +
                                      "\n" + dqp::curves_csv(cmp.curves));

  json methods = json::array();
  for (const auto& curve : cmp.curves)
    methods.push_back({{"method", curve.method}, {"final_gap_mean", curve.mean_at(ec.K)}});
  json speedups = json::array();
  for (const auto& s : cmp.speedups)
    speedups.push_back({{"learned", s.learned},
                        {"baseline", s.baseline},
                        {"target_gap", s.target_gap},
                        {"baseline_iters", s.baseline_iters},
                        {"learned_iters", s.learned_iters},
                        {"ratio", s.ratio}});
  json summary = {{"command", "compare"},
                  {"curves", c.out},
                  {"instances", test.size()},
                  {"K", ec.K},
                  {"sweep", ec.sweep},
                  {"best_fixed", cmp.best_fixed},
                  {"best_baseline", cmp.best_baseline},
                  {"methods", methods},
                  {"speedups", speedups}};
  emit(stamp(summary, effective), sibling(c.out, ".json"));
  return 0;
}

// ---- bound ----------------------------------------------------------------

int cmd_bound(const Common& c) {
  json cfg = load_config(c);
  dqp::reject_unknown_keys(cfg,
                           {"prior", "data", "test", "M", "delta", "eps", "epochs", "batch", "lr", "log_std",
                            "posterior_out"},
                           "bound config");
  const std::string prior_path = require_string(cfg, "prior", "bound");
  const Checkpoint ck = load_checkpoint(prior_path);
  verify_fingerprint(ck, "bound");
  const auto data = load_nonempty(require_string(cfg, "data", "bound"), "bound");
  const auto data_seeds = seeds_of(data);
  try {
    dqp::check_disjoint(ck.train_seeds, data_seeds);
  } catch (const dqp::IntegrityError& e) {
    throw dqp::IntegrityError(std::string("bound: prior training split overlaps the bound dataset: ") + e.what());
  }
  std::vector<dqp::LabeledInstance> test;
  if (cfg.contains("test")) {
    test = load_nonempty(cfg.at("test").get<std::string>(), "test");
    const auto test_seeds = seeds_of(test);
    try {
      dqp::check_disjoint(ck.train_seeds, test_seeds);
      dqp::check_disjoint(data_seeds, test_seeds);
    } catch (const dqp::IntegrityError& e) {
      throw dqp::IntegrityError(std::string("bound: test set overlaps a training split: ") + e.what());
    }
  }

  const std::uint64_t seed = c.seed.value_or(0);
  const int threads = dqp::resolve_threads(c.threads);
  const dqp::GaussianPolicy prior = dqp::make_gaussian(ck.policy, get_or(cfg, "log_std", dqp::kDefaultLogStd));
  dqp::PosteriorConfig pc;
  pc.epochs = get_or(cfg, "epochs", 10);
  pc.batch = get_or(cfg, "batch", 50);
  pc.adam.lr = get_or(cfg, "lr", 1e-3);
  pc.delta = get_or(cfg, "delta", 0.009);
  pc.seed = seed;
  pc.threads = threads;
  pc.unfolded = ck.unfolded;
  const dqp::GaussianPolicy post = dqp::train_posterior(prior, ck.train_seeds, data, pc);

  dqp::BoundReport rep;
  rep.H = static_cast<int>(data.size());
  rep.M = get_or(cfg, "M", 500);
  rep.delta = pc.delta;
  rep.eps = get_or(cfg, "eps", 0.001);
  const dqp::QHat qh = dqp::estimate_q_hat(post, data, rep.M, ck.unfolded, seed ^ 0x626f756e64ULL, threads);
  rep.q_hat = qh.value;
  rep.excluded = qh.excluded;
  rep.q_bar = dqp::sample_convergence_bound(rep.q_hat, rep.M, rep.eps);
  rep.kl_term = dqp::kl_gaussian(post, prior);
  rep.final_bound = dqp::pac_bound(rep.q_bar, rep.kl_term, rep.H, rep.delta);
  if (!test.empty()) rep.test_progress = dqp::mean_progress(post.mean, test, ck.unfolded, threads).value;

  json effective = cfg;
  effective["command"] = "bound";
  effective["seed"] = seed;
  if (cfg.contains("posterior_out")) {
    json pj = {{"command", "bound"},
               {"policy", dqp::policy_to_json(post.mean)},
               {"log_std", dqp::vec_to_json(post.log_std)},
               {"unfolded", unfolded_to_json(ck.unfolded)},
               {"dataset", ck.dataset},
               {"dataset_fingerprint", ck.dataset_fingerprint},
               {"train_seeds", ck.train_seeds}};
    dqp::write_text(resolve(cfg.at("posterior_out").get<std::string>()), stamp(pj, effective).dump() + "\n");
  }
  json report = dqp::bound_report_to_json(rep);
  report["command"] = "bound";
  emit(stamp(report, effective), c.out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed QP solver, learned penalty policies and generalization bounds"};
  app.require_subcommand(1);
  Common common;
  GenerateFlags gen;
  std::optional<int> epochs;

  auto* g = app.add_subcommand("generate", "Generate and label a dataset");
  add_common(g, common);
  g->add_option("--kind", gen.kind, "Problem family");
  g->add_option("--n", gen.n);
  g->add_option("--m", gen.m);
  g->add_option("--p", gen.p);
  g->add_option("--H", gen.H, "Number of instances");
  g->add_option("--N", gen.N, "Agents (optimal control, LASSO)");
  g->add_option("--T", gen.T, "Horizon");
  g->add_option("--grid", gen.grid, "Grid side (networked QPs)");
  g->add_option("--n-i", gen.n_i);
  g->add_option("--m-ij", gen.m_ij);

  auto* s = app.add_subcommand("solve", "Run a solver over a dataset and write traces");
  add_common(s, common);
  auto* cmp = app.add_subcommand("compare", "Learned policies against fixed and adaptive baselines");
  add_common(cmp, common);
  auto* t = app.add_subcommand("train", "Train an unrolled policy");
  add_common(t, common);
  t->add_option("--epochs", epochs, "Overrides the config");
  auto* b = app.add_subcommand("bound", "Train a posterior and report its generalization bound");
  add_common(b, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (g->parsed()) return cmd_generate(common, gen);
    if (s->parsed()) return cmd_solve(common);
    if (cmp->parsed()) return cmd_compare(common);
    if (t->parsed()) return cmd_train(common, epochs);
    if (b->parsed()) return cmd_bound(common);
  } catch (const dqp::IntegrityError& e) {
    std::cerr << "integrity error: " << e.what() << "\n";
    return 4;
  } catch (const dqp::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const dqp::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dqp::DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
