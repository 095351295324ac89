#include "dqp/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "dqp/parallel.hpp"

namespace dqp {

double GapCurve::mean_at(int k) const {
  if (mean.empty()) return 0.0;
  return mean[static_cast<std::size_t>(std::clamp(k, 0, iterations()))];
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) throw ConfigError("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void summarize(GapCurve& c) {
  c.mean.clear();
  c.p10.clear();
  c.p90.clear();
  if (c.gaps.empty()) return;
  const std::size_t len = c.gaps.front().size();
  for (const auto& g : c.gaps)
    if (g.size() != len) throw DimensionError("summarize: runs of different length");
  std::vector<double> col(c.gaps.size());
  for (std::size_t k = 0; k < len; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < c.gaps.size(); ++i) {
      col[i] = c.gaps[i][k];
      sum += col[i];
    }
    c.mean.push_back(sum / static_cast<double>(col.size()));
    c.p10.push_back(percentile(col, 0.1));
    c.p90.push_back(percentile(col, 0.9));
  }
}

int iterations_to(const std::vector<double>& curve, double target) {
  for (std::size_t k = 1; k < curve.size(); ++k)
    if (curve[k] <= target) return static_cast<int>(k);
  return -1;
}

std::string fixed_method_name(double rho) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "fixed_rho=%g", rho);
  return buf;
}

namespace {

std::vector<double> with_initial_gap(const LabeledInstance& inst, const std::vector<double>& gaps) {
  std::vector<double> out;
  out.reserve(gaps.size() + 1);
  out.push_back(optimality_gap(Vec::Zero(inst.w_star.size()), inst.w_star));
  out.insert(out.end(), gaps.begin(), gaps.end());
  return out;
}

std::vector<double> trace_gaps(const std::vector<TraceRow>& trace) {
  std::vector<double> g;
  g.reserve(trace.size());
  for (const auto& r : trace) g.push_back(r.gap);
  return g;
}

void require_test(const std::vector<LabeledInstance>& test) {
  if (test.empty()) throw ConfigError("evaluation needs a nonempty test set");
}

}  // namespace

GapCurve run_policy(const std::string& name, const Policy& policy, const std::vector<LabeledInstance>& test,
                    const UnfoldedOptions& opt, int threads) {
  require_test(test);
  GapCurve c;
  c.method = name;
  c.gaps.resize(test.size());
  parallel_for(static_cast<int>(test.size()), resolve_threads(threads), [&](int i) {
    const auto& inst = test[static_cast<std::size_t>(i)];
    UnrolledResult r = forward_unrolled(inst.problem, policy, opt, false);
    std::vector<double> g;
    for (const auto& w : r.w) g.push_back(optimality_gap(w, inst.w_star));
    c.gaps[static_cast<std::size_t>(i)] = with_initial_gap(inst, g);
  });
  summarize(c);
  return c;
}

namespace {

GapCurve run_baseline(const std::string& name, const std::vector<LabeledInstance>& test, double rho, bool adaptive,
                      int iters, const EvalConfig& cfg) {
  require_test(test);
  GapCurve c;
  c.method = name;
  c.gaps.resize(test.size());
  parallel_for(static_cast<int>(test.size()), resolve_threads(cfg.threads), [&](int i) {
    const auto& inst = test[static_cast<std::size_t>(i)];
    std::vector<double> g;
    if (cfg.centralized) {
      if (inst.problem.num_nodes() != 1) throw ConfigError("centralized evaluation needs single-node instances");
      OsqpSettings s;
      s.rho = rho;
      s.sigma = cfg.sigma;
      s.alpha = cfg.alpha;
      s.mode = adaptive ? PenaltyMode::kAdaptive : PenaltyMode::kFixed;
      s.linsys = cfg.linsys;
      s.max_iter = iters;
      const QuadProgram p = centralize(inst.problem);
      g = trace_gaps(osqp_solve(p, s, &inst.w_star).trace);
    } else {
      DqpSettings s;
      s.rho = rho;
      s.mu = rho;
      s.alpha = cfg.alpha;
      s.mode = adaptive ? PenaltyMode::kAdaptive : PenaltyMode::kFixed;
      s.linsys = cfg.linsys;
      s.max_iter = iters;
      g = trace_gaps(dqp_solve(inst.problem, s, &inst.w_star).trace);
    }
    c.gaps[static_cast<std::size_t>(i)] = with_initial_gap(inst, g);
  });
  summarize(c);
  return c;
}

}  // namespace

GapCurve run_fixed(const std::vector<LabeledInstance>& test, double rho, int iters, const EvalConfig& cfg) {
  return run_baseline(fixed_method_name(rho), test, rho, false, iters, cfg);
}

GapCurve run_adaptive(const std::vector<LabeledInstance>& test, int iters, const EvalConfig& cfg) {
  return run_baseline("adaptive", test, cfg.adaptive_rho, true, iters, cfg);
}

Comparison compare(const std::vector<LabeledInstance>& test, const std::vector<NamedPolicy>& policies,
                   const UnfoldedOptions& opt, const EvalConfig& cfg) {
  require_test(test);
  if (cfg.K < 1) throw ConfigError("compare: K must be >= 1");
  Comparison out;
  for (const auto& np : policies) {
    if (np.policy.layout.K != cfg.K) throw ConfigError("policy '" + np.name + "' has a different depth than K");
    out.curves.push_back(run_policy(np.name, np.policy, test, opt, cfg.threads));
  }
  const int iters = std::max(cfg.K, cfg.horizon);
  double best = std::numeric_limits<double>::infinity(), best_fixed = best;
  for (double rho : cfg.sweep) {
    out.curves.push_back(run_fixed(test, rho, iters, cfg));
    const double f = out.curves.back().mean_at(cfg.K);
    if (f < best_fixed) {
      best_fixed = f;
      out.best_fixed = out.curves.back().method;
    }
    if (f < best) {
      best = f;
      out.best_baseline = out.curves.back().method;
    }
  }
  if (cfg.adaptive) {
    out.curves.push_back(run_adaptive(test, iters, cfg));
    const double f = out.curves.back().mean_at(cfg.K);
    if (f < best) {
      best = f;
      out.best_baseline = "adaptive";
    }
  }
  if (!out.best_baseline.empty()) {
    for (std::size_t j = 0; j < policies.size(); ++j) {
      Speedup s;
      s.learned = policies[j].name;
      s.baseline = out.best_baseline;
      s.target_gap = best;
      s.baseline_iters = cfg.K;
      s.learned_iters = iterations_to(out.curves[j].mean, best);
      s.ratio = s.learned_iters > 0 ? static_cast<double>(cfg.K) / s.learned_iters : 0.0;
      out.speedups.push_back(s);
    }
  }
  return out;
}

std::string curves_csv(const std::vector<GapCurve>& curves) {
  std::ostringstream os;
  os.precision(17);
  os << "method,iter,gap_mean,gap_p10,gap_p90\n";
  for (const auto& c : curves)
    for (std::size_t k = 0; k < c.mean.size(); ++k)
      os << c.method << ',' << k << ',' << c.mean[k] << ',' << c.p10[k] << ',' << c.p90[k] << '\n';
  return os.str();
}

}  // namespace dqp
