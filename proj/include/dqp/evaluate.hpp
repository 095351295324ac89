#pragma once

#include <string>
#include <vector>

#include "dqp/unfolded.hpp"

namespace dqp {

/// Optimality gap per instance and iteration; entry 0 is the initialization.
struct GapCurve {
  std::string method;
  std::vector<std::vector<double>> gaps;
  std::vector<double> mean, p10, p90;

  int iterations() const { return mean.empty() ? 0 : static_cast<int>(mean.size()) - 1; }
  double final_mean() const { return mean.empty() ? 0.0 : mean.back(); }
  /// Mean gap after k iterations (the last value when k exceeds the run).
  double mean_at(int k) const;
};

/// Linear-interpolation percentile, q in [0, 1].
double percentile(std::vector<double> values, double q);

/// Fills mean/p10/p90 from gaps (all runs must share a length).
void summarize(GapCurve& c);

/// First k >= 1 with curve[k] <= target, or -1.
int iterations_to(const std::vector<double>& curve, double target);

struct EvalConfig {
  int K = 30;
  /// Single-node problems evaluated with the centralized solver.
  bool centralized = false;
  /// Fixed penalties tried by the sweep baseline (mu = rho for the distributed solver).
  std::vector<double> sweep;
  bool adaptive = true;
  /// Starting penalty of the adaptive baseline.
  double adaptive_rho = 1.0;
  double alpha = 1.6;
  /// Baselines run max(K, horizon) iterations.
  int horizon = 0;
  LinearSolverConfig linsys{LinearSolver::kCholesky, 1e-12, 0};
  double sigma = 1e-6;
  int threads = 1;
};

std::string fixed_method_name(double rho);

GapCurve run_policy(const std::string& name, const Policy& policy, const std::vector<LabeledInstance>& test,
                    const UnfoldedOptions& opt, int threads);
GapCurve run_fixed(const std::vector<LabeledInstance>& test, double rho, int iters, const EvalConfig& cfg);
GapCurve run_adaptive(const std::vector<LabeledInstance>& test, int iters, const EvalConfig& cfg);

struct Speedup {
  std::string learned;
  std::string baseline;
  double target_gap = 0.0;  // baseline mean gap after K iterations
  int baseline_iters = 0;
  int learned_iters = -1;   // -1 when the learned curve never reaches the target
  double ratio = 0.0;       // baseline_iters / learned_iters (0 when unreached)
};

struct Comparison {
  std::vector<GapCurve> curves;  // learned first, then sweep, then adaptive
  std::string best_fixed;
  std::string best_baseline;     // lowest mean gap after K iterations among baselines
  std::vector<Speedup> speedups;
};

struct NamedPolicy {
  std::string name;
  Policy policy;
};

/// Learned curves plus the sweep and adaptive baselines on `test`.
Comparison compare(const std::vector<LabeledInstance>& test, const std::vector<NamedPolicy>& policies,
                   const UnfoldedOptions& opt, const EvalConfig& cfg);

/// CSV with columns method, iter, gap_mean, gap_p10, gap_p90.
std::string curves_csv(const std::vector<GapCurve>& curves);

}  // namespace dqp
