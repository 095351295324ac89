#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dqp/qp_model.hpp"

namespace dqp {

/// kDirect: LDL^T of the quasi-definite KKT matrix.
/// kIndirect: conjugate gradient on the reduced positive-definite system.
/// kCholesky: Cholesky of the reduced positive-definite system.
enum class LinearSolver { kDirect, kIndirect, kCholesky };

const char* to_string(LinearSolver s);
LinearSolver linear_solver_from_string(const std::string& s);

struct LinearSolverConfig {
  LinearSolver kind = LinearSolver::kDirect;
  double cg_tol = 1e-10;
  int cg_max_iter = 0;  // 0 selects 10 * dim
};

enum class PenaltyMode { kFixed, kAdaptive };

/// Residual-balancing penalty rule.
struct AdaptiveRule {
  double tau = 2.0;
  double ratio = 10.0;
};

/// tau * rho if prim > ratio * dual, rho / tau if dual > ratio * prim.
double adapt_rho(double prim_res, double dual_res, double rho, const AdaptiveRule& rule = {});

/// Fixed-penalty grids for the baselines, by problem family.
const std::vector<double>& penalty_sweep(const std::string& kind);
/// Middle entry of penalty_sweep(kind).
double penalty_median(const std::string& kind);

struct OsqpSettings {
  double rho = 1.0;
  double sigma = 1e-6;
  double alpha = 1.6;
  PenaltyMode mode = PenaltyMode::kFixed;
  AdaptiveRule adapt;
  LinearSolverConfig linsys;
  int max_iter = 4000;
  /// Stop once the gap against a supplied solution drops to this (0 disables).
  double gap_tol = 0.0;
  /// Stop once both residuals drop to these (0 disables).
  double eps_prim = 0.0;
  double eps_dual = 0.0;
};

/// x: linear-system iterate, t: relaxed copy (reported solution).
struct OsqpState {
  Vec x, t, z, s, nu, lambda;
  double rho = 1.0;
  int k = 0;
  long long cg_iters = 0;
};

OsqpState osqp_init(const QuadProgram& p, double rho);

struct TraceRow {
  int iter = 0;
  double gap = 0.0;
  double prim_res = 0.0;
  double dual_res = 0.0;
  double rho = 0.0;
  double mu = 0.0;
};

struct Residuals {
  double prim = 0.0;
  double dual = 0.0;
};

/// prim = ||A x - s||, dual = ||Q x + q + A^T lambda||.
Residuals residuals(const QuadProgram& p, const OsqpState& st);

/// Solver bound to one problem; caches the factorization for the current rho.
class OsqpSolver {
 public:
  OsqpSolver(const QuadProgram& p, const OsqpSettings& cfg);

  /// One iteration at penalty st.rho (equality rows scaled).
  void step(OsqpState& st);
  const QuadProgram& problem() const { return p_; }
  const OsqpSettings& settings() const { return cfg_; }
  int factorizations() const { return factorizations_; }

 private:
  void ensure(double rho);

  const QuadProgram& p_;
  OsqpSettings cfg_;
  Vec scale_;
  double factored_rho_ = -1.0;
  std::optional<KktFactor> kkt_;
  std::optional<Eigen::SimplicialLLT<SpMat>> llt_;
  Vec rvec_;
  int factorizations_ = 0;
};

/// Stateless single step (refactors every call).
OsqpState osqp_step(const QuadProgram& p, const OsqpState& st, const OsqpSettings& cfg);

struct OsqpResult {
  Vec x;  // relaxed iterate t
  OsqpState state;
  std::vector<TraceRow> trace;
  int iters = 0;
};

/// Runs until gap_tol (needs w_star), residual tolerances or max_iter.
OsqpResult osqp_solve(const QuadProgram& p, const OsqpSettings& cfg, const Vec* w_star = nullptr,
                      const OsqpState* init = nullptr);

}  // namespace dqp
