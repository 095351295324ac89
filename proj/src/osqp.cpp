#include "dqp/osqp.hpp"

#include <cmath>
#include <map>

namespace dqp {

const char* to_string(LinearSolver s) {
  switch (s) {
    case LinearSolver::kDirect: return "direct";
    case LinearSolver::kIndirect: return "indirect";
    case LinearSolver::kCholesky: return "cholesky";
  }
  return "direct";
}

LinearSolver linear_solver_from_string(const std::string& s) {
  if (s == "direct") return LinearSolver::kDirect;
  if (s == "indirect") return LinearSolver::kIndirect;
  if (s == "cholesky") return LinearSolver::kCholesky;
  throw ConfigError("unknown linear solver '" + s + "'");
}

double adapt_rho(double prim_res, double dual_res, double rho, const AdaptiveRule& rule) {
  if (prim_res > rule.ratio * dual_res) return rho * rule.tau;
  if (dual_res > rule.ratio * prim_res) return rho / rule.tau;
  return rho;
}

const std::vector<double>& penalty_sweep(const std::string& kind) {
  static const std::vector<double> small = {0.1, 0.3, 0.5, 1.0, 3.0, 5.0, 10.0};
  static const std::vector<double> medium = {3.0, 5.0, 10.0, 30.0, 50.0, 100.0, 300.0};
  static const std::vector<double> large = {30.0, 50.0, 100.0, 300.0, 500.0, 1000.0, 3000.0};
  static const std::map<std::string, const std::vector<double>*> table = {
      {"random_qp", &small},           {"random_qp_eq", &small},        {"osc_masses", &small},
      {"random_networked_qp", &small}, {"coupled_pendulums", &small},   {"coupled_osc_masses", &small},
      {"network_flow", &small},        {"double_integrator", &medium}, {"portfolio", &medium},
      {"lasso", &large},               {"distributed_lasso", &large},
  };
  auto it = table.find(kind);
  if (it == table.end()) throw ConfigError("no penalty sweep for kind '" + kind + "'");
  return *it->second;
}

double penalty_median(const std::string& kind) {
  const auto& v = penalty_sweep(kind);
  return v[v.size() / 2];
}

OsqpState osqp_init(const QuadProgram& p, double rho) {
  OsqpState st;
  st.x = Vec::Zero(p.n());
  st.t = Vec::Zero(p.n());
  st.z = Vec::Zero(p.m());
  st.s = Vec::Zero(p.m());
  st.nu = Vec::Zero(p.m());
  st.lambda = Vec::Zero(p.m());
  st.rho = rho;
  return st;
}

Residuals residuals(const QuadProgram& p, const OsqpState& st) {
  Residuals r;
  r.prim = p.m() ? (p.A * st.x - st.s).norm() : 0.0;
  r.dual = (p.Q * st.x + p.q + p.A.transpose() * st.lambda).norm();
  return r;
}

OsqpSolver::OsqpSolver(const QuadProgram& p, const OsqpSettings& cfg) : p_(p), cfg_(cfg) {
  p_.check_dims();
  if (!(cfg.sigma > 0.0)) throw ConfigError("osqp: sigma must be positive");
  if (!(cfg.rho > 0.0)) throw ConfigError("osqp: rho must be positive");
  if (cfg.alpha < 1.0 || cfg.alpha >= 2.0) throw ConfigError("osqp: alpha must lie in [1, 2)");
  scale_ = row_scale(p.kinds);
}

void OsqpSolver::ensure(double rho) {
  if (rho == factored_rho_) return;
  if (!(rho > 0.0) || !std::isfinite(rho)) throw NumericError("osqp: penalty left (0, inf)");
  rvec_ = rho * scale_;
  switch (cfg_.linsys.kind) {
    case LinearSolver::kDirect:
      kkt_.reset();
      kkt_.emplace(p_.Q, p_.A, cfg_.sigma, rvec_);
      ++factorizations_;
      break;
    case LinearSolver::kCholesky: {
      SpMat K = add_diagonal(p_.Q, cfg_.sigma) + SpMat(p_.A.transpose() * rvec_.asDiagonal() * p_.A);
      llt_.reset();
      llt_.emplace(K);
      if (llt_->info() != Eigen::Success) throw NumericError("osqp: Cholesky breakdown");
      ++factorizations_;
      break;
    }
    case LinearSolver::kIndirect:
      break;
  }
  factored_rho_ = rho;
}

void OsqpSolver::step(OsqpState& st) {
  ensure(st.rho);
  const double sigma = cfg_.sigma;
  const double alpha = cfg_.alpha;
  const Vec& R = rvec_;
  const Vec rhs_x = sigma * st.t - p_.q;
  Vec x, nu;
  if (cfg_.linsys.kind == LinearSolver::kDirect) {
    const Vec rhs_nu = st.s - st.lambda.cwiseQuotient(R);
    kkt_->solve(rhs_x, rhs_nu, x, nu);
  } else {
    const Vec rhs = rhs_x + p_.A.transpose() * (R.cwiseProduct(st.s) - st.lambda);
    if (cfg_.linsys.kind == LinearSolver::kCholesky) {
      x = llt_->solve(rhs);
    } else {
      auto op = [&](const Vec& in, Vec& out) {
        out.noalias() = p_.Q * in;
        out.noalias() += sigma * in;
        out.noalias() += p_.A.transpose() * R.cwiseProduct(p_.A * in);
      };
      CgResult cg = cg_solve(op, rhs, st.x, cfg_.linsys.cg_tol, cfg_.linsys.cg_max_iter);
      st.cg_iters += cg.iterations;
      x = std::move(cg.x);
    }
    nu = R.cwiseProduct(p_.A * x - st.s) + st.lambda;
  }
  const Vec z = st.s + (nu - st.lambda).cwiseQuotient(R);
  const Vec zr = alpha * z + (1.0 - alpha) * st.s;
  Vec s_new;
  project_rows(zr + st.lambda.cwiseQuotient(R), p_.b, p_.kinds, s_new);
  st.lambda += R.cwiseProduct(zr - s_new);
  st.t = alpha * x + (1.0 - alpha) * st.t;
  st.x = std::move(x);
  st.z = z;
  st.nu = std::move(nu);
  st.s = std::move(s_new);
  ++st.k;
  if (!st.x.allFinite() || !st.lambda.allFinite()) throw NumericError("osqp: iterate diverged");
}

OsqpState osqp_step(const QuadProgram& p, const OsqpState& st, const OsqpSettings& cfg) {
  OsqpSolver solver(p, cfg);
  OsqpState out = st;
  solver.step(out);
  return out;
}

OsqpResult osqp_solve(const QuadProgram& p, const OsqpSettings& cfg, const Vec* w_star, const OsqpState* init) {
  if (cfg.max_iter < 0) throw ConfigError("osqp: max_iter must be nonnegative");
  if (w_star && w_star->size() != p.n()) throw DimensionError("osqp_solve: reference solution size mismatch");
  OsqpSolver solver(p, cfg);
  OsqpResult res;
  res.state = init ? *init : osqp_init(p, cfg.rho);
  res.trace.reserve(static_cast<std::size_t>(cfg.max_iter));
  for (int it = 0; it < cfg.max_iter; ++it) {
    solver.step(res.state);
    const Residuals r = residuals(p, res.state);
    TraceRow row;
    row.iter = res.state.k;
    row.gap = w_star ? optimality_gap(res.state.t, *w_star) : std::nan("");
    row.prim_res = r.prim;
    row.dual_res = r.dual;
    row.rho = res.state.rho;
    row.mu = cfg.sigma;
    res.trace.push_back(row);
    ++res.iters;
    if (w_star && cfg.gap_tol > 0.0 && row.gap <= cfg.gap_tol) break;
    if (cfg.eps_prim > 0.0 && cfg.eps_dual > 0.0 && r.prim <= cfg.eps_prim && r.dual <= cfg.eps_dual) break;
    if (cfg.mode == PenaltyMode::kAdaptive) res.state.rho = adapt_rho(r.prim, r.dual, res.state.rho, cfg.adapt);
  }
  res.x = res.state.t;
  return res;
}

}  // namespace dqp
