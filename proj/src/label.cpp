#include "dqp/label.hpp"

#include <limits>

#include "dqp/osqp.hpp"

namespace dqp {

bool polish_on_active_set(const QuadProgram& p, const std::vector<int>& active, Vec& x, Vec& lambda) {
  const int n = p.n();
  std::vector<int> rows;
  for (int j = 0; j < p.m(); ++j)
    if (active[static_cast<std::size_t>(j)] != 0) rows.push_back(j);
  const int na = static_cast<int>(rows.size());

  // Active rows, each oriented as an equality at its face.
  std::vector<Triplet> at;
  Vec rhs_act(na);
  SpMat Art = SpMat(p.A.transpose());  // column j = row j of A
  for (int r = 0; r < na; ++r) {
    const int j = rows[static_cast<std::size_t>(r)];
    for (SpMat::InnerIterator it(Art, j); it; ++it) at.emplace_back(r, it.row(), it.value());
    rhs_act[r] = active[static_cast<std::size_t>(j)] > 0 ? p.b[j] : -p.b[j];
  }
  SpMat Aact(na, n);
  Aact.setFromTriplets(at.begin(), at.end());

  const double delta = 1e-9;
  SpMat Kt = assemble_kkt(p.Q, Aact, delta, Vec::Constant(na, 1.0 / delta));
  SpMat Ktrue = assemble_kkt(p.Q, Aact, 1.0, Vec::Constant(na, 1.0));
  // Remove the unit regularization from the exact matrix.
  for (int i = 0; i < n; ++i) Ktrue.coeffRef(i, i) -= 1.0;
  for (int r = 0; r < na; ++r) Ktrue.coeffRef(n + r, n + r) = 0.0;

  Eigen::SimplicialLDLT<SpMat> ldlt(Kt);
  if (ldlt.info() != Eigen::Success) return false;
  Vec rhs(n + na);
  rhs << -p.q, rhs_act;
  Vec sol = ldlt.solve(rhs);
  for (int it = 0; it < 25; ++it) {
    const Vec r = rhs - Ktrue * sol;
    if (r.lpNorm<Eigen::Infinity>() <= 1e-15 * std::max(1.0, rhs.lpNorm<Eigen::Infinity>())) break;
    sol += ldlt.solve(r);
  }
  if (!sol.allFinite()) return false;
  x = sol.head(n);
  lambda = Vec::Zero(p.m());
  for (int r = 0; r < na; ++r) {
    const int j = rows[static_cast<std::size_t>(r)];
    lambda[j] = active[static_cast<std::size_t>(j)] > 0 ? sol[n + r] : -sol[n + r];
  }
  return true;
}

namespace {

std::vector<int> guess_active(const QuadProgram& p, const Vec& Ax, const Vec& lambda) {
  std::vector<int> act(static_cast<std::size_t>(p.m()), 0);
  for (int j = 0; j < p.m(); ++j) {
    const double a = Ax[j], bj = p.b[j], l = lambda[j];
    switch (p.kinds[static_cast<std::size_t>(j)]) {
      case RowKind::kEquality: act[static_cast<std::size_t>(j)] = 1; break;
      case RowKind::kUpper: act[static_cast<std::size_t>(j)] = l > bj - a ? 1 : 0; break;
      case RowKind::kBox:
        if (l > bj - a) act[static_cast<std::size_t>(j)] = 1;
        else if (-l > a + bj) act[static_cast<std::size_t>(j)] = -1;
        break;
    }
  }
  return act;
}

}  // namespace

LabelResult label_program(const QuadProgram& p, const LabelSettings& cfg) {
  p.check_dims();
  OsqpSettings os;
  os.rho = cfg.rho;
  os.sigma = 1e-6;
  os.alpha = 1.6;
  os.mode = PenaltyMode::kAdaptive;
  os.linsys.kind = LinearSolver::kDirect;
  OsqpSolver solver(p, os);
  OsqpState st = osqp_init(p, os.rho);

  LabelResult best;
  best.residual = std::numeric_limits<double>::infinity();
  for (int it = 1; it <= cfg.max_iter; ++it) {
    solver.step(st);
    const Residuals r = residuals(p, st);
    if (it % cfg.polish_every == 0 || it == cfg.max_iter) {
      Vec x, lam;
      const Vec Ax = p.A * st.x;
      if (polish_on_active_set(p, guess_active(p, Ax, st.lambda), x, lam)) {
        const double res = kkt_residual(p, x, lam);
        if (res < best.residual) {
          best.x = x;
          best.lambda = lam;
          best.residual = res;
          best.iters = it;
        }
        if (res <= cfg.target_residual) return best;
      }
      const double raw = kkt_residual(p, st.x, st.lambda);
      if (raw <= cfg.target_residual) {
        best.x = st.x;
        best.lambda = st.lambda;
        best.residual = raw;
        best.iters = it;
        return best;
      }
    }
    st.rho = adapt_rho(r.prim, r.dual, st.rho, os.adapt);
  }
  throw NumericError("labeler: KKT residual " + std::to_string(best.residual) + " above target after " +
                     std::to_string(cfg.max_iter) + " iterations");
}

LabeledInstance label_instance(ConsensusQP problem, const LabelSettings& cfg) {
  const QuadProgram c = centralize(problem);
  LabelResult lr = label_program(c, cfg);
  LabeledInstance inst;
  inst.problem = std::move(problem);
  inst.w_star = std::move(lr.x);
  inst.lambda_star = std::move(lr.lambda);
  inst.label_gap = lr.residual;
  return inst;
}

}  // namespace dqp
