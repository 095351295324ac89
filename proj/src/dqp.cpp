#include "dqp/dqp.hpp"

#include <cmath>

#include "dqp/parallel.hpp"

namespace dqp {

DqpState dqp_init(const ConsensusQP& p, double rho, double mu) {
  DqpState st;
  st.nodes.resize(p.blocks.size());
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const int n = p.blocks[i].n(), m = p.blocks[i].m();
    auto& nd = st.nodes[i];
    nd.x = Vec::Zero(n);
    nd.y = Vec::Zero(n);
    nd.z = Vec::Zero(m);
    nd.s = Vec::Zero(m);
    nd.nu = Vec::Zero(m);
    nd.lambda = Vec::Zero(m);
  }
  st.w = Vec::Zero(p.n_global);
  st.rho.assign(p.blocks.size(), rho);
  st.mu.assign(p.blocks.size(), mu);
  return st;
}

Schedule Schedule::constant(int nodes, int iters, double rho, double mu, double alpha) {
  Schedule s;
  LayerParams lp;
  lp.rho.assign(static_cast<std::size_t>(nodes), rho);
  lp.mu.assign(static_cast<std::size_t>(nodes), mu);
  lp.alpha = alpha;
  s.layers.assign(static_cast<std::size_t>(iters), lp);
  return s;
}

NodeSystem::NodeSystem(const QuadProgram& blk, const LinearSolverConfig& cfg)
    : blk_(blk), cfg_(cfg), scale_(row_scale(blk.kinds)) {
  blk.check_dims();
}

const Mat& NodeSystem::scaled_gram() const {
  if (!gram_) {
    const Mat A = Mat(blk_.A);
    gram_ = A.transpose() * scale_.asDiagonal() * A;
  }
  return *gram_;
}

void NodeSystem::ensure(double rho, double mu) {
  if (rho == rho_ && mu == mu_) return;
  if (!(rho > 0.0) || !(mu > 0.0) || !std::isfinite(rho) || !std::isfinite(mu))
    throw NumericError("dqp: penalty parameters must be positive and finite");
  rvec_ = rho * scale_;
  switch (cfg_.kind) {
    case LinearSolver::kDirect:
      kkt_.reset();
      kkt_.emplace(blk_.Q, blk_.A, mu, rvec_);
      break;
    case LinearSolver::kCholesky: {
      Mat K = Mat(blk_.Q) + rho * scaled_gram();
      K.diagonal().array() += mu;
      llt_.compute(K);
      if (llt_.info() != Eigen::Success) throw NumericError("dqp: local Cholesky breakdown");
      break;
    }
    case LinearSolver::kIndirect:
      break;
  }
  rho_ = rho;
  mu_ = mu;
}

void NodeSystem::solve(const NodeState& st, const Vec& w_tilde, double rho, double mu, Vec& x, Vec& nu,
                       long long* cg_iters) {
  ensure(rho, mu);
  const Vec& R = rvec_;
  const Vec rhs_x = -blk_.q + mu * w_tilde - st.y;
  if (cfg_.kind == LinearSolver::kDirect) {
    const Vec rhs_nu = st.s - st.lambda.cwiseQuotient(R);
    kkt_->solve(rhs_x, rhs_nu, x, nu);
    return;
  }
  const Vec rhs = rhs_x + blk_.A.transpose() * (R.cwiseProduct(st.s) - st.lambda);
  if (cfg_.kind == LinearSolver::kCholesky) {
    x = llt_.solve(rhs);
  } else {
    auto op = [&](const Vec& in, Vec& out) {
      out.noalias() = blk_.Q * in;
      out.noalias() += mu * in;
      out.noalias() += blk_.A.transpose() * R.cwiseProduct(blk_.A * in);
    };
    CgResult cg = cg_solve(op, rhs, st.x, cfg_.cg_tol, cfg_.cg_max_iter);
    if (cg_iters) *cg_iters += cg.iterations;
    x = std::move(cg.x);
  }
  nu = R.cwiseProduct(blk_.A * x - st.s) + st.lambda;
}

LocalXZ local_xz_update(NodeSystem& sys, const NodeState& st, const Vec& w_tilde, double rho, double mu,
                        long long* cg_iters) {
  if (w_tilde.size() != sys.block().n()) throw DimensionError("local_xz_update: w_tilde size mismatch");
  LocalXZ out;
  sys.solve(st, w_tilde, rho, mu, out.x, out.nu, cg_iters);
  const Vec rvec = rho * sys.scale();
  out.z = st.s + (out.nu - st.lambda).cwiseQuotient(rvec);
  return out;
}

Vec local_s_update(const Vec& z_new, const Vec& s, const Vec& lambda, const Vec& b, const std::vector<RowKind>& kinds,
                   const Vec& rvec, double alpha) {
  Vec out;
  project_rows(alpha * z_new + (1.0 - alpha) * s + lambda.cwiseQuotient(rvec), b, kinds, out);
  return out;
}

Vec global_w_update(const std::vector<Vec>& x_new, const std::vector<Vec>& y, const Vec& w, const std::vector<double>& mu,
                    double alpha, const std::vector<std::vector<int>>& mapping) {
  const Eigen::Index n = w.size();
  Vec num = Vec::Zero(n), den = Vec::Zero(n);
  for (std::size_t i = 0; i < mapping.size(); ++i) {
    const auto& g = mapping[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      const auto jj = static_cast<Eigen::Index>(j);
      num[g[j]] += alpha * mu[i] * x_new[i][jj] + y[i][jj];
      den[g[j]] += mu[i];
    }
  }
  for (Eigen::Index l = 0; l < n; ++l)
    if (!(den[l] > 0.0)) throw ConfigError("global_w_update: global component without owner");
  return num.cwiseQuotient(den) + (1.0 - alpha) * w;
}

Vec global_w_update_simplified(const std::vector<Vec>& x_new, const Vec& w, const std::vector<double>& mu, double alpha,
                               const std::vector<std::vector<int>>& mapping) {
  const Eigen::Index n = w.size();
  Vec num = Vec::Zero(n), den = Vec::Zero(n);
  for (std::size_t i = 0; i < mapping.size(); ++i) {
    const auto& g = mapping[i];
    for (std::size_t j = 0; j < g.size(); ++j) {
      num[g[j]] += mu[i] * x_new[i][static_cast<Eigen::Index>(j)];
      den[g[j]] += mu[i];
    }
  }
  for (Eigen::Index l = 0; l < n; ++l)
    if (!(den[l] > 0.0)) throw ConfigError("global_w_update: global component without owner");
  return alpha * num.cwiseQuotient(den) + (1.0 - alpha) * w;
}

void dual_updates(NodeState& st, const Vec& x_new, const Vec& z_new, const Vec& s_new, const Vec& w_tilde,
                  const Vec& w_tilde_new, const Vec& rvec, double mu, double alpha) {
  st.lambda += rvec.cwiseProduct(alpha * z_new + (1.0 - alpha) * st.s - s_new);
  st.y += mu * (alpha * x_new + (1.0 - alpha) * w_tilde - w_tilde_new);
}

std::pair<double, double> dual_sum(const ConsensusQP& p, const DqpState& st) {
  Vec acc = Vec::Zero(p.n_global);
  double ymax = 0.0;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    scatter_add(st.nodes[i].y, p.mapping[i], acc);
    if (st.nodes[i].y.size()) ymax = std::max(ymax, st.nodes[i].y.lpNorm<Eigen::Infinity>());
  }
  return {acc.size() ? acc.lpNorm<Eigen::Infinity>() : 0.0, ymax};
}

DqpSolver::DqpSolver(const ConsensusQP& p, const LinearSolverConfig& linsys, int threads)
    : p_(p), threads_(threads), counts_(owner_counts(p)) {
  if (p.blocks.size() != p.mapping.size()) throw DimensionError("dqp: blocks and mapping differ in length");
  systems_.reserve(p.blocks.size());
  for (const auto& blk : p.blocks) systems_.emplace_back(blk, linsys);
}

void DqpSolver::iterate(DqpState& st, const LayerParams& params) {
  const int N = p_.num_nodes();
  if (static_cast<int>(params.rho.size()) != N || static_cast<int>(params.mu.size()) != N)
    throw DimensionError("dqp: penalty vectors must have one entry per node");
  if (params.alpha < 1.0 || params.alpha >= 2.0) throw ConfigError("dqp: alpha must lie in [1, 2)");
  const double alpha = params.alpha;
  std::vector<Vec> w_tilde(static_cast<std::size_t>(N)), x_new(static_cast<std::size_t>(N)),
      z_new(static_cast<std::size_t>(N)), s_new(static_cast<std::size_t>(N));
  std::vector<long long> cg(static_cast<std::size_t>(N), 0);

  // Local phase: nodes touch only their own state.
  parallel_for(N, threads_, [&](int i) {
    const auto ii = static_cast<std::size_t>(i);
    const auto& blk = p_.blocks[ii];
    auto& nd = st.nodes[ii];
    gather(st.w, p_.mapping[ii], w_tilde[ii]);
    LocalXZ xz = local_xz_update(systems_[ii], nd, w_tilde[ii], params.rho[ii], params.mu[ii], &cg[ii]);
    const Vec rvec = params.rho[ii] * systems_[ii].scale();
    s_new[ii] = local_s_update(xz.z, nd.s, nd.lambda, blk.b, blk.kinds, rvec, alpha);
    x_new[ii] = std::move(xz.x);
    z_new[ii] = std::move(xz.z);
    nd.nu = std::move(xz.nu);
  });

  // Global averaging: synchronization point.
  std::vector<Vec> ys(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) ys[static_cast<std::size_t>(i)] = st.nodes[static_cast<std::size_t>(i)].y;
  Vec w_new = global_w_update(x_new, ys, st.w, params.mu, alpha, p_.mapping);

  parallel_for(N, threads_, [&](int i) {
    const auto ii = static_cast<std::size_t>(i);
    auto& nd = st.nodes[ii];
    const Vec rvec = params.rho[ii] * systems_[ii].scale();
    Vec wt_new;
    gather(w_new, p_.mapping[ii], wt_new);
    dual_updates(nd, x_new[ii], z_new[ii], s_new[ii], w_tilde[ii], wt_new, rvec, params.mu[ii], alpha);
    nd.x = std::move(x_new[ii]);
    nd.z = std::move(z_new[ii]);
    nd.s = std::move(s_new[ii]);
  });
  for (long long c : cg) st.cg_iters += c;
  w_prev_ = std::move(st.w);
  st.w = std::move(w_new);
  st.rho = params.rho;
  st.mu = params.mu;
  ++st.k;
  if (!st.w.allFinite()) throw NumericError("dqp: global iterate diverged");
}

NodeResiduals DqpSolver::node_residuals(int i, const DqpState& st) const {
  const auto ii = static_cast<std::size_t>(i);
  const auto& blk = p_.blocks[ii];
  const auto& nd = st.nodes[ii];
  NodeResiduals r;
  r.prim = blk.m() ? (blk.A * nd.x - nd.s).norm() : 0.0;
  r.dual = (blk.Q * nd.x + blk.q + blk.A.transpose() * nd.lambda + nd.y).norm();
  return r;
}

DqpResult dqp_solve(const ConsensusQP& p, const DqpSettings& cfg, const Vec* w_star, const Schedule* schedule,
                    const DqpState* init) {
  if (cfg.max_iter < 0) throw ConfigError("dqp: max_iter must be nonnegative");
  if (w_star && w_star->size() != p.n_global) throw DimensionError("dqp_solve: reference solution size mismatch");
  const int N = p.num_nodes();
  DqpSolver solver(p, cfg.linsys, cfg.threads);
  DqpResult res;
  res.state = init ? *init : dqp_init(p, cfg.rho, cfg.mu);
  int iters = cfg.max_iter;
  if (schedule) iters = std::min<int>(iters, static_cast<int>(schedule->layers.size()));
  const int freeze = static_cast<int>(std::ceil(cfg.freeze_fraction * cfg.max_iter));

  LayerParams lp;
  lp.rho = res.state.rho;
  lp.mu = res.state.mu;
  lp.alpha = cfg.alpha;
  res.trace.reserve(static_cast<std::size_t>(iters));
  for (int it = 0; it < iters; ++it) {
    if (schedule) lp = schedule->layers[static_cast<std::size_t>(it)];
    const Vec w_old = res.state.w;
    solver.iterate(res.state, lp);
    ++res.iters;

    TraceRow row;
    row.iter = res.state.k;
    row.gap = w_star ? optimality_gap(res.state.w, *w_star) : std::nan("");
    double rho_sum = 0.0, mu_sum = 0.0;
    for (int i = 0; i < N; ++i) {
      const NodeResiduals r = solver.node_residuals(i, res.state);
      row.prim_res = std::max(row.prim_res, r.prim);
      row.dual_res = std::max(row.dual_res, r.dual);
      rho_sum += lp.rho[static_cast<std::size_t>(i)];
      mu_sum += lp.mu[static_cast<std::size_t>(i)];
    }
    row.rho = rho_sum / N;
    row.mu = mu_sum / N;
    res.trace.push_back(row);
    if (w_star && cfg.gap_tol > 0.0 && row.gap <= cfg.gap_tol) break;

    if (!schedule && cfg.mode == PenaltyMode::kAdaptive && res.state.k < freeze) {
      for (int i = 0; i < N; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const NodeResiduals r = solver.node_residuals(i, res.state);
        lp.rho[ii] = adapt_rho(r.prim, r.dual, lp.rho[ii], cfg.adapt);
        const Vec wt = gather(res.state.w, p.mapping[ii]);
        const Vec wt_old = gather(w_old, p.mapping[ii]);
        const double cons_prim = (res.state.nodes[ii].x - wt).norm();
        const double cons_dual = lp.mu[ii] * (wt - wt_old).norm();
        lp.mu[ii] = adapt_rho(cons_prim, cons_dual, lp.mu[ii], cfg.adapt);
      }
    }
  }
  res.w = res.state.w;
  return res;
}

}  // namespace dqp
