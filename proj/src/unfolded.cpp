#include "dqp/unfolded.hpp"

#include <cmath>
#include <limits>

namespace dqp {

namespace {

void rho_features(const QuadProgram& blk, const NodeState& st, const Vec& s_prev, double* f) {
  f[0] = (st.z - st.s).norm();
  f[1] = (blk.A * st.x - st.s).norm();
  f[2] = (st.s - s_prev).norm();
  f[3] = (blk.Q * st.x + blk.q + blk.A.transpose() * st.lambda).norm();
}

void log_inputs(const double* f, int n, double* in) {
  for (int j = 0; j < n; ++j) in[j] = std::log(kFeatureFloor + f[j]);
}

// d||d|| = d / ||d||, taken as zero at the origin.
Vec unit_or_zero(const Vec& d, double norm) { return norm > 0.0 ? Vec(d / norm) : Vec::Zero(d.size()); }

}  // namespace

void check_compatible(const ConsensusQP& p, const Policy& policy, const UnfoldedOptions& opt) {
  const auto& L = policy.layout;
  if (static_cast<int>(policy.theta.size()) != L.size()) throw DimensionError("policy parameter vector has wrong size");
  if (L.sharing == Sharing::kLocal && L.nodes != p.num_nodes())
    throw ConfigError("local policy was built for " + std::to_string(L.nodes) + " nodes, problem has " +
                      std::to_string(p.num_nodes()));
  if (opt.centralized && p.num_nodes() != 1) throw ConfigError("centralized unrolling needs a single-node problem");
  if (opt.centralized && L.learn_mu) throw ConfigError("centralized policies keep mu fixed");
  if (opt.linsys.kind == LinearSolver::kDirect) throw ConfigError("unrolling supports the cholesky and indirect solvers");
  if (!L.learn_mu && !(opt.fixed_mu > 0.0)) throw ConfigError("fixed_mu must be positive");
}

UnrolledResult forward_unrolled(const ConsensusQP& p, const Policy& policy, const UnfoldedOptions& opt, bool record,
                                const DqpState* init) {
  check_compatible(p, policy, opt);
  const auto& L = policy.layout;
  const int K = L.K, N = p.num_nodes();
  const double* th = policy.theta.data();
  std::vector<NodeSystem> sys;
  sys.reserve(p.blocks.size());
  for (const auto& blk : p.blocks) sys.emplace_back(blk, opt.linsys);

  DqpState st = init ? *init : dqp_init(p, 1.0, 1.0);
  std::vector<Vec> s_prev(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) s_prev[static_cast<std::size_t>(i)] = st.nodes[static_cast<std::size_t>(i)].s;
  Vec w_prev = st.w;

  UnrolledResult res;
  res.w.reserve(static_cast<std::size_t>(K));
  Tape& tape = res.tape;
  if (record) {
    tape.states.push_back(st.nodes);
    tape.w.push_back(st.w);
  }
  for (int k = 0; k < K; ++k) {
    const double alpha = alpha_from_raw(th[L.alpha_index(k)]);
    std::vector<NodeRecord> recs(static_cast<std::size_t>(N));
    std::vector<Vec> wt(static_cast<std::size_t>(N)), x_new(static_cast<std::size_t>(N)),
        z_new(static_cast<std::size_t>(N)), s_new(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const auto& blk = p.blocks[ii];
      auto& nd = st.nodes[ii];
      auto& rec = recs[ii];
      const int slot = L.slot_of(i);
      gather(st.w, p.mapping[ii], wt[ii]);

      rec.pre_rho = th[L.rho_index(k, slot)];
      if (L.closed_loop) {
        rho_features(blk, nd, s_prev[ii], rec.feat_rho);
        double in[kRhoFeatures];
        log_inputs(rec.feat_rho, kRhoFeatures, in);
        rec.pre_rho += mlp_forward(th + L.mlp_rho_offset(k, slot), kRhoFeatures, in, &rec.cache_rho);
      }
      rec.rho = penalty_from_raw(rec.pre_rho);
      if (L.learn_mu) {
        rec.pre_mu = th[L.mu_index(k, slot)];
        if (L.closed_loop) {
          rec.feat_mu[0] = (nd.x - wt[ii]).norm();
          rec.feat_mu[1] = (wt[ii] - gather(w_prev, p.mapping[ii])).norm();
          double in[kMuFeatures];
          log_inputs(rec.feat_mu, kMuFeatures, in);
          rec.pre_mu += mlp_forward(th + L.mlp_mu_offset(k, slot), kMuFeatures, in, &rec.cache_mu);
        }
        rec.mu = penalty_from_raw(rec.pre_mu);
      } else {
        rec.mu = opt.fixed_mu;
      }
      if (!(rec.rho > 0.0) || !(rec.mu > 0.0))
        throw NumericError("unrolled layer " + std::to_string(k) + ": penalty underflowed to zero");

      LocalXZ xz = local_xz_update(sys[ii], nd, wt[ii], rec.rho, rec.mu, &st.cg_iters);
      const Vec rvec = rec.rho * sys[ii].scale();
      rec.v = alpha * xz.z + (1.0 - alpha) * nd.s + nd.lambda.cwiseQuotient(rvec);
      project_rows(rec.v, blk.b, blk.kinds, s_new[ii]);
      if (record && opt.linsys.kind == LinearSolver::kCholesky) rec.llt = sys[ii].cholesky();
      nd.nu = std::move(xz.nu);
      x_new[ii] = std::move(xz.x);
      z_new[ii] = std::move(xz.z);
    }

    std::vector<double> mus(static_cast<std::size_t>(N)), rhos(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) {
      mus[static_cast<std::size_t>(i)] = recs[static_cast<std::size_t>(i)].mu;
      rhos[static_cast<std::size_t>(i)] = recs[static_cast<std::size_t>(i)].rho;
    }
    Vec w_new;
    if (opt.centralized) {
      w_new = global_w_update_simplified(x_new, st.w, mus, alpha, p.mapping);
    } else {
      std::vector<Vec> ys(static_cast<std::size_t>(N));
      for (int i = 0; i < N; ++i) ys[static_cast<std::size_t>(i)] = st.nodes[static_cast<std::size_t>(i)].y;
      w_new = global_w_update(x_new, ys, st.w, mus, alpha, p.mapping);
    }
    for (int i = 0; i < N; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      auto& nd = st.nodes[ii];
      const Vec rvec = rhos[ii] * sys[ii].scale();
      Vec wt_new;
      gather(w_new, p.mapping[ii], wt_new);
      s_prev[ii] = nd.s;
      dual_updates(nd, x_new[ii], z_new[ii], s_new[ii], wt[ii], wt_new, rvec, mus[ii], alpha);
      if (opt.centralized) nd.y.setZero();
      nd.x = std::move(x_new[ii]);
      nd.z = std::move(z_new[ii]);
      nd.s = std::move(s_new[ii]);
    }
    w_prev = std::move(st.w);
    st.w = std::move(w_new);
    st.rho = rhos;
    st.mu = mus;
    ++st.k;
    if (!st.w.allFinite()) throw NumericError("unrolled layer " + std::to_string(k) + ": iterate diverged");
    res.w.push_back(st.w);
    if (record) {
      tape.states.push_back(st.nodes);
      tape.w.push_back(st.w);
      tape.alpha.push_back(alpha);
      tape.records.push_back(std::move(recs));
    }
  }
  return res;
}

Vec backward_unrolled(const ConsensusQP& p, const Policy& policy, const UnfoldedOptions& opt, const Tape& tape,
                      const std::vector<Vec>& grad_w) {
  check_compatible(p, policy, opt);
  const auto& L = policy.layout;
  const int K = L.K, N = p.num_nodes();
  if (tape.layers() != K || static_cast<int>(tape.states.size()) != K + 1 || static_cast<int>(grad_w.size()) != K)
    throw DimensionError("backward_unrolled: tape does not match the policy depth");
  const double* th = policy.theta.data();
  Vec g = Vec::Zero(L.size());
  if (K == 0) return g;

  std::vector<Vec> S(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) S[static_cast<std::size_t>(i)] = row_scale(p.blocks[static_cast<std::size_t>(i)].kinds);

  // Adjoints of the state leaving the layer being processed.
  auto zeros_like = [&](auto member) {
    std::vector<Vec> out(static_cast<std::size_t>(N));
    for (int i = 0; i < N; ++i) out[static_cast<std::size_t>(i)] = Vec::Zero(member(tape.states[0][static_cast<std::size_t>(i)]).size());
    return out;
  };
  auto x_of = [](const NodeState& s) -> const Vec& { return s.x; };
  auto s_of = [](const NodeState& s) -> const Vec& { return s.s; };
  std::vector<Vec> Gx = zeros_like(x_of), Gy = zeros_like(x_of);
  std::vector<Vec> Gz = zeros_like(s_of), Gs = zeros_like(s_of), Gl = zeros_like(s_of);
  Vec Gw = Vec::Zero(p.n_global);
  std::vector<Vec> pend_s = zeros_like(s_of);
  Vec pend_w = Vec::Zero(p.n_global);

  for (int k = K - 1; k >= 0; --k) {
    const auto kk = static_cast<std::size_t>(k);
    if (grad_w[kk].size() != p.n_global) throw DimensionError("backward_unrolled: loss gradient size mismatch");
    Gw += grad_w[kk];
    const auto& in = tape.states[kk];
    const auto& out = tape.states[kk + 1];
    const auto& recs = tape.records[kk];
    if (static_cast<int>(recs.size()) != N) throw DimensionError("backward_unrolled: tape node count mismatch");
    const Vec& w_in = tape.w[kk];
    const Vec& w_out = tape.w[kk + 1];
    const Vec& w_before = tape.w[k > 0 ? kk - 1 : 0];
    const double alpha = tape.alpha[kk];
    double galpha = 0.0;
    std::vector<double> grho(static_cast<std::size_t>(N), 0.0), gmu(static_cast<std::size_t>(N), 0.0);
    std::vector<Vec> wt(static_cast<std::size_t>(N)), gxn = Gx, gwt(static_cast<std::size_t>(N));

    // Adjoints of the state entering layer k.
    std::vector<Vec> gx = zeros_like(x_of), gy = zeros_like(x_of), gz = zeros_like(s_of), gl = zeros_like(s_of);
    std::vector<Vec> gs = std::move(pend_s);
    pend_s = zeros_like(s_of);
    Vec gw = std::move(pend_w);
    pend_w = Vec::Zero(p.n_global);

    for (int i = 0; i < N; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      gather(w_in, p.mapping[ii], wt[ii]);
      gwt[ii] = Vec::Zero(wt[ii].size());
    }

    if (!opt.centralized) {
      // y' = y + mu (alpha x' + (1 - alpha) w~ - w~').
      for (int i = 0; i < N; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const double mu = recs[ii].mu;
        const Vec& xn = out[ii].x;
        const Vec wt_new = gather(w_out, p.mapping[ii]);
        const Vec& G = Gy[ii];
        gy[ii] += G;
        gmu[ii] += G.dot(alpha * xn + (1.0 - alpha) * wt[ii] - wt_new);
        galpha += mu * G.dot(xn - wt[ii]);
        gxn[ii] += (mu * alpha) * G;
        gwt[ii] += (mu * (1.0 - alpha)) * G;
        scatter_add(-mu * G, p.mapping[ii], Gw);
      }
      // w' = (alpha sum mu x' + sum y) / sum mu + (1 - alpha) w.
      Vec num = Vec::Zero(p.n_global), num_x = Vec::Zero(p.n_global), den = Vec::Zero(p.n_global);
      for (int i = 0; i < N; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const auto& map = p.mapping[ii];
        const double mu = recs[ii].mu;
        for (std::size_t j = 0; j < map.size(); ++j) {
          const auto jj = static_cast<Eigen::Index>(j);
          num_x[map[j]] += mu * out[ii].x[jj];
          num[map[j]] += alpha * mu * out[ii].x[jj] + in[ii].y[jj];
          den[map[j]] += mu;
        }
      }
      galpha += Gw.dot(num_x.cwiseQuotient(den) - w_in);
      gw += (1.0 - alpha) * Gw;
      for (int i = 0; i < N; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const auto& map = p.mapping[ii];
        const double mu = recs[ii].mu;
        for (std::size_t j = 0; j < map.size(); ++j) {
          const auto jj = static_cast<Eigen::Index>(j);
          const int l = map[j];
          const double c = Gw[l] / den[l];
          gxn[ii][jj] += alpha * mu * c;
          gy[ii][jj] += c;
          gmu[ii] += c * (alpha * out[ii].x[jj] - num[l] / den[l]);
        }
      }
    } else {
      // w' = alpha sum mu x' / sum mu + (1 - alpha) w with mu fixed.
      Vec num_x = Vec::Zero(p.n_global), den = Vec::Zero(p.n_global);
      for (int i = 0; i < N; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const auto& map = p.mapping[ii];
        for (std::size_t j = 0; j < map.size(); ++j) {
          num_x[map[j]] += recs[ii].mu * out[ii].x[static_cast<Eigen::Index>(j)];
          den[map[j]] += recs[ii].mu;
        }
      }
      galpha += Gw.dot(num_x.cwiseQuotient(den) - w_in);
      gw += (1.0 - alpha) * Gw;
      for (int i = 0; i < N; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        const auto& map = p.mapping[ii];
        for (std::size_t j = 0; j < map.size(); ++j)
          gxn[ii][static_cast<Eigen::Index>(j)] += alpha * recs[ii].mu * Gw[map[j]] / den[map[j]];
      }
    }

    for (int i = 0; i < N; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const auto& blk = p.blocks[ii];
      const auto& rec = recs[ii];
      const NodeState& a = in[ii];
      const NodeState& b = out[ii];
      const Vec R = rec.rho * S[ii];
      const bool has_rows = blk.m() > 0;
      Vec gR = Vec::Zero(blk.m());

      if (has_rows) {
        // lambda' = lambda + R (zr - s'), s' = P(v), v = zr + lambda / R,
        // zr = alpha z' + (1 - alpha) s, z' = A x'.
        const Vec zr = alpha * b.z + (1.0 - alpha) * a.s;
        gl[ii] += Gl[ii];
        Vec gzr = R.cwiseProduct(Gl[ii]);
        const Vec gsn = Gs[ii] - R.cwiseProduct(Gl[ii]);
        gR += (zr - b.s).cwiseProduct(Gl[ii]);
        Vec mask;
        projection_mask(rec.v, blk.b, blk.kinds, mask);
        const Vec gv = mask.cwiseProduct(gsn);
        gzr += gv;
        gl[ii] += gv.cwiseQuotient(R);
        gR -= a.lambda.cwiseProduct(gv).cwiseQuotient(R.cwiseProduct(R));
        const Vec gzn = Gz[ii] + alpha * gzr;
        gs[ii] += (1.0 - alpha) * gzr;
        galpha += (b.z - a.s).dot(gzr);
        gxn[ii] += blk.A.transpose() * gzn;
      }

      // x' = Qbar^{-1} bbar with Qbar = Q + mu I + rho A^T S A and
      // bbar = -q + mu w~ - y + A^T (R s - lambda).
      Vec u;
      if (gxn[ii].isZero(0.0)) {
        u = Vec::Zero(gxn[ii].size());
      } else if (opt.linsys.kind == LinearSolver::kCholesky) {
        if (rec.llt.rows() != gxn[ii].size()) throw DimensionError("backward_unrolled: tape lacks the layer factor");
        u = rec.llt.solve(gxn[ii]);
      } else {
        const double rho = rec.rho, mu = rec.mu;
        auto op = [&](const Vec& v, Vec& o) {
          o.noalias() = blk.Q * v;
          o.noalias() += mu * v;
          o.noalias() += rho * (blk.A.transpose() * S[ii].cwiseProduct(blk.A * v));
        };
        CgResult cg = cg_solve(op, gxn[ii], Vec::Zero(gxn[ii].size()), opt.linsys.cg_tol, opt.linsys.cg_max_iter);
        u = std::move(cg.x);
      }
      gmu[ii] += (wt[ii] - b.x).dot(u);
      gwt[ii] += rec.mu * u;
      if (!opt.centralized) gy[ii] -= u;
      if (has_rows) {
        const Vec Au = blk.A * u;
        const Vec Ax = blk.A * b.x;
        grho[ii] -= Ax.cwiseProduct(S[ii]).dot(Au);
        gR += a.s.cwiseProduct(Au);
        gs[ii] += R.cwiseProduct(Au);
        gl[ii] -= Au;
        grho[ii] += S[ii].dot(gR);
      }

      // Parameter transforms and feedback features of the entering state.
      const int slot = L.slot_of(i);
      const double gpr = grho[ii] * penalty_slope(rec.pre_rho);
      g[L.rho_index(k, slot)] += gpr;
      if (L.closed_loop) {
        const int off = L.mlp_rho_offset(k, slot);
        double gin[kRhoFeatures] = {};
        mlp_backward(th + off, kRhoFeatures, rec.cache_rho, gpr, g.data() + off, gin);
        double c[kRhoFeatures];
        for (int j = 0; j < kRhoFeatures; ++j) c[j] = gin[j] / (kFeatureFloor + rec.feat_rho[j]);
        if (has_rows) {
          const Vec d0 = unit_or_zero(a.z - a.s, rec.feat_rho[0]);
          gz[ii] += c[0] * d0;
          gs[ii] -= c[0] * d0;
          const Vec d1 = unit_or_zero(blk.A * a.x - a.s, rec.feat_rho[1]);
          gx[ii] += blk.A.transpose() * (c[1] * d1);
          gs[ii] -= c[1] * d1;
          const Vec& sp = k > 0 ? tape.states[kk - 1][ii].s : a.s;
          const Vec d2 = unit_or_zero(a.s - sp, rec.feat_rho[2]);
          gs[ii] += c[2] * d2;
          if (k > 0) pend_s[ii] -= c[2] * d2;
        }
        const Vec d3 = unit_or_zero(blk.Q * a.x + blk.q + blk.A.transpose() * a.lambda, rec.feat_rho[3]);
        gx[ii] += blk.Q * (c[3] * d3);
        if (has_rows) gl[ii] += blk.A * (c[3] * d3);
      }
      if (L.learn_mu) {
        const double gpm = gmu[ii] * penalty_slope(rec.pre_mu);
        g[L.mu_index(k, slot)] += gpm;
        if (L.closed_loop) {
          const int off = L.mlp_mu_offset(k, slot);
          double gin[kMuFeatures] = {};
          mlp_backward(th + off, kMuFeatures, rec.cache_mu, gpm, g.data() + off, gin);
          const double c0 = gin[0] / (kFeatureFloor + rec.feat_mu[0]);
          const double c1 = gin[1] / (kFeatureFloor + rec.feat_mu[1]);
          const Vec d0 = unit_or_zero(a.x - wt[ii], rec.feat_mu[0]);
          gx[ii] += c0 * d0;
          gwt[ii] -= c0 * d0;
          const Vec wtp = gather(w_before, p.mapping[ii]);
          const Vec d1 = unit_or_zero(wt[ii] - wtp, rec.feat_mu[1]);
          gwt[ii] += c1 * d1;
          if (k > 0) scatter_add(-c1 * d1, p.mapping[ii], pend_w);
        }
      }
      scatter_add(gwt[ii], p.mapping[ii], gw);
    }
    g[L.alpha_index(k)] += galpha * alpha_slope(th[L.alpha_index(k)]);

    Gx = std::move(gx);
    Gy = std::move(gy);
    Gz = std::move(gz);
    Gs = std::move(gs);
    Gl = std::move(gl);
    Gw = std::move(gw);
  }
  if (!g.allFinite()) throw NumericError("backward_unrolled: non-finite gradient");
  return g;
}

std::vector<double> loss_weights(int K) {
  if (K < 0) throw ConfigError("loss_weights: K must be nonnegative");
  std::vector<double> gamma(static_cast<std::size_t>(K));
  for (int k = 1; k <= K; ++k) gamma[static_cast<std::size_t>(k - 1)] = std::exp(static_cast<double>(k - K) / 5.0);
  return gamma;
}

double training_loss(const std::vector<Vec>& w, const Vec& w_star, const std::vector<double>& gamma,
                     std::vector<Vec>* grad) {
  if (w.size() != gamma.size()) throw DimensionError("training_loss: iterate and weight counts differ");
  double loss = 0.0;
  if (grad) grad->assign(w.size(), Vec());
  for (std::size_t k = 0; k < w.size(); ++k) {
    if (w[k].size() != w_star.size()) throw DimensionError("training_loss: iterate size mismatch");
    const Vec d = w[k] - w_star;
    const double nrm = d.norm();
    loss += gamma[k] * nrm;
    if (grad) (*grad)[k] = nrm > 0.0 ? Vec(gamma[k] / nrm * d) : Vec::Zero(d.size());
  }
  return loss;
}

double instance_loss(const LabeledInstance& inst, const Policy& policy, const UnfoldedOptions& opt, Vec* grad) {
  UnrolledResult fw = forward_unrolled(inst.problem, policy, opt, grad != nullptr);
  const auto gamma = loss_weights(policy.layout.K);
  std::vector<Vec> gw;
  const double loss = training_loss(fw.w, inst.w_star, gamma, grad ? &gw : nullptr);
  if (grad) *grad = backward_unrolled(inst.problem, policy, opt, fw.tape, gw);
  return loss;
}

ImplicitGrad implicit_solve_backward(const Mat& Qbar, const Vec& x_sol, const Vec& grad_x,
                                     const LinearSolverConfig& linsys) {
  const Eigen::Index n = Qbar.rows();
  if (Qbar.cols() != n || x_sol.size() != n || grad_x.size() != n)
    throw DimensionError("implicit_solve_backward: size mismatch");
  ImplicitGrad out;
  if (linsys.kind == LinearSolver::kIndirect) {
    CgResult cg = cg_solve(Qbar, grad_x, Vec::Zero(n), linsys.cg_tol, linsys.cg_max_iter);
    if (!cg.converged) throw NumericError("implicit_solve_backward: CG did not converge");
    out.grad_b = std::move(cg.x);
  } else {
    Eigen::LLT<Mat> llt(Qbar);
    if (llt.info() != Eigen::Success) throw NumericError("implicit_solve_backward: matrix is not positive definite");
    out.grad_b = llt.solve(grad_x);
  }
  out.grad_Q = -0.5 * (x_sol * out.grad_b.transpose() + out.grad_b * x_sol.transpose());
  return out;
}

double min_projection_margin(const ConsensusQP& p, const Tape& tape) {
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& layer : tape.records)
    for (std::size_t i = 0; i < layer.size(); ++i) {
      const auto& blk = p.blocks[i];
      for (int j = 0; j < blk.m(); ++j) {
        const double v = layer[i].v[j], b = blk.b[j];
        switch (blk.kinds[static_cast<std::size_t>(j)]) {
          case RowKind::kUpper: margin = std::min(margin, std::abs(v - b)); break;
          case RowKind::kBox: margin = std::min({margin, std::abs(v - b), std::abs(v + b)}); break;
          case RowKind::kEquality: break;
        }
      }
    }
  return margin;
}

Schedule tape_schedule(const Tape& tape) {
  Schedule s;
  for (int k = 0; k < tape.layers(); ++k) {
    LayerParams lp;
    lp.alpha = tape.alpha[static_cast<std::size_t>(k)];
    for (const auto& r : tape.records[static_cast<std::size_t>(k)]) {
      lp.rho.push_back(r.rho);
      lp.mu.push_back(r.mu);
    }
    s.layers.push_back(std::move(lp));
  }
  return s;
}

}  // namespace dqp
