#pragma once

#include <optional>
#include <vector>

#include "dqp/osqp.hpp"
#include "dqp/qp_model.hpp"

namespace dqp {

struct NodeState {
  Vec x, z, s, nu, lambda, y;
};

struct DqpState {
  std::vector<NodeState> nodes;
  Vec w;
  std::vector<double> rho, mu;  // per node, current penalties
  int k = 0;
  long long cg_iters = 0;
};

/// All-zero iterates with the given penalties on every node.
DqpState dqp_init(const ConsensusQP& p, double rho, double mu);

/// Penalties for one iteration.
struct LayerParams {
  std::vector<double> rho, mu;  // per node
  double alpha = 1.6;
};

struct Schedule {
  std::vector<LayerParams> layers;
  static Schedule constant(int nodes, int iters, double rho, double mu, double alpha);
};

/// Per-node linear system cache; refactors when (rho, mu) change.
class NodeSystem {
 public:
  NodeSystem(const QuadProgram& blk, const LinearSolverConfig& cfg);

  /// Solves the local x-update; returns (x', nu').
  void solve(const NodeState& st, const Vec& w_tilde, double rho, double mu, Vec& x, Vec& nu, long long* cg_iters);

  const QuadProgram& block() const { return blk_; }
  const Vec& scale() const { return scale_; }
  /// A^T diag(scale) A, dense.
  const Mat& scaled_gram() const;
  /// Factor of Q + mu I + rho A^T S A (Cholesky solver only, after a solve).
  const Eigen::LLT<Mat>& cholesky() const { return llt_; }

 private:
  void ensure(double rho, double mu);

  const QuadProgram& blk_;
  LinearSolverConfig cfg_;
  Vec scale_;
  double rho_ = -1.0, mu_ = -1.0;
  Vec rvec_;
  std::optional<KktFactor> kkt_;
  mutable std::optional<Mat> gram_;
  Eigen::LLT<Mat> llt_;
};

struct LocalXZ {
  Vec x, nu, z;
};

/// x-update and z' = s + (nu' - lambda) / R for one node.
LocalXZ local_xz_update(NodeSystem& sys, const NodeState& st, const Vec& w_tilde, double rho, double mu,
                        long long* cg_iters = nullptr);

/// min-projection of alpha z' + (1 - alpha) s + lambda / R onto the row set.
Vec local_s_update(const Vec& z_new, const Vec& s, const Vec& lambda, const Vec& b, const std::vector<RowKind>& kinds,
                   const Vec& rvec, double alpha);

/// w'_l = sum(alpha mu_i x'_ij + y_ij) / sum(mu_i) + (1 - alpha) w_l.
Vec global_w_update(const std::vector<Vec>& x_new, const std::vector<Vec>& y, const Vec& w, const std::vector<double>& mu,
                    double alpha, const std::vector<std::vector<int>>& mapping);

/// Same update with the dual terms dropped (valid when sum G_i^T y_i = 0).
Vec global_w_update_simplified(const std::vector<Vec>& x_new, const Vec& w, const std::vector<double>& mu, double alpha,
                               const std::vector<std::vector<int>>& mapping);

/// lambda' = lambda + R (alpha z' + (1 - alpha) s - s'),
/// y' = y + mu (alpha x' + (1 - alpha) w_tilde - w_tilde').
void dual_updates(NodeState& st, const Vec& x_new, const Vec& z_new, const Vec& s_new, const Vec& w_tilde,
                  const Vec& w_tilde_new, const Vec& rvec, double mu, double alpha);

/// ||sum_i G_i^T y_i||_inf and max_i ||y_i||_inf.
std::pair<double, double> dual_sum(const ConsensusQP& p, const DqpState& st);

struct NodeResiduals {
  double prim = 0.0;  // ||A x - s||
  double dual = 0.0;  // ||Q x + q + A^T lambda + y||
};

class DqpSolver {
 public:
  DqpSolver(const ConsensusQP& p, const LinearSolverConfig& linsys, int threads = 1);

  /// One iteration: local (x, z), local s, global w, duals.
  void iterate(DqpState& st, const LayerParams& params);

  NodeResiduals node_residuals(int i, const DqpState& st) const;
  const ConsensusQP& problem() const { return p_; }
  /// Global iterate from the previous call to iterate (empty before).
  const Vec& previous_w() const { return w_prev_; }

 private:
  const ConsensusQP& p_;
  std::vector<NodeSystem> systems_;
  int threads_;
  std::vector<int> counts_;
  Vec w_prev_;
};

struct DqpSettings {
  double rho = 1.0;
  double mu = 1.0;
  double alpha = 1.6;
  PenaltyMode mode = PenaltyMode::kFixed;
  AdaptiveRule adapt;
  /// Adaptive penalties stop changing at ceil(freeze_fraction * max_iter).
  double freeze_fraction = 0.8;
  LinearSolverConfig linsys;
  int max_iter = 1000;
  double gap_tol = 0.0;
  int threads = 1;
};

struct DqpResult {
  Vec w;
  DqpState state;
  std::vector<TraceRow> trace;  // prim/dual: max over nodes; rho/mu: node means
  int iters = 0;
};

/// Runs iterations from `init` (zeros if null) under either `schedule` (when
/// given; max_iter is capped by its length) or settings' fixed/adaptive rule.
DqpResult dqp_solve(const ConsensusQP& p, const DqpSettings& cfg, const Vec* w_star = nullptr,
                    const Schedule* schedule = nullptr, const DqpState* init = nullptr);

}  // namespace dqp
