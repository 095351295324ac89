#pragma once

#include <vector>

#include "dqp/dqp.hpp"
#include "dqp/policy.hpp"

namespace dqp {

struct UnfoldedOptions {
  /// kCholesky keeps one dense factor per node and layer; kIndirect runs CG
  /// in both passes. kDirect is rejected.
  LinearSolverConfig linsys{LinearSolver::kCholesky, 1e-12, 0};
  /// Single-node centralized variant: y stays zero and w' = alpha x' + (1 - alpha) w.
  bool centralized = false;
  /// Consensus penalty when the policy does not learn mu.
  double fixed_mu = 1e-6;
};

/// Per-node values of one layer needed by the reverse pass.
struct NodeRecord {
  double rho = 0.0, mu = 0.0;
  double pre_rho = 0.0, pre_mu = 0.0;
  double feat_rho[kRhoFeatures] = {};
  double feat_mu[kMuFeatures] = {};
  MlpCache cache_rho, cache_mu;
  Vec v;  // projection argument of the s-update
  Eigen::LLT<Mat> llt;
};

struct Tape {
  std::vector<std::vector<NodeState>> states;  // K + 1 entries, states[0] is the initialization
  std::vector<Vec> w;                          // K + 1 global iterates
  std::vector<double> alpha;                   // K
  std::vector<std::vector<NodeRecord>> records;  // K x N

  int layers() const { return static_cast<int>(alpha.size()); }
};

struct UnrolledResult {
  std::vector<Vec> w;  // w^1 .. w^K
  Tape tape;           // empty unless recorded
};

/// Runs policy.layout.K iterations of the distributed (or, with
/// opt.centralized, the single-node) solver with penalties from the policy.
UnrolledResult forward_unrolled(const ConsensusQP& p, const Policy& policy, const UnfoldedOptions& opt,
                                bool record = true, const DqpState* init = nullptr);

/// Reverse pass. grad_w[k] is dL/dw^{k+1}; returns dL/dtheta.
Vec backward_unrolled(const ConsensusQP& p, const Policy& policy, const UnfoldedOptions& opt, const Tape& tape,
                      const std::vector<Vec>& grad_w);

/// gamma_k = exp((k - K) / 5) for k = 1..K.
std::vector<double> loss_weights(int K);

/// sum_k gamma_k ||w^k - w_star||; fills dL/dw^k when grad is given.
double training_loss(const std::vector<Vec>& w, const Vec& w_star, const std::vector<double>& gamma,
                     std::vector<Vec>* grad = nullptr);

/// Forward, loss and (when grad is given) reverse pass for one instance.
double instance_loss(const LabeledInstance& inst, const Policy& policy, const UnfoldedOptions& opt, Vec* grad = nullptr);

struct ImplicitGrad {
  Vec grad_b;
  Mat grad_Q;  // symmetric
};

/// Gradients of L(x) with Qbar x = b through the solve: grad_b = Qbar^{-1}
/// grad_x and grad_Q = -(x grad_b^T + grad_b x^T) / 2.
ImplicitGrad implicit_solve_backward(const Mat& Qbar, const Vec& x_sol, const Vec& grad_x,
                                     const LinearSolverConfig& linsys = {LinearSolver::kCholesky, 1e-12, 0});

/// Smallest distance of any recorded projection argument to a kink of its
/// row set (infinity when there are no inequality rows).
double min_projection_margin(const ConsensusQP& p, const Tape& tape);

/// Per-layer penalties the policy produced, as a schedule for dqp_solve.
Schedule tape_schedule(const Tape& tape);

/// Rejects policies whose slot count does not fit the problem.
void check_compatible(const ConsensusQP& p, const Policy& policy, const UnfoldedOptions& opt);

}  // namespace dqp
