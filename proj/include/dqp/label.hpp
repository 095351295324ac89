#pragma once

#include "dqp/qp_model.hpp"

namespace dqp {

struct LabelSettings {
  double target_residual = 1e-9;
  int max_iter = 50000;
  int polish_every = 100;
  double rho = 0.1;
};

struct LabelResult {
  Vec x;
  Vec lambda;
  double residual = 0.0;
  int iters = 0;
};

/// Ground-truth solution: adaptive OSQP iterations alternated with an
/// active-set polish until kkt_residual <= target. Throws NumericError if the
/// target is not reached within max_iter.
LabelResult label_program(const QuadProgram& p, const LabelSettings& cfg = {});

/// Centralizes, labels and attaches w_star.
LabeledInstance label_instance(ConsensusQP problem, const LabelSettings& cfg = {});

/// Solve of the equality-constrained QP on an explicit active set; exposed for tests.
/// `active` holds +1 (row at b), -1 (box row at -b) or 0 per row.
bool polish_on_active_set(const QuadProgram& p, const std::vector<int>& active, Vec& x, Vec& lambda);

}  // namespace dqp
