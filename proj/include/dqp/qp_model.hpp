#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dqp/linalg.hpp"

namespace dqp {

/// How a constraint row a_j^T x <= b_j is read.
///   kUpper     a_j^T x <= b_j
///   kEquality  a_j^T x  = b_j   (penalty scaled by kEqualityRhoScale)
///   kBox      |a_j^T x| <= b_j  (b_j >= 0)
enum class RowKind : std::uint8_t { kUpper = 0, kEquality = 1, kBox = 2 };

inline constexpr double kEqualityRhoScale = 1e3;

const char* to_string(RowKind kind);
RowKind row_kind_from_string(const std::string& s);

/// min 1/2 x^T Q x + q^T x  s.t. rows of A x read through `kinds` against b.
struct QuadProgram {
  SpMat Q;
  Vec q;
  SpMat A;
  Vec b;
  std::vector<RowKind> kinds;

  int n() const { return static_cast<int>(Q.rows()); }
  int m() const { return static_cast<int>(A.rows()); }
  /// Row count when every equality is written as an inequality pair.
  int inequality_rows() const;
  /// Throws DimensionError on inconsistent sizes.
  void check_dims() const;
};

using CentralizedQP = QuadProgram;

/// N local programs coupled through `mapping`: local entry j of node i is the
/// global component mapping[i][j].
struct ConsensusQP {
  std::vector<QuadProgram> blocks;
  std::vector<std::vector<int>> mapping;
  int n_global = 0;

  int num_nodes() const { return static_cast<int>(blocks.size()); }
  int total_local_dim() const;
  int total_rows() const;
  int inequality_rows() const;
};

/// Single node, identity mapping.
ConsensusQP as_consensus(const QuadProgram& p);

/// out[j] = w[g[j]].
Vec gather(const Vec& w, const std::vector<int>& g);
void gather(const Vec& w, const std::vector<int>& g, Vec& out);
/// acc[g[j]] += v[j].
void scatter_add(const Vec& v, const std::vector<int>& g, Vec& acc);

/// Number of local copies of each global component.
std::vector<int> owner_counts(const ConsensusQP& p);

/// Global form: Q = sum G_i^T Q_i G_i, q = sum G_i^T q_i, A stacks A_i G_i.
/// Throws ConfigError if Q is not positive definite.
QuadProgram centralize(const ConsensusQP& p);

/// Per-row penalty multipliers (kEqualityRhoScale on equality rows, else 1).
Vec row_scale(const std::vector<RowKind>& kinds);

/// Euclidean projection onto the row set: min(v, b), b, or clamp(v, -b, b).
void project_rows(const Vec& v, const Vec& b, const std::vector<RowKind>& kinds, Vec& out);

/// 1 where the projection passes v through (strictly inside), else 0.
void projection_mask(const Vec& v, const Vec& b, const std::vector<RowKind>& kinds, Vec& mask);

struct Diagnostic {
  std::string code;
  std::string message;
};

struct Validation {
  std::vector<Diagnostic> issues;
  bool ok() const { return issues.empty(); }
  bool has(const std::string& code) const;
  std::string summary() const;
};

/// Checks dimensions, mapping coverage and range, Hessian symmetry, local
/// positive semidefiniteness and a positive definite centralized Hessian.
Validation validate(const ConsensusQP& p);
Validation validate(const QuadProgram& p);

/// Scaled first-order optimality residual of (x, lambda) for `p`: the largest
/// of stationarity, primal infeasibility, dual sign violation and
/// complementarity, each divided by the magnitude of the terms it compares.
double kkt_residual(const QuadProgram& p, const Vec& x, const Vec& lambda);

struct Metrics {
  double opt_gap = 0.0;
  double prim_res = 0.0;
  double dual_res = 0.0;
};

/// ||w - w_star||_2 / sqrt(n).
double optimality_gap(const Vec& w, const Vec& w_star);

struct LabeledInstance {
  ConsensusQP problem;
  Vec w_star;
  Vec lambda_star;  // multipliers of the centralized rows
  double label_gap = 0.0;
  std::uint64_t seed = 0;
  std::string kind;
};

Metrics optimality_metrics(const Vec& w, const LabeledInstance& inst);

}  // namespace dqp
