#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "dqp/errors.hpp"

namespace dqp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;
using Triplet = Eigen::Triplet<double, int>;

inline bool all_finite(const Vec& v) { return v.allFinite(); }

inline void require_finite(const Vec& v, const char* what) {
  if (!v.allFinite()) throw NumericError(std::string("non-finite entries in ") + what);
}

/// Result of a conjugate-gradient solve. `converged` is false when the
/// iteration cap was hit before the tolerance; `x` is then the best iterate.
struct CgResult {
  Vec x;
  int iterations = 0;
  bool converged = false;
  double relative_residual = 0.0;
};

/// Unpreconditioned conjugate gradient for a symmetric positive-definite
/// operator given by its action `apply(in, out)`.
///
/// Stops once ||A x - b|| <= tol * ||b||. A zero right-hand side returns the
/// zero vector without iterating. `max_iter <= 0` selects 10 * dim.
///
/// Eigen matrices are excluded: their operator() is index slicing, and a
/// non-const matrix would otherwise bind here instead of the overloads below.
template <class Apply>
  requires(!std::is_base_of_v<Eigen::EigenBase<std::decay_t<Apply>>, std::decay_t<Apply>>)
CgResult cg_solve(Apply&& apply, const Vec& b, const Vec& x0, double tol, int max_iter) {
  const Eigen::Index n = b.size();
  if (x0.size() != n) throw DimensionError("cg_solve: x0 and b differ in size");
  if (!b.allFinite() || !x0.allFinite()) throw NumericError("cg_solve: non-finite input");
  if (max_iter <= 0) max_iter = static_cast<int>(10 * std::max<Eigen::Index>(n, 1));

  CgResult res;
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    res.x = Vec::Zero(n);
    res.converged = true;
    return res;
  }
  res.x = x0;
  Vec r(n), Ap(n);
  apply(res.x, Ap);
  r = b - Ap;
  double rr = r.squaredNorm();
  const double target = tol * bnorm;
  if (std::sqrt(rr) <= target) {
    res.converged = true;
    res.relative_residual = std::sqrt(rr) / bnorm;
    return res;
  }
  Vec p = r;
  for (int it = 1; it <= max_iter; ++it) {
    apply(p, Ap);
    const double pAp = p.dot(Ap);
    if (!(pAp > 0.0)) {
      // Not positive definite along p (or exact convergence in the previous
      // step produced p = 0).
      res.iterations = it - 1;
      break;
    }
    const double step = rr / pAp;
    res.x.noalias() += step * p;
    r.noalias() -= step * Ap;
    const double rr_new = r.squaredNorm();
    res.iterations = it;
    if (std::sqrt(rr_new) <= target) {
      rr = rr_new;
      res.converged = true;
      break;
    }
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  res.relative_residual = std::sqrt(rr) / bnorm;
  if (!res.x.allFinite()) throw NumericError("cg_solve: iterate diverged");
  return res;
}

CgResult cg_solve(const SpMat& A, const Vec& b, const Vec& x0, double tol, int max_iter);
CgResult cg_solve(const Mat& A, const Vec& b, const Vec& x0, double tol, int max_iter);

/// LDL^T factorization of the quasi-definite matrix
///
///     [ Q + mu I    A^T          ]
///     [ A          -diag(1/rho)  ]
///
/// reusable for any right-hand side while (mu, rho) are unchanged.
class KktFactor {
 public:
  KktFactor(const SpMat& Q, const SpMat& A, double mu, const Vec& rho);

  KktFactor(KktFactor&&) noexcept = default;
  KktFactor& operator=(KktFactor&&) noexcept = default;
  KktFactor(const KktFactor&) = delete;
  KktFactor& operator=(const KktFactor&) = delete;

  /// Solves for the stacked vector (x, nu).
  Vec solve(const Vec& rhs) const;
  void solve(const Vec& rhs_x, const Vec& rhs_nu, Vec& x, Vec& nu) const;

  int n() const { return n_; }
  int m() const { return m_; }
  double mu() const { return mu_; }
  const Vec& rho() const { return rho_; }

 private:
  int n_ = 0;
  int m_ = 0;
  double mu_ = 0.0;
  Vec rho_;
  std::unique_ptr<Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>>> ldlt_;
};

KktFactor kkt_factor(const SpMat& Q, const SpMat& A, double mu, const Vec& rho);

/// Assembles the full symmetric KKT matrix above (both triangles).
SpMat assemble_kkt(const SpMat& Q, const SpMat& A, double mu, const Vec& rho);

/// Central-difference gradient: entry i is (f(x + h e_i) - f(x - h e_i)) / 2h.
Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h);

/// Checks Q == Q^T entrywise (exact).
bool is_symmetric(const SpMat& Q);

/// Cholesky-based positive-definiteness test.
bool is_positive_definite(const SpMat& Q);

/// Q + shift * I without touching Q's storage.
SpMat add_diagonal(const SpMat& Q, double shift);

/// Sparse matrix from dense, dropping exact zeros.
SpMat to_sparse(const Mat& M);

}  // namespace dqp
