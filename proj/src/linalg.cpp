#include "dqp/linalg.hpp"

#include <Eigen/Cholesky>

namespace dqp {

CgResult cg_solve(const SpMat& A, const Vec& b, const Vec& x0, double tol, int max_iter) {
  if (A.rows() != A.cols() || A.rows() != b.size()) throw DimensionError("cg_solve: operator/rhs size mismatch");
  return cg_solve([&A](const Vec& in, Vec& out) { out.noalias() = A * in; }, b, x0, tol, max_iter);
}

CgResult cg_solve(const Mat& A, const Vec& b, const Vec& x0, double tol, int max_iter) {
  if (A.rows() != A.cols() || A.rows() != b.size()) throw DimensionError("cg_solve: operator/rhs size mismatch");
  return cg_solve([&A](const Vec& in, Vec& out) { out.noalias() = A * in; }, b, x0, tol, max_iter);
}

SpMat assemble_kkt(const SpMat& Q, const SpMat& A, double mu, const Vec& rho) {
  const int n = static_cast<int>(Q.rows());
  const int m = static_cast<int>(A.rows());
  std::vector<Triplet> trips;
  trips.reserve(static_cast<size_t>(Q.nonZeros() + 2 * A.nonZeros() + n + m));
  for (int c = 0; c < Q.outerSize(); ++c)
    for (SpMat::InnerIterator it(Q, c); it; ++it) trips.emplace_back(it.row(), it.col(), it.value());
  for (int i = 0; i < n; ++i) trips.emplace_back(i, i, mu);
  for (int c = 0; c < A.outerSize(); ++c)
    for (SpMat::InnerIterator it(A, c); it; ++it) {
      trips.emplace_back(n + it.row(), it.col(), it.value());
      trips.emplace_back(it.col(), n + it.row(), it.value());
    }
  for (int j = 0; j < m; ++j) trips.emplace_back(n + j, n + j, -1.0 / rho[j]);
  SpMat K(n + m, n + m);
  K.setFromTriplets(trips.begin(), trips.end());
  return K;
}

KktFactor::KktFactor(const SpMat& Q, const SpMat& A, double mu, const Vec& rho)
    : n_(static_cast<int>(Q.rows())), m_(static_cast<int>(A.rows())), mu_(mu), rho_(rho) {
  if (Q.rows() != Q.cols()) throw DimensionError("kkt_factor: Q not square");
  if (A.rows() > 0 && A.cols() != Q.rows()) throw DimensionError("kkt_factor: A columns differ from Q size");
  if (rho.size() != A.rows()) throw DimensionError("kkt_factor: rho length differs from constraint count");
  if (!(mu > 0.0)) throw ConfigError("kkt_factor: mu must be positive");
  for (Eigen::Index j = 0; j < rho.size(); ++j)
    if (!(rho[j] > 0.0) || !std::isfinite(rho[j])) throw ConfigError("kkt_factor: rho must be positive");

  SpMat K = assemble_kkt(Q, A.rows() > 0 ? A : SpMat(0, Q.rows()), mu, rho);
  ldlt_ = std::make_unique<Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>>>();
  ldlt_->compute(K);
  if (ldlt_->info() != Eigen::Success) throw NumericError("kkt_factor: factorization breakdown");
  // A quasi-definite matrix has exactly n positive and m negative pivots.
  const Vec d = ldlt_->vectorD();
  int pos = 0;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (!std::isfinite(d[i]) || d[i] == 0.0) throw NumericError("kkt_factor: zero or non-finite pivot");
    if (d[i] > 0.0) ++pos;
  }
  if (pos != n_) throw NumericError("kkt_factor: inertia mismatch (Q not positive semidefinite or not symmetric)");
}

Vec KktFactor::solve(const Vec& rhs) const {
  if (rhs.size() != n_ + m_) throw DimensionError("KktFactor::solve: rhs size mismatch");
  Vec sol = ldlt_->solve(rhs);
  if (!sol.allFinite()) throw NumericError("KktFactor::solve: non-finite solution");
  return sol;
}

void KktFactor::solve(const Vec& rhs_x, const Vec& rhs_nu, Vec& x, Vec& nu) const {
  Vec rhs(n_ + m_);
  rhs << rhs_x, rhs_nu;
  const Vec sol = solve(rhs);
  x = sol.head(n_);
  nu = sol.tail(m_);
}

KktFactor kkt_factor(const SpMat& Q, const SpMat& A, double mu, const Vec& rho) { return KktFactor(Q, A, mu, rho); }

Vec finite_diff_grad(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  if (!(h > 0.0)) throw ConfigError("finite_diff_grad: step must be positive");
  Vec g(x.size());
  Vec xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + h;
    const double fp = f(xp);
    xp[i] = orig - h;
    const double fm = f(xp);
    xp[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) throw NumericError("finite_diff_grad: non-finite function value");
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

bool is_symmetric(const SpMat& Q) {
  if (Q.rows() != Q.cols()) return false;
  SpMat diff = SpMat(Q.transpose()) - Q;
  diff.prune(0.0);
  return diff.nonZeros() == 0;
}

bool is_positive_definite(const SpMat& Q) {
  if (Q.rows() != Q.cols()) return false;
  if (Q.rows() == 0) return true;
  Eigen::SimplicialLLT<SpMat> llt(Q);
  if (llt.info() != Eigen::Success) return false;
  // SimplicialLLT may succeed on tiny negative pivots; guard via the diagonal.
  const SpMat L = llt.matrixL();
  for (int i = 0; i < L.rows(); ++i)
    if (!(L.coeff(i, i) > 0.0)) return false;
  return true;
}

SpMat add_diagonal(const SpMat& Q, double shift) {
  SpMat I(Q.rows(), Q.cols());
  I.setIdentity();
  return Q + shift * I;
}

SpMat to_sparse(const Mat& M) {
  std::vector<Triplet> trips;
  for (Eigen::Index c = 0; c < M.cols(); ++c)
    for (Eigen::Index r = 0; r < M.rows(); ++r)
      if (M(r, c) != 0.0) trips.emplace_back(static_cast<int>(r), static_cast<int>(c), M(r, c));
  SpMat S(M.rows(), M.cols());
  S.setFromTriplets(trips.begin(), trips.end());
  return S;
}

}  // namespace dqp
