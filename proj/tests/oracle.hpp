#pragma once
// Independent dense reference solvers used only by the tests. Nothing here
// shares code with the library's solvers or labeler.

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "dqp/qp_model.hpp"

namespace oracle {

using dqp::Mat;
using dqp::RowKind;
using dqp::Vec;

struct Dense {
  Mat Q;
  Vec q;
  Mat A;
  Vec b;
  std::vector<RowKind> kinds;
};

inline Dense densify(const dqp::QuadProgram& p) {
  return Dense{Mat(p.Q), p.q, Mat(p.A), p.b, p.kinds};
}

/// Row j is active with sign[j] = +1 (a x = b), -1 (box lower side, a x = -b)
/// or inactive with 0. Solves the equality-constrained KKT system densely.
inline std::optional<std::pair<Vec, Vec>> solve_active(const Dense& d, const std::vector<int>& sign) {
  const int n = static_cast<int>(d.Q.rows()), m = static_cast<int>(d.A.rows());
  std::vector<int> rows;
  for (int j = 0; j < m; ++j)
    if (sign[static_cast<std::size_t>(j)] != 0) rows.push_back(j);
  const int a = static_cast<int>(rows.size());
  Mat K = Mat::Zero(n + a, n + a);
  Vec rhs = Vec::Zero(n + a);
  K.topLeftCorner(n, n) = d.Q;
  rhs.head(n) = -d.q;
  for (int r = 0; r < a; ++r) {
    const int j = rows[static_cast<std::size_t>(r)];
    const double sg = sign[static_cast<std::size_t>(j)];
    K.block(0, n + r, n, 1) = d.A.row(j).transpose();
    K.block(n + r, 0, 1, n) = d.A.row(j);
    rhs[n + r] = sg * d.b[j];
  }
  Eigen::FullPivLU<Mat> lu(K);
  if (!lu.isInvertible()) return std::nullopt;
  const Vec sol = lu.solve(rhs);
  Vec x = sol.head(n), lambda = Vec::Zero(m);
  for (int r = 0; r < a; ++r) lambda[rows[static_cast<std::size_t>(r)]] = sol[n + r];
  return std::make_pair(x, lambda);
}

/// Absolute KKT violation: stationarity, feasibility, multiplier signs and
/// complementarity, each as a max-abs value.
inline double kkt_violation(const Dense& d, const Vec& x, const Vec& lambda) {
  double v = (d.Q * x + d.q + d.A.transpose() * lambda).cwiseAbs().maxCoeff();
  const Vec ax = d.A * x;
  for (int j = 0; j < d.A.rows(); ++j) {
    const double r = ax[j], b = d.b[j], l = lambda[j];
    switch (d.kinds[static_cast<std::size_t>(j)]) {
      case RowKind::kUpper:
        v = std::max({v, r - b, -l, std::abs(l * (r - b))});
        break;
      case RowKind::kEquality:
        v = std::max(v, std::abs(r - b));
        break;
      case RowKind::kBox:
        // l > 0 needs a x = b, l < 0 needs a x = -b.
        v = std::max(v, std::abs(r) - b);
        if (l > 0.0) v = std::max(v, l * std::abs(r - b));
        if (l < 0.0) v = std::max(v, -l * std::abs(r + b));
        break;
    }
  }
  return v;
}

/// Brute-force active-set enumeration; feasible only for a handful of rows.
inline std::optional<std::pair<Vec, Vec>> enumerate(const Dense& d, double tol = 1e-9) {
  const int m = static_cast<int>(d.A.rows());
  std::vector<int> sign(static_cast<std::size_t>(m), 0);
  std::optional<std::pair<Vec, Vec>> best;
  std::function<void(int)> rec = [&](int j) {
    if (best) return;
    if (j == m) {
      auto cand = solve_active(d, sign);
      if (cand && kkt_violation(d, cand->first, cand->second) <= tol) best = cand;
      return;
    }
    std::vector<int> opts;
    switch (d.kinds[static_cast<std::size_t>(j)]) {
      case RowKind::kUpper: opts = {0, 1}; break;
      case RowKind::kEquality: opts = {1}; break;
      case RowKind::kBox: opts = {0, 1, -1}; break;
    }
    for (int o : opts) {
      sign[static_cast<std::size_t>(j)] = o;
      rec(j + 1);
    }
    sign[static_cast<std::size_t>(j)] = 0;
  };
  rec(0);
  return best;
}

/// Re-solves on the active set suggested by a candidate's multipliers, then
/// certifies the result. Empty when certification fails.
inline std::optional<std::pair<Vec, Vec>> certify_from_guess(const Dense& d, const Vec& lambda_guess, double tol) {
  const int m = static_cast<int>(d.A.rows());
  const double lscale = 1.0 + (m ? lambda_guess.cwiseAbs().maxCoeff() : 0.0);
  for (double act : {1e-9, 1e-7, 1e-5}) {
    std::vector<int> sign(static_cast<std::size_t>(m), 0);
    for (int j = 0; j < m; ++j) {
      const double l = lambda_guess[j];
      switch (d.kinds[static_cast<std::size_t>(j)]) {
        case RowKind::kEquality: sign[static_cast<std::size_t>(j)] = 1; break;
        case RowKind::kUpper: sign[static_cast<std::size_t>(j)] = l > act * lscale ? 1 : 0; break;
        case RowKind::kBox: sign[static_cast<std::size_t>(j)] = l > act * lscale ? 1 : (l < -act * lscale ? -1 : 0); break;
      }
    }
    auto cand = solve_active(d, sign);
    if (cand && kkt_violation(d, cand->first, cand->second) <= tol) return cand;
  }
  return std::nullopt;
}

/// Central-difference derivative of f along coordinate i of x.
inline double central_diff(const std::function<double(const Vec&)>& f, const Vec& x, Eigen::Index i, double h) {
  Vec xp = x, xm = x;
  xp[i] += h;
  xm[i] -= h;
  return (f(xp) - f(xm)) / (2.0 * h);
}

/// |a - b| <= rel * max(|a|, |b|), or <= abs_tol when both are below small.
inline bool grad_close(double a, double b, double rel, double abs_tol = 1e-6, double small = 1e-3) {
  const double mag = std::max(std::abs(a), std::abs(b));
  if (mag < small) return std::abs(a - b) <= abs_tol;
  return std::abs(a - b) <= rel * mag;
}

}  // namespace oracle
