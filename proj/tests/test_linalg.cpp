#include "doctest.h"

#include <Eigen/LU>

#include "dqp/linalg.hpp"
#include "dqp/rng.hpp"

using namespace dqp;

namespace {

Mat random_spd(Rng& rng, int n) {
  Mat M(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) M(i, j) = rng.normal();
  return M.transpose() * M + Mat::Identity(n, n);
}

Vec random_vec(Rng& rng, int n) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

}  // namespace

TEST_CASE("cg_solve on identity converges in one iteration") {
  Mat A = Mat::Identity(2, 2);
  Vec b(2);
  b << 1, 2;
  CgResult r = cg_solve(A, b, Vec::Zero(2), 1e-12, 0);
  CHECK(r.converged);
  CHECK(r.iterations == 1);
  CHECK(r.x[0] == doctest::Approx(1.0));
  CHECK(r.x[1] == doctest::Approx(2.0));
}

TEST_CASE("cg_solve on a diagonal system") {
  Mat A = 2.0 * Mat::Identity(2, 2);
  Vec b(2);
  b << 2, 4;
  CgResult r = cg_solve(A, b, Vec::Zero(2), 1e-12, 0);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(r.x[1] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("cg_solve matches the 2x2 closed form") {
  Mat A(2, 2);
  A << 4, 1, 1, 3;
  Vec b(2);
  b << 1, 2;
  // Cramer's rule.
  const double det = A(0, 0) * A(1, 1) - A(0, 1) * A(1, 0);
  const double x0 = (b[0] * A(1, 1) - A(0, 1) * b[1]) / det;
  const double x1 = (A(0, 0) * b[1] - b[0] * A(1, 0)) / det;
  CgResult r = cg_solve(A, b, Vec::Zero(2), 1e-14, 0);
  CHECK(std::abs(r.x[0] - x0) < 1e-13);
  CHECK(std::abs(r.x[1] - x1) < 1e-13);
  CHECK(std::abs(x0 - 1.0 / 11.0) < 1e-15);
  CHECK(std::abs(x1 - 7.0 / 11.0) < 1e-15);
}

TEST_CASE("cg_solve on random SPD systems meets tolerance within dim+5 iterations") {
  Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(20));
    const Mat A = random_spd(rng, n);
    const Vec b = random_vec(rng, n);
    CgResult r = cg_solve(A, b, Vec::Zero(n), 1e-12, 0);
    CHECK(r.converged);
    CHECK((A * r.x - b).norm() <= 1e-12 * b.norm());
    CHECK(r.iterations <= n + 5);
  }
}

TEST_CASE("cg_solve warm start at the solution needs no iterations") {
  Rng rng(3);
  const Mat A = random_spd(rng, 6);
  const Vec b = random_vec(rng, 6);
  const Vec x = A.llt().solve(b);
  CgResult r = cg_solve(A, b, x, 1e-10, 0);
  CHECK(r.iterations == 0);
  CHECK(r.converged);
}

TEST_CASE("cg_solve flags the iteration cap instead of failing") {
  Rng rng(5);
  const Mat A = random_spd(rng, 15);
  const Vec b = random_vec(rng, 15);
  CgResult r = cg_solve(A, b, Vec::Zero(15), 1e-14, 2);
  CHECK_FALSE(r.converged);
  CHECK(r.iterations == 2);
  CHECK(r.x.allFinite());
}

TEST_CASE("cg_solve rejects bad input") {
  Mat A = Mat::Identity(2, 2);
  Vec b(2);
  b << 1, std::nan("");
  CHECK_THROWS_AS(cg_solve(A, b, Vec::Zero(2), 1e-8, 0), NumericError);
  CHECK_THROWS_AS(cg_solve(A, Vec::Ones(3), Vec::Zero(3), 1e-8, 0), DimensionError);
  CHECK_THROWS_AS(cg_solve(A, Vec::Ones(2), Vec::Zero(3), 1e-8, 0), DimensionError);
}

TEST_CASE("kkt_factor scalar examples") {
  SpMat Q = to_sparse(Mat::Identity(1, 1));
  SpMat A = to_sparse(Mat::Ones(1, 1));
  KktFactor f = kkt_factor(Q, A, 1.0, Vec::Ones(1));
  Vec zero = f.solve(Vec::Zero(2));
  CHECK(zero.norm() == 0.0);
  Vec rhs(2);
  rhs << 3, 0;
  Vec sol = f.solve(rhs);
  // Dense oracle of [[2,1],[1,-1]].
  Mat K(2, 2);
  K << 2, 1, 1, -1;
  Vec ref = K.fullPivLu().solve(rhs);
  CHECK(std::abs(sol[0] - ref[0]) < 1e-14);
  CHECK(std::abs(sol[1] - ref[1]) < 1e-14);
  CHECK(std::abs(sol[0] - 1.0) < 1e-14);
  CHECK(std::abs(sol[1] - 1.0) < 1e-14);
}

TEST_CASE("kkt_factor depends on rho") {
  SpMat Q = to_sparse(Mat::Identity(1, 1));
  SpMat A = to_sparse(Mat::Ones(1, 1));
  Vec rhs(2);
  rhs << 0.7, -0.4;
  Vec a = kkt_factor(Q, A, 1.0, Vec::Ones(1)).solve(rhs);
  Vec b = kkt_factor(Q, A, 1.0, Vec::Constant(1, 5.0)).solve(rhs);
  CHECK((a - b).norm() > 0.0);
}

TEST_CASE("kkt_factor agrees with a dense solve") {
  Rng rng(21);
  for (int trial = 0; trial < 25; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(30));
    const int m = static_cast<int>(rng.below(20));
    Mat Qd = random_spd(rng, n);
    Mat Ad(m, n);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) Ad(i, j) = rng.bernoulli(0.4) ? rng.normal() : 0.0;
    Vec rho(m);
    for (int j = 0; j < m; ++j) rho[j] = rng.uniform(0.1, 10.0);
    const double mu = rng.uniform(0.1, 3.0);
    Mat K = Mat::Zero(n + m, n + m);
    K.topLeftCorner(n, n) = Qd + mu * Mat::Identity(n, n);
    K.topRightCorner(n, m) = Ad.transpose();
    K.bottomLeftCorner(m, n) = Ad;
    for (int j = 0; j < m; ++j) K(n + j, n + j) = -1.0 / rho[j];
    const Vec rhs = random_vec(rng, n + m);
    const Vec ref = K.fullPivLu().solve(rhs);
    const Vec sol = kkt_factor(to_sparse(Qd), to_sparse(Ad), mu, rho).solve(rhs);
    CHECK((sol - ref).norm() <= 1e-9 * std::max(1.0, ref.norm()));
  }
}

TEST_CASE("kkt_factor rejects invalid penalties") {
  SpMat Q = to_sparse(Mat::Identity(2, 2));
  SpMat A = to_sparse(Mat::Ones(1, 2));
  CHECK_THROWS_AS(kkt_factor(Q, A, 0.0, Vec::Ones(1)), ConfigError);
  CHECK_THROWS_AS(kkt_factor(Q, A, 1.0, Vec::Zero(1)), ConfigError);
  CHECK_THROWS_AS(kkt_factor(Q, A, 1.0, Vec::Ones(2)), DimensionError);
}

TEST_CASE("finite_diff_grad examples") {
  Vec x(2);
  x << 1, 2;
  Vec g = finite_diff_grad([](const Vec& v) { return 0.5 * v.squaredNorm(); }, x, 1e-5);
  CHECK(std::abs(g[0] - 1.0) < 1e-8);
  CHECK(std::abs(g[1] - 2.0) < 1e-8);
  Vec c = finite_diff_grad([](const Vec&) { return 4.2; }, x, 1e-5);
  CHECK(c.norm() == 0.0);
  Vec y(2);
  y << 3, 4;
  Vec h = finite_diff_grad([](const Vec& v) { return v[0] * v[1]; }, y, 1e-5);
  CHECK(std::abs(h[0] - 4.0) < 1e-8);
  CHECK(std::abs(h[1] - 3.0) < 1e-8);
  CHECK_THROWS_AS(finite_diff_grad([](const Vec&) { return std::nan(""); }, y, 1e-5), NumericError);
}

TEST_CASE("finite_diff_grad matches analytic quadratic gradients") {
  Rng rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(8));
    const Mat A = random_spd(rng, n);
    const Vec c = random_vec(rng, n);
    const Vec x = random_vec(rng, n);
    auto f = [&](const Vec& v) { return 0.5 * v.dot(A * v) + c.dot(v); };
    const Vec g = finite_diff_grad(f, x, 1e-5);
    const Vec exact = A * x + c;
    CHECK((g - exact).norm() <= 1e-6 * exact.norm());
  }
}

TEST_CASE("symmetry and definiteness checks") {
  Mat M(2, 2);
  M << 2, 1, 0, 2;
  CHECK_FALSE(is_symmetric(to_sparse(M)));
  M(1, 0) = 1;
  CHECK(is_symmetric(to_sparse(M)));
  CHECK(is_positive_definite(to_sparse(M)));
  M << 1, 2, 2, 1;
  CHECK_FALSE(is_positive_definite(to_sparse(M)));
}

TEST_CASE("rng streams are deterministic and distinct") {
  Rng a(42), b(42), c(43), d(42, 1);
  for (int i = 0; i < 5; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    CHECK(va != c.next_u64());
    CHECK(va != d.next_u64());
  }
  Rng r(1);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sq / n - 1.0) < 0.05);
}
