#include "doctest.h"

#include "dqp/dqp.hpp"
#include "dqp/generators.hpp"
#include "dqp/label.hpp"
#include "dqp/qp_model.hpp"
#include "dqp/rng.hpp"
#include "oracle.hpp"

using namespace dqp;

namespace {

QuadProgram block(const Mat& Q, const Vec& q, const Mat& A, const Vec& b, std::vector<RowKind> kinds) {
  QuadProgram p;
  p.Q = to_sparse(Q);
  p.q = q;
  p.A = SpMat(A.rows(), A.cols());
  if (A.size()) p.A = to_sparse(A);
  p.b = b;
  p.kinds = std::move(kinds);
  return p;
}

// 3-node chain over 4 globals: node i owns (i, i+1).
ConsensusQP random_chain(std::uint64_t seed) {
  Rng rng(seed);
  ConsensusQP c;
  c.n_global = 4;
  for (int i = 0; i < 3; ++i) {
    Mat F(2, 2), A(2, 2);
    Vec q(2), theta(2);
    for (int r = 0; r < 2; ++r) {
      q[r] = rng.normal();
      theta[r] = rng.normal();
      for (int s = 0; s < 2; ++s) {
        F(r, s) = rng.normal();
        A(r, s) = rng.normal();
      }
    }
    const Mat Q = F.transpose() * F + Mat::Identity(2, 2);
    const Vec b = A * theta + Vec::Constant(2, 0.1);
    c.blocks.push_back(block(Q, q, A, b, {RowKind::kUpper, RowKind::kUpper}));
    c.mapping.push_back({i, i + 1});
  }
  return c;
}

}  // namespace

TEST_CASE("gather reads global components through the mapping") {
  Vec w(3);
  w << 10, 20, 30;
  const Vec out = gather(w, {1, 2});
  CHECK(out[0] == 20);
  CHECK(out[1] == 30);
  CHECK(gather(w, {0, 1, 2}) == w);

  Vec w4(4);
  w4 << 1.5, 2.5, 3.5, 4.5;
  const Vec chain = gather(w4, {1, 2});
  CHECK(chain[0] == 2.5);
  CHECK(chain[1] == 3.5);

  Vec acc = Vec::Zero(4);
  scatter_add(Vec::Ones(2), {1, 2}, acc);
  scatter_add(Vec::Ones(2), {2, 3}, acc);
  CHECK(acc[0] == 0);
  CHECK(acc[2] == 2);
}

TEST_CASE("centralize of a single identity-mapped node returns the block") {
  const QuadProgram p = gen_random_qp(3, 6, 4, 2);
  const QuadProgram c = centralize(as_consensus(p));
  CHECK(Mat(c.Q) == Mat(p.Q));
  CHECK(c.q == p.q);
  CHECK(Mat(c.A) == Mat(p.A));
  CHECK(c.b == p.b);
  CHECK(c.kinds == p.kinds);
}

TEST_CASE("centralize of two nodes sharing a scalar") {
  ConsensusQP c;
  c.n_global = 1;
  for (int i = 0; i < 2; ++i) {
    c.blocks.push_back(block(Mat::Identity(1, 1), Vec::Constant(1, -1.0), Mat(0, 1), Vec(0), {}));
    c.mapping.push_back({0});
  }
  const QuadProgram g = centralize(c);
  CHECK(Mat(g.Q)(0, 0) == 2.0);
  CHECK(g.q[0] == -2.0);
  CHECK(g.m() == 0);
  const LabeledInstance inst = label_instance(c);
  CHECK(inst.w_star[0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("centralized optimum of a chain matches the distributed limit") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const ConsensusQP c = random_chain(seed);
    REQUIRE(validate(c).ok());
    const QuadProgram g = centralize(c);
    const oracle::Dense d = oracle::densify(g);
    const auto exact = oracle::enumerate(d, 1e-9);
    REQUIRE(exact.has_value());

    DqpSettings cfg;
    cfg.rho = cfg.mu = 1.0;
    cfg.alpha = 1.0;
    cfg.max_iter = 5000;
    cfg.gap_tol = 1e-9;
    const DqpResult r = dqp_solve(c, cfg, &exact->first);
    CHECK(optimality_gap(r.w, exact->first) <= 1e-6);
  }
}

TEST_CASE("optimality gap") {
  Vec ws(4);
  ws << 1, -2, 3, 0.5;
  CHECK(optimality_gap(ws, ws) == 0.0);
  CHECK(optimality_gap(ws + Vec::Ones(4), ws) == doctest::Approx(1.0).epsilon(1e-15));
  Vec off = ws;
  off[0] += 2.0;
  CHECK(optimality_gap(off, ws) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("validate diagnostics") {
  ConsensusQP c = random_chain(11);
  CHECK(validate(c).ok());

  ConsensusQP missing = c;
  missing.n_global = 5;  // index 4 has no owner
  CHECK(validate(missing).has("uncovered global component"));

  ConsensusQP asym = c;
  Mat Q = Mat(asym.blocks[1].Q);
  Q(0, 1) += 0.25;
  asym.blocks[1].Q = to_sparse(Q);
  CHECK(validate(asym).has("asymmetric Hessian"));

  ConsensusQP range = c;
  range.mapping[2] = {2, 7};
  CHECK(validate(range).has("mapping out of range"));
}

TEST_CASE("row projections and masks") {
  Vec v(3), b(3);
  v << 2.0, -3.0, 0.5;
  b << 1.0, 1.0, 1.0;
  const std::vector<RowKind> kinds{RowKind::kUpper, RowKind::kBox, RowKind::kEquality};
  Vec out, mask;
  project_rows(v, b, kinds, out);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == -1.0);
  CHECK(out[2] == 1.0);
  projection_mask(v, b, kinds, mask);
  CHECK(mask == Vec::Zero(3));
  v << 0.5, 0.2, 1.0;
  projection_mask(v, b, kinds, mask);
  CHECK(mask[0] == 1.0);
  CHECK(mask[1] == 1.0);
  CHECK(mask[2] == 0.0);
  const Vec sc = row_scale(kinds);
  CHECK(sc[2] == kEqualityRhoScale);
  CHECK(sc[0] == 1.0);
}

TEST_CASE("labeler agrees with an independent dense KKT certification") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const QuadProgram p = gen_random_qp(seed, 8, 6, 2);
    const LabelResult lab = label_program(p);
    CHECK(lab.residual <= 1e-9);
    const oracle::Dense d = oracle::densify(p);
    const auto cert = oracle::certify_from_guess(d, lab.lambda, 1e-9);
    REQUIRE(cert.has_value());
    CHECK((cert->first - lab.x).cwiseAbs().maxCoeff() <= 1e-8);
    const auto exact = oracle::enumerate(d, 1e-9);
    REQUIRE(exact.has_value());
    CHECK((exact->first - lab.x).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("kkt residual vanishes at the optimum and not elsewhere") {
  const QuadProgram p = gen_random_qp(5, 6, 5, 1);
  const LabelResult lab = label_program(p);
  CHECK(kkt_residual(p, lab.x, lab.lambda) <= 1e-9);
  CHECK(kkt_residual(p, lab.x + Vec::Constant(6, 0.1), lab.lambda) > 1e-3);
}
