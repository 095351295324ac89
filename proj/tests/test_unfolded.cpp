#include "doctest.h"

#include <cmath>

#include "dqp/generators.hpp"
#include "dqp/label.hpp"
#include "dqp/rng.hpp"
#include "dqp/unfolded.hpp"
#include "oracle.hpp"

using namespace dqp;

namespace {

LabeledInstance small_networked(std::uint64_t seed, int rows, int cols, int n_i, int m_ij) {
  return label_instance(gen_random_networked_qp(seed, rows, cols, n_i, m_ij, 0));
}

LabeledInstance small_centralized(std::uint64_t seed, int n, int m) {
  LabeledInstance inst = label_instance(as_consensus(gen_random_qp(seed, n, m, 0)));
  inst.kind = "random_qp";
  return inst;
}

Policy random_policy(const PolicyLayout& L, std::uint64_t seed, double rho, double mu) {
  Policy p = init_policy(L, PolicyInit{rho, mu, 1.6, seed});
  // Nonzero output layers and spread raw values so every path carries gradient.
  Rng rng(seed, 99);
  for (Eigen::Index i = 0; i < p.theta.size(); ++i) p.theta[i] += 0.3 * rng.normal();
  return p;
}

struct GradCheck {
  int checked = 0;
  int failed = 0;
  double worst = 0.0;
};

GradCheck check_all(const LabeledInstance& inst, const Policy& pol, const UnfoldedOptions& opt, double rel) {
  Vec g;
  instance_loss(inst, pol, opt, &g);
  auto f = [&](const Vec& th) {
    Policy q = pol;
    q.theta = th;
    return instance_loss(inst, q, opt);
  };
  GradCheck out;
  for (Eigen::Index i = 0; i < pol.theta.size(); ++i) {
    const double fd = oracle::central_diff(f, pol.theta, i, 1e-6);
    ++out.checked;
    const double mag = std::max(std::abs(fd), std::abs(g[i]));
    if (mag > 0.0) out.worst = std::max(out.worst, std::abs(fd - g[i]) / std::max(mag, 1e-3));
    if (!oracle::grad_close(g[i], fd, rel)) ++out.failed;
  }
  return out;
}

// Problem and policy far enough from projection kinks for finite differences.
bool clear_of_kinks(const LabeledInstance& inst, const Policy& pol, const UnfoldedOptions& opt) {
  UnrolledResult r = forward_unrolled(inst.problem, pol, opt, true);
  return min_projection_margin(inst.problem, r.tape) > 1e-6;
}

}  // namespace

TEST_CASE("transforms") {
  CHECK(softplus(0.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(alpha_from_raw(0.0) == 1.5);
  CHECK(softplus(softplus_inverse(0.3)) == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(alpha_from_raw(alpha_raw(1.6)) == doctest::Approx(1.6).epsilon(1e-14));
  Rng rng(5);
  for (int i = 0; i < 2000; ++i) {
    const double raw = rng.uniform(-1e6, 1e6);
    CHECK(penalty_from_raw(raw) > 0.0);
    const double a = alpha_from_raw(raw);
    CHECK(a > 1.0);
    CHECK(a < 2.0);
  }
  CHECK(penalty_from_raw(-1e6) > 0.0);
  CHECK(alpha_from_raw(1e6) < 2.0);
  CHECK(alpha_from_raw(-1e6) > 1.0);
}

TEST_CASE("mlp forward and backward") {
  Vec w = Vec::Zero(mlp_size(kRhoFeatures));
  Vec in(4);
  in << 0.3, -1.2, 2.0, 0.1;
  CHECK(mlp_forward(w, in) == 0.0);
  CHECK_THROWS_AS(mlp_forward(w, Vec::Zero(3)), DimensionError);
  CHECK_THROWS_AS(mlp_forward(Vec::Zero(mlp_size(kMuFeatures)), in), DimensionError);

  Rng rng(11);
  for (int in_dim : {kRhoFeatures, kMuFeatures}) {
    Vec wr(mlp_size(in_dim)), x(in_dim);
    for (Eigen::Index i = 0; i < wr.size(); ++i) wr[i] = 0.5 * rng.normal();
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = rng.normal();
    MlpCache cache;
    mlp_forward(wr.data(), in_dim, x.data(), &cache);
    Vec gw = Vec::Zero(wr.size());
    double gin[kRhoFeatures] = {};
    mlp_backward(wr.data(), in_dim, cache, 1.0, gw.data(), gin);
    auto fw = [&](const Vec& ww) { return mlp_forward(ww.data(), in_dim, x.data(), nullptr); };
    for (Eigen::Index i = 0; i < wr.size(); ++i)
      CHECK(oracle::grad_close(gw[i], oracle::central_diff(fw, wr, i, 1e-6), 1e-5, 1e-8));
    auto fx = [&](const Vec& xx) { return mlp_forward(wr.data(), in_dim, xx.data(), nullptr); };
    for (int j = 0; j < in_dim; ++j) CHECK(oracle::grad_close(gin[j], oracle::central_diff(fx, x, j, 1e-6), 1e-5, 1e-8));
    // Lipschitz sanity: small input moves give small output moves.
    Vec x2 = x;
    x2[0] += 1e-7;
    CHECK(std::abs(fx(x2) - fx(x)) < 1e-4);
  }
}

TEST_CASE("policy layout and checkpoint round trip") {
  PolicyLayout L{3, 4, Sharing::kLocal, true, true};
  CHECK(L.slots() == 4);
  CHECK(L.slot_size() == 2 + mlp_size(4) + mlp_size(2));
  CHECK(mlp_size(4) == 369);
  CHECK(mlp_size(2) == 337);
  Policy p = random_policy(L, 3, 1.0, 1.0);
  Policy q = policy_from_json(nlohmann::json::parse(policy_to_json(p).dump()));
  CHECK(q.layout == p.layout);
  CHECK((q.theta.array() == p.theta.array()).all());

  Policy init = init_policy(PolicyLayout{2, 1, Sharing::kShared, true, true}, PolicyInit{30.0, 30.0, 1.6, 0});
  CHECK(softplus(init.theta[init.layout.rho_index(0, 0)]) == doctest::Approx(30.0));
  CHECK(alpha_from_raw(init.theta[init.layout.alpha_index(1)]) == doctest::Approx(1.6));
  CHECK(resize_nodes(init, 64).layout.nodes == 64);
  CHECK_THROWS_AS(resize_nodes(p, 5), ConfigError);
}

TEST_CASE("training loss") {
  const auto gamma = loss_weights(2);
  CHECK(gamma[0] == doctest::Approx(std::exp(-0.2)));
  CHECK(gamma[0] == doctest::Approx(0.8187).epsilon(1e-4));
  CHECK(gamma[1] == 1.0);
  Vec ws(2);
  ws << 1.0, 1.0;
  Vec w1(2);
  w1 << 4.0, 5.0;
  CHECK(training_loss({w1}, ws, loss_weights(1)) == doctest::Approx(5.0));
  CHECK(training_loss({ws, ws}, ws, gamma) == 0.0);
}

TEST_CASE("implicit solve backward") {
  SUBCASE("identity example") {
    Vec b(3);
    b << 1.0, -2.0, 0.5;
    const Mat I = Mat::Identity(3, 3);
    ImplicitGrad g = implicit_solve_backward(I, b, b);
    CHECK((g.grad_b - b).norm() < 1e-15);
    CHECK((g.grad_Q + b * b.transpose()).norm() < 1e-15);
    // <grad_Q, E> = -b^T E b for symmetric E.
    Mat E = Mat::Zero(3, 3);
    E(0, 1) = E(1, 0) = 1.0;
    E(2, 2) = 0.5;
    auto L = [&](double t) {
      const Vec x = (I + t * E).llt().solve(b);
      return 0.5 * x.squaredNorm();
    };
    const double fd = (L(1e-6) - L(-1e-6)) / 2e-6;
    CHECK(fd == doctest::Approx(-b.dot(E * b)).epsilon(1e-7));
    CHECK((g.grad_Q.cwiseProduct(E)).sum() == doctest::Approx(fd).epsilon(1e-7));
  }
  SUBCASE("zero gradient") {
    ImplicitGrad g = implicit_solve_backward(Mat::Identity(2, 2) * 3.0, Vec::Ones(2), Vec::Zero(2));
    CHECK(g.grad_b.norm() == 0.0);
    CHECK(g.grad_Q.norm() == 0.0);
  }
  SUBCASE("random SPD against finite differences") {
    Rng rng(21);
    for (const auto kind : {LinearSolver::kCholesky, LinearSolver::kIndirect}) {
      Mat B(5, 5);
      for (Eigen::Index i = 0; i < B.size(); ++i) B.data()[i] = rng.normal();
      const Mat Q = B * B.transpose() + Mat::Identity(5, 5);
      Vec b(5), c(5);
      for (int i = 0; i < 5; ++i) {
        b[i] = rng.normal();
        c[i] = rng.normal();
      }
      // L(x) = c^T x + |x|^2 / 2.
      auto loss = [&](const Mat& M, const Vec& rhs) {
        const Vec x = M.llt().solve(rhs);
        return c.dot(x) + 0.5 * x.squaredNorm();
      };
      const Vec x = Q.llt().solve(b);
      ImplicitGrad g = implicit_solve_backward(Q, x, c + x, {kind, 1e-14, 0});
      for (int i = 0; i < 5; ++i) {
        Vec bp = b, bm = b;
        bp[i] += 1e-6;
        bm[i] -= 1e-6;
        CHECK(oracle::grad_close(g.grad_b[i], (loss(Q, bp) - loss(Q, bm)) / 2e-6, 1e-5, 1e-8));
        for (int j = 0; j <= i; ++j) {
          Mat E = Mat::Zero(5, 5);
          E(i, j) = E(j, i) = 1.0;
          const double fd = (loss(Q + 1e-6 * E, b) - loss(Q - 1e-6 * E, b)) / 2e-6;
          const double an = (g.grad_Q.cwiseProduct(E)).sum();
          CHECK(oracle::grad_close(an, fd, 1e-5, 1e-8));
        }
      }
    }
  }
}

TEST_CASE("forward reductions") {
  const LabeledInstance inst = small_networked(3, 2, 2, 4, 2);
  const int N = inst.problem.num_nodes();
  UnfoldedOptions opt;

  SUBCASE("K = 0 returns the initialization") {
    Policy p = init_policy(PolicyLayout{0, N, Sharing::kShared, true, true}, {});
    UnrolledResult r = forward_unrolled(inst.problem, p, opt);
    CHECK(r.w.empty());
    CHECK(r.tape.layers() == 0);
    CHECK(r.tape.w.size() == 1);
    CHECK(r.tape.w[0].norm() == 0.0);
  }
  SUBCASE("policy penalties replayed through dqp_solve give identical iterates") {
    Policy p = random_policy(PolicyLayout{6, N, Sharing::kLocal, true, true}, 4, 1.0, 1.0);
    UnrolledResult r = forward_unrolled(inst.problem, p, opt);
    const Schedule sched = tape_schedule(r.tape);
    DqpSettings s;
    s.linsys = opt.linsys;
    s.max_iter = 6;
    DqpResult d = dqp_solve(inst.problem, s, nullptr, &sched);
    CHECK(d.iters == 6);
    CHECK((d.w.array() == r.w.back().array()).all());
  }
  SUBCASE("open-loop constant policy matches fixed-parameter dqp_solve") {
    Policy p = init_policy(PolicyLayout{10, N, Sharing::kShared, false, true}, PolicyInit{1.0, 1.0, 1.6, 0});
    UnrolledResult r = forward_unrolled(inst.problem, p, opt);
    DqpSettings s;
    s.rho = penalty_from_raw(p.theta[p.layout.rho_index(0, 0)]);
    s.mu = penalty_from_raw(p.theta[p.layout.mu_index(0, 0)]);
    s.alpha = alpha_from_raw(p.theta[p.layout.alpha_index(0)]);
    s.linsys = opt.linsys;
    s.max_iter = 10;
    DqpResult d = dqp_solve(inst.problem, s);
    CHECK((d.w.array() == r.w.back().array()).all());
  }
  SUBCASE("zeroed output layers reproduce open loop exactly") {
    Policy closed = init_policy(PolicyLayout{5, N, Sharing::kShared, true, true}, PolicyInit{1.0, 1.0, 1.6, 9});
    Policy open = init_policy(PolicyLayout{5, N, Sharing::kShared, false, true}, PolicyInit{1.0, 1.0, 1.6, 9});
    UnrolledResult a = forward_unrolled(inst.problem, closed, opt, false);
    UnrolledResult b = forward_unrolled(inst.problem, open, opt, false);
    for (int k = 0; k < 5; ++k) CHECK((a.w[static_cast<std::size_t>(k)].array() == b.w[static_cast<std::size_t>(k)].array()).all());
  }
  SUBCASE("deterministic") {
    Policy p = random_policy(PolicyLayout{4, N, Sharing::kShared, true, true}, 8, 1.0, 1.0);
    UnrolledResult a = forward_unrolled(inst.problem, p, opt);
    UnrolledResult b = forward_unrolled(inst.problem, p, opt);
    CHECK((a.w.back().array() == b.w.back().array()).all());
    CHECK((a.tape.w.back().array() == a.w.back().array()).all());
  }
  SUBCASE("local policy with the wrong node count is rejected") {
    Policy p = init_policy(PolicyLayout{2, N + 1, Sharing::kLocal, true, true}, {});
    CHECK_THROWS_AS(forward_unrolled(inst.problem, p, opt), ConfigError);
  }
}

TEST_CASE("single-node distributed policy matches the centralized one") {
  const LabeledInstance inst = small_centralized(5, 8, 6);
  const double mu = 1e-6;
  Policy dist = init_policy(PolicyLayout{20, 1, Sharing::kShared, false, true}, PolicyInit{1.0, mu, 1.6, 0});
  Policy cent = init_policy(PolicyLayout{20, 1, Sharing::kShared, false, false}, PolicyInit{1.0, mu, 1.6, 0});
  UnfoldedOptions od, oc;
  oc.centralized = true;
  oc.fixed_mu = penalty_from_raw(dist.theta[dist.layout.mu_index(0, 0)]);
  UnrolledResult a = forward_unrolled(inst.problem, dist, od, false);
  UnrolledResult b = forward_unrolled(inst.problem, cent, oc, false);
  double worst = 0.0;
  for (std::size_t k = 0; k < a.w.size(); ++k) worst = std::max(worst, (a.w[k] - b.w[k]).cwiseAbs().maxCoeff());
  CHECK(worst <= 1e-12);
}

TEST_CASE("reverse pass against finite differences") {
  UnfoldedOptions opt;
  SUBCASE("K = 1 open-loop centralized, rho raw") {
    LabeledInstance inst = small_centralized(2, 2, 3);
    UnfoldedOptions oc;
    oc.centralized = true;
    Policy p = init_policy(PolicyLayout{1, 1, Sharing::kShared, false, false}, PolicyInit{0.7, 1.0, 1.6, 0});
    Vec g;
    instance_loss(inst, p, oc, &g);
    auto f = [&](const Vec& th) {
      Policy q = p;
      q.theta = th;
      return instance_loss(inst, q, oc);
    };
    const int ir = p.layout.rho_index(0, 0);
    CHECK(oracle::grad_close(g[ir], oracle::central_diff(f, p.theta, ir, 1e-6), 1e-4));
  }
  SUBCASE("K = 2 open-loop centralized, alpha raw") {
    LabeledInstance inst = small_centralized(6, 4, 5);
    UnfoldedOptions oc;
    oc.centralized = true;
    Policy p = init_policy(PolicyLayout{2, 1, Sharing::kShared, false, false}, PolicyInit{0.5, 1.0, 1.6, 0});
    Vec g;
    instance_loss(inst, p, oc, &g);
    auto f = [&](const Vec& th) {
      Policy q = p;
      q.theta = th;
      return instance_loss(inst, q, oc);
    };
    for (int k = 0; k < 2; ++k) {
      const int ia = p.layout.alpha_index(k);
      CHECK(oracle::grad_close(g[ia], oracle::central_diff(f, p.theta, ia, 1e-6), 1e-4));
    }
  }
  SUBCASE("zero loss gradient gives zero parameter gradient") {
    LabeledInstance inst = small_networked(4, 1, 2, 3, 2);
    Policy p = random_policy(PolicyLayout{3, 2, Sharing::kLocal, true, true}, 1, 1.0, 1.0);
    UnrolledResult r = forward_unrolled(inst.problem, p, opt);
    std::vector<Vec> zero(3, Vec::Zero(inst.problem.n_global));
    CHECK(backward_unrolled(inst.problem, p, opt, r.tape, zero).norm() == 0.0);
  }
  SUBCASE("every parameter, closed-loop, local and shared") {
    for (const Sharing sh : {Sharing::kLocal, Sharing::kShared}) {
      int used = 0;
      for (std::uint64_t seed = 1; used < 2 && seed < 40; ++seed) {
        LabeledInstance inst = small_networked(seed, 1, 3, 3, 2);
        Policy p = random_policy(PolicyLayout{3, 3, sh, true, true}, seed, 1.0, 1.0);
        if (!clear_of_kinks(inst, p, opt)) continue;
        ++used;
        const GradCheck gc = check_all(inst, p, opt, 1e-4);
        INFO("seed " << seed << " worst " << gc.worst);
        CHECK(gc.failed == 0);
      }
      CHECK(used == 2);
    }
  }
  SUBCASE("indirect solves agree with the factorized reverse pass") {
    LabeledInstance inst = small_networked(7, 2, 2, 4, 2);
    Policy p = random_policy(PolicyLayout{4, 4, Sharing::kShared, true, true}, 7, 1.0, 1.0);
    UnfoldedOptions ocg;
    ocg.linsys = {LinearSolver::kIndirect, 1e-13, 0};
    Vec g1, g2;
    const double l1 = instance_loss(inst, p, opt, &g1);
    const double l2 = instance_loss(inst, p, ocg, &g2);
    CHECK(l1 == doctest::Approx(l2).epsilon(1e-8));
    CHECK((g1 - g2).norm() <= 1e-6 * (1.0 + g1.norm()));
  }
}

TEST_CASE("shared policies are invariant to node relabeling") {
  LabeledInstance inst = small_networked(12, 2, 3, 3, 2);
  Policy p = random_policy(PolicyLayout{5, 6, Sharing::kShared, true, true}, 12, 1.0, 1.0);
  LabeledInstance perm = inst;
  const std::vector<int> order = {4, 2, 5, 0, 3, 1};
  for (std::size_t i = 0; i < order.size(); ++i) {
    perm.problem.blocks[i] = inst.problem.blocks[static_cast<std::size_t>(order[i])];
    perm.problem.mapping[i] = inst.problem.mapping[static_cast<std::size_t>(order[i])];
  }
  UnfoldedOptions opt;
  CHECK(instance_loss(inst, p, opt) == doctest::Approx(instance_loss(perm, p, opt)).epsilon(1e-10));
}
