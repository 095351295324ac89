#include "doctest.h"

#include <cmath>

#include "dqp/evaluate.hpp"
#include "dqp/generators.hpp"
#include "dqp/train.hpp"

using namespace dqp;

namespace {

std::vector<LabeledInstance> networked_set(int count, std::uint64_t seed) {
  GenSpec spec;
  spec.kind = "random_networked_qp";
  spec.grid_rows = 2;
  spec.grid_cols = 2;
  spec.n_i = 3;
  spec.m_ij = 2;
  spec.seed = seed;
  return build_dataset(spec, count).instances;
}

std::vector<LabeledInstance> centralized_set(int count, std::uint64_t seed) {
  GenSpec spec;
  spec.n = 10;
  spec.m = 8;
  spec.seed = seed;
  return build_dataset(spec, count).instances;
}

Policy shared_policy(int K, bool closed_loop, double rho) {
  PolicyLayout layout{K, 4, Sharing::kShared, closed_loop, true};
  return init_policy(layout, PolicyInit{rho, rho, 1.6, 3});
}

double max_curve_diff(const GapCurve& a, const GapCurve& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.mean.size(); ++k) d = std::max(d, std::abs(a.mean[k] - b.mean[k]));
  return d;
}

}  // namespace

TEST_CASE("adam") {
  Vec theta = Vec::Constant(3, 2.0);
  Adam frozen(3, AdamConfig{0.0});
  frozen.step(theta, Vec::Constant(3, 5.0));
  CHECK(theta == Vec::Constant(3, 2.0));
  CHECK(frozen.steps() == 1);

  // First step moves each coordinate by lr against the gradient sign.
  Adam opt(3, AdamConfig{0.1});
  Vec g(3);
  g << 1.0, -4.0, 0.5;
  opt.step(theta, g);
  CHECK(theta[0] == doctest::Approx(1.9).epsilon(1e-6));
  CHECK(theta[1] == doctest::Approx(2.1).epsilon(1e-6));

  // Minimizes a quadratic.
  Vec x = Vec::Constant(2, 3.0);
  Adam q(2, AdamConfig{0.05});
  for (int i = 0; i < 2000; ++i) q.step(x, 2.0 * x);
  CHECK(x.norm() < 1e-2);
}

TEST_CASE("percentiles and crossings") {
  CHECK(percentile({1, 2, 3, 4, 5}, 0.5) == 3.0);
  CHECK(percentile({0, 10}, 0.1) == doctest::Approx(1.0));
  CHECK(percentile({7}, 0.9) == 7.0);
  CHECK(iterations_to({1.0, 0.5, 0.2, 0.1}, 0.2) == 2);
  CHECK(iterations_to({0.1, 0.5, 0.4}, 0.2) == -1);
}

TEST_CASE("zero learning rate and zero epochs leave the policy unchanged") {
  const auto data = networked_set(6, 100);
  const Policy init = shared_policy(3, true, 1.0);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 2;
  cfg.adam.lr = 0.0;
  const TrainResult r = train(data, cfg, init);
  CHECK(r.policy.theta == init.theta);
  cfg.epochs = 0;
  cfg.adam.lr = 1e-3;
  const TrainResult r0 = train(data, cfg, init);
  CHECK(r0.policy.theta == init.theta);
  CHECK(r0.best_epoch == 0);
  CHECK(r0.log.size() == 1);
  CHECK(std::isfinite(r0.log[0].train_loss));
}

TEST_CASE("training on a singleton strictly reduces its loss") {
  const auto data = networked_set(1, 200);
  const Policy init = shared_policy(5, true, 1.0);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch = 1;
  cfg.val_fraction = 0.0;
  cfg.unfolded.fixed_mu = 1.0;
  const TrainResult r = train(data, cfg, init);
  const double before = instance_loss(data[0], init, cfg.unfolded);
  const double after = instance_loss(data[0], r.policy, cfg.unfolded);
  CHECK(after < before);
  CHECK(r.best_epoch > 0);
  CHECK(r.best_loss == doctest::Approx(after).epsilon(1e-12));
}

TEST_CASE("training is deterministic and splits are disjoint") {
  const auto data = networked_set(10, 300);
  const Policy init = shared_policy(3, true, 1.0);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch = 3;
  cfg.seed = 9;
  const TrainResult a = train(data, cfg, init);
  cfg.threads = 3;
  const TrainResult b = train(data, cfg, init);
  CHECK(a.policy.theta == b.policy.theta);
  CHECK(a.val_indices == b.val_indices);
  CHECK(a.val_indices.size() == 1);
  CHECK(a.train_indices.size() == 9);
  for (int v : a.val_indices)
    for (int t : a.train_indices) CHECK(v != t);
}

TEST_CASE("batch gradient is the mean of instance gradients") {
  const auto data = networked_set(3, 400);
  const Policy pol = shared_policy(2, true, 0.5);
  const UnfoldedOptions opt;
  Vec g;
  const double L = batch_loss(data, {0, 1, 2}, pol, opt, 2, &g);
  Vec sum = Vec::Zero(pol.theta.size());
  double lsum = 0.0;
  for (const auto& inst : data) {
    Vec gi;
    lsum += instance_loss(inst, pol, opt, &gi);
    sum += gi;
  }
  CHECK(L == doctest::Approx(lsum / 3).epsilon(1e-14));
  CHECK((g - sum / 3).cwiseAbs().maxCoeff() <= 1e-14 * (1.0 + sum.cwiseAbs().maxCoeff()));
}

TEST_CASE("learned policy at initialization matches its fixed baseline") {
  const auto test = networked_set(4, 500);
  const double rho = penalty_median("random_networked_qp");
  EvalConfig cfg;
  cfg.K = 20;
  cfg.sweep = {rho};
  cfg.adaptive = false;
  UnfoldedOptions opt;
  for (bool closed : {false, true}) {
    const Comparison cmp = compare(test, {{"learned", shared_policy(20, closed, rho)}}, opt, cfg);
    REQUIRE(cmp.curves.size() == 2);
    CHECK(max_curve_diff(cmp.curves[0], cmp.curves[1]) <= 1e-9);
  }

  // Centralized variant against the single-node solver.
  const auto ctest = centralized_set(4, 600);
  PolicyLayout layout{20, 1, Sharing::kShared, true, false};
  const Policy cpol = init_policy(layout, PolicyInit{1.0, 1.0, 1.6, 1});
  EvalConfig ccfg = cfg;
  ccfg.centralized = true;
  ccfg.sweep = {1.0};
  UnfoldedOptions copt;
  copt.centralized = true;
  copt.fixed_mu = ccfg.sigma;
  const Comparison cc = compare(ctest, {{"learned", cpol}}, copt, ccfg);
  CHECK(max_curve_diff(cc.curves[0], cc.curves[1]) <= 1e-9);
}

TEST_CASE("comparison is deterministic and reports speedups") {
  const auto test = networked_set(3, 700);
  EvalConfig cfg;
  cfg.K = 10;
  cfg.sweep = penalty_sweep("random_networked_qp");
  const Policy pol = shared_policy(10, true, 1.0);
  const Comparison a = compare(test, {{"learned", pol}}, {}, cfg);
  const Comparison b = compare(test, {{"learned", pol}}, {}, cfg);
  CHECK(curves_csv(a.curves) == curves_csv(b.curves));
  CHECK(a.curves.size() == 1 + cfg.sweep.size() + 1);
  CHECK(a.curves.back().method == "adaptive");
  REQUIRE(a.speedups.size() == 1);
  CHECK(a.speedups[0].baseline == a.best_baseline);
  CHECK(curves_csv(a.curves).rfind("method,iter,gap_mean,gap_p10,gap_p90\n", 0) == 0);
}
