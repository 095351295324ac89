#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"

#include "dqp/rng.hpp"
#include "dqp/train.hpp"

namespace dqp {

/// Diagonal Gaussian over a policy's parameters.
struct GaussianPolicy {
  Policy mean;
  Vec log_std;
};

inline constexpr double kDefaultLogStd = -4.6;

GaussianPolicy make_gaussian(const Policy& mean, double log_std = kDefaultLogStd);

/// mean + exp(log_std) * noise with noise ~ N(0, I) drawn from rng.
Policy sample_policy(const GaussianPolicy& g, Rng& rng, Vec* noise = nullptr);

/// min(||w_K - w*|| / ||w_0 - w*||, 1); empty when w_0 = w*.
std::optional<double> progress_metric(const Vec& w_K, const Vec& w_0, const Vec& w_star);

/// KL(P || P0) for diagonal Gaussians.
double kl_gaussian(const GaussianPolicy& P, const GaussianPolicy& P0);

/// KL(Ber(p) || Ber(q)) with 0 log 0 = 0; infinite when q hits 0 or 1 and p does not.
double kl_bernoulli(double p, double q);

/// sup { q in [p, 1] : kl_bernoulli(p, q) <= c } by bisection.
double kl_inverse(double p, double c);

/// kl_inverse(q_hat, log(2 / eps) / M).
double sample_convergence_bound(double q_hat, double M, double eps);

/// kl_inverse(q_bar, (kl_term + log(2 sqrt(H) / delta)) / H).
double pac_bound(double q_bar, double kl_term, double H, double delta);

struct BoundReport {
  double q_hat = 0.0;
  double q_bar = 0.0;
  double kl_term = 0.0;
  double final_bound = 0.0;
  int H = 0;
  int M = 0;
  double delta = 0.0;
  double eps = 0.0;
  int excluded = 0;  // instances with w_0 = w*
  std::optional<double> test_progress;
};

nlohmann::json bound_report_to_json(const BoundReport& r);

struct QHat {
  double value = 0.0;
  int used = 0;
  int excluded = 0;
};

/// Mean progress metric over M sampled policies and every instance. Sample j
/// is drawn from a stream keyed by (seed, j), so the result does not depend
/// on the thread count.
QHat estimate_q_hat(const GaussianPolicy& g, const std::vector<LabeledInstance>& data, int M,
                    const UnfoldedOptions& opt, std::uint64_t seed, int threads = 1);

/// Mean progress metric of a deterministic policy.
QHat mean_progress(const Policy& policy, const std::vector<LabeledInstance>& data, const UnfoldedOptions& opt,
                   int threads = 1);

/// Loss of one sampled policy on one instance; fills dloss/dtheta when asked.
using SampleLoss = std::function<double(const LabeledInstance&, const Policy&, Vec*)>;

/// Progress metric through the unrolled solver.
SampleLoss progress_loss(const UnfoldedOptions& opt);

struct PosteriorConfig {
  int epochs = 10;
  int batch = 50;
  AdamConfig adam;
  double delta = 0.009;
  std::uint64_t seed = 0;
  int threads = 1;
  UnfoldedOptions unfolded;
};

/// sqrt((KL + log(2 sqrt(H) / delta)) / (2 H)).
double bound_regularizer(double kl, int H, double delta);

/// Throws IntegrityError when the two seed sets share an element.
void check_disjoint(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b);

/// Minimizes sampled loss + bound_regularizer over (mean, log_std), starting
/// from the prior. `prior_seeds` are the instance seeds the prior saw.
GaussianPolicy train_posterior(const GaussianPolicy& prior, const std::vector<std::uint64_t>& prior_seeds,
                               const std::vector<LabeledInstance>& data, const PosteriorConfig& cfg,
                               const SampleLoss& loss = {});

}  // namespace dqp
