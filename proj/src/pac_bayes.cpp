#include "dqp/pac_bayes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "dqp/parallel.hpp"
#include "dqp/rng.hpp"

namespace dqp {

GaussianPolicy make_gaussian(const Policy& mean, double log_std) {
  if (!std::isfinite(log_std)) throw ConfigError("log_std must be finite");
  return GaussianPolicy{mean, Vec::Constant(mean.theta.size(), log_std)};
}

Policy sample_policy(const GaussianPolicy& g, Rng& rng, Vec* noise) {
  if (g.log_std.size() != g.mean.theta.size()) throw DimensionError("gaussian policy: log_std size mismatch");
  Vec e(g.log_std.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = rng.normal();
  Policy p = g.mean;
  p.theta += g.log_std.array().exp().matrix().cwiseProduct(e);
  if (noise) *noise = std::move(e);
  return p;
}

std::optional<double> progress_metric(const Vec& w_K, const Vec& w_0, const Vec& w_star) {
  if (w_K.size() != w_star.size() || w_0.size() != w_star.size()) throw DimensionError("progress_metric: size mismatch");
  const double den = (w_0 - w_star).norm();
  if (!(den > 0.0)) return std::nullopt;
  return std::min((w_K - w_star).norm() / den, 1.0);
}

double kl_gaussian(const GaussianPolicy& P, const GaussianPolicy& P0) {
  const Eigen::Index n = P.mean.theta.size();
  if (P0.mean.theta.size() != n || P.log_std.size() != n || P0.log_std.size() != n)
    throw DimensionError("kl_gaussian: dimension mismatch");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double var_ratio = std::exp(2.0 * (P.log_std[i] - P0.log_std[i]));
    const double d = P.mean.theta[i] - P0.mean.theta[i];
    kl += P0.log_std[i] - P.log_std[i] + 0.5 * (var_ratio + d * d * std::exp(-2.0 * P0.log_std[i]) - 1.0);
  }
  return std::max(kl, 0.0);
}

double kl_bernoulli(double p, double q) {
  if (!(p >= 0.0 && p <= 1.0) || !(q >= 0.0 && q <= 1.0)) throw ConfigError("kl_bernoulli: arguments must lie in [0, 1]");
  auto term = [](double a, double b) {
    if (a == 0.0) return 0.0;
    if (b == 0.0) return std::numeric_limits<double>::infinity();
    return a * std::log(a / b);
  };
  return term(p, q) + term(1.0 - p, 1.0 - q);
}

double kl_inverse(double p, double c) {
  if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("kl_inverse: p must lie in [0, 1]");
  if (!(c >= 0.0)) throw ConfigError("kl_inverse: budget must be nonnegative");
  if (p >= 1.0) return 1.0;
  if (c == 0.0) return p;
  // The root is within one ulp of 1 when the largest double below 1 is
  // still feasible.
  if (kl_bernoulli(p, std::nextafter(1.0, 0.0)) <= c) return 1.0;
  // kl(p, .) is increasing on [p, 1]; lo stays feasible.
  double lo = p, hi = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (kl_bernoulli(p, mid) <= c)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

double sample_convergence_bound(double q_hat, double M, double eps) {
  if (!(M >= 1.0) || !(eps > 0.0 && eps < 1.0)) throw ConfigError("sample_convergence_bound: need M >= 1, eps in (0, 1)");
  return kl_inverse(q_hat, std::log(2.0 / eps) / M);
}

double pac_bound(double q_bar, double kl_term, double H, double delta) {
  if (!(H >= 1.0) || !(delta > 0.0 && delta < 1.0) || !(kl_term >= 0.0))
    throw ConfigError("pac_bound: need H >= 1, delta in (0, 1), kl_term >= 0");
  return kl_inverse(q_bar, (kl_term + std::log(2.0 * std::sqrt(H) / delta)) / H);
}

nlohmann::json bound_report_to_json(const BoundReport& r) {
  nlohmann::json j{{"q_hat", r.q_hat}, {"q_bar", r.q_bar}, {"kl_term", r.kl_term}, {"final_bound", r.final_bound},
                   {"H", r.H},         {"M", r.M},         {"delta", r.delta},     {"eps", r.eps},
                   {"excluded", r.excluded}};
  if (r.test_progress) j["test_progress"] = *r.test_progress;
  return j;
}

namespace {

constexpr std::uint64_t kSampleStream = 0x73616d706c65ULL;

// Progress metric of one policy on every instance: (sum, used, excluded).
void progress_sums(const Policy& policy, const std::vector<LabeledInstance>& data, const UnfoldedOptions& opt,
                   double& sum, int& used, int& excluded) {
  sum = 0.0;
  used = excluded = 0;
  for (const auto& inst : data) {
    UnrolledResult r = forward_unrolled(inst.problem, policy, opt, false);
    const Vec w0 = Vec::Zero(inst.w_star.size());
    const Vec& wK = r.w.empty() ? w0 : r.w.back();
    const auto q = progress_metric(wK, w0, inst.w_star);
    if (!q) {
      ++excluded;
      continue;
    }
    sum += *q;
    ++used;
  }
}

}  // namespace

QHat estimate_q_hat(const GaussianPolicy& g, const std::vector<LabeledInstance>& data, int M,
                    const UnfoldedOptions& opt, std::uint64_t seed, int threads) {
  if (M < 1) throw ConfigError("estimate_q_hat: M must be >= 1");
  if (data.empty()) throw ConfigError("estimate_q_hat: empty dataset");
  std::vector<double> sums(static_cast<std::size_t>(M));
  std::vector<int> used(static_cast<std::size_t>(M)), excluded(static_cast<std::size_t>(M));
  parallel_for(M, resolve_threads(threads), [&](int j) {
    Rng rng(seed, kSampleStream + static_cast<std::uint64_t>(j));
    const Policy pj = sample_policy(g, rng);
    const auto jj = static_cast<std::size_t>(j);
    progress_sums(pj, data, opt, sums[jj], used[jj], excluded[jj]);
  });
  QHat out;
  double total = 0.0;
  long long count = 0;
  for (int j = 0; j < M; ++j) {
    total += sums[static_cast<std::size_t>(j)];
    count += used[static_cast<std::size_t>(j)];
  }
  out.used = used[0];
  out.excluded = excluded[0];
  if (count == 0) throw ConfigError("estimate_q_hat: every instance has w_0 = w*");
  out.value = total / static_cast<double>(count);
  return out;
}

QHat mean_progress(const Policy& policy, const std::vector<LabeledInstance>& data, const UnfoldedOptions& opt,
                   int threads) {
  if (data.empty()) throw ConfigError("mean_progress: empty dataset");
  std::vector<double> q(data.size(), 0.0);
  std::vector<char> ok(data.size(), 0);
  parallel_for(static_cast<int>(data.size()), resolve_threads(threads), [&](int i) {
    const auto& inst = data[static_cast<std::size_t>(i)];
    UnrolledResult r = forward_unrolled(inst.problem, policy, opt, false);
    const Vec w0 = Vec::Zero(inst.w_star.size());
    const auto m = progress_metric(r.w.empty() ? w0 : r.w.back(), w0, inst.w_star);
    if (m) {
      q[static_cast<std::size_t>(i)] = *m;
      ok[static_cast<std::size_t>(i)] = 1;
    }
  });
  QHat out;
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (ok[i]) {
      sum += q[i];
      ++out.used;
    } else {
      ++out.excluded;
    }
  }
  if (out.used == 0) throw ConfigError("mean_progress: every instance has w_0 = w*");
  out.value = sum / out.used;
  return out;
}

SampleLoss progress_loss(const UnfoldedOptions& opt) {
  return [opt](const LabeledInstance& inst, const Policy& policy, Vec* grad) {
    UnrolledResult r = forward_unrolled(inst.problem, policy, opt, grad != nullptr);
    const Vec w0 = Vec::Zero(inst.w_star.size());
    const double den = (w0 - inst.w_star).norm();
    if (!(den > 0.0)) {
      if (grad) *grad = Vec::Zero(policy.theta.size());
      return 0.0;
    }
    const Vec& wK = r.w.empty() ? w0 : r.w.back();
    const Vec d = wK - inst.w_star;
    const double ratio = d.norm() / den;
    if (grad) {
      std::vector<Vec> gw(r.w.size(), Vec::Zero(inst.w_star.size()));
      // The clamp at 1 is flat; below it the ratio is smooth away from w_K = w*.
      if (!gw.empty() && ratio < 1.0 && d.norm() > 0.0) gw.back() = d / (d.norm() * den);
      *grad = backward_unrolled(inst.problem, policy, opt, r.tape, gw);
    }
    return std::min(ratio, 1.0);
  };
}

double bound_regularizer(double kl, int H, double delta) {
  if (H < 1 || !(delta > 0.0 && delta < 1.0)) throw ConfigError("bound_regularizer: need H >= 1, delta in (0, 1)");
  const double h = static_cast<double>(H);
  return std::sqrt((kl + std::log(2.0 * std::sqrt(h) / delta)) / (2.0 * h));
}

void check_disjoint(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b) {
  const std::set<std::uint64_t> sa(a.begin(), a.end());
  for (auto s : b)
    if (sa.count(s)) throw IntegrityError("prior and posterior data overlap (instance seed " + std::to_string(s) + ")");
}

GaussianPolicy train_posterior(const GaussianPolicy& prior, const std::vector<std::uint64_t>& prior_seeds,
                               const std::vector<LabeledInstance>& data, const PosteriorConfig& cfg,
                               const SampleLoss& loss_fn) {
  if (data.empty()) throw ConfigError("train_posterior: empty dataset");
  if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("train_posterior: epochs must be >= 0 and batch >= 1");
  std::vector<std::uint64_t> seeds;
  for (const auto& inst : data) seeds.push_back(inst.seed);
  check_disjoint(prior_seeds, seeds);
  const SampleLoss loss = loss_fn ? loss_fn : progress_loss(cfg.unfolded);

  const Eigen::Index n = prior.mean.theta.size();
  const int H = static_cast<int>(data.size());
  GaussianPolicy post = prior;
  Vec params(2 * n);
  params << post.mean.theta, post.log_std;
  Adam adam(params.size(), cfg.adam);
  Rng order_rng(cfg.seed, 0x6f72646572ULL);
  std::vector<int> perm(data.size());
  std::iota(perm.begin(), perm.end(), 0);
  const Vec prior_var_inv = (-2.0 * prior.log_std.array()).exp().matrix();
  const int threads = resolve_threads(cfg.threads);
  std::uint64_t step = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(perm);
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(perm.size(), start + static_cast<std::size_t>(cfg.batch));
      const int bs = static_cast<int>(stop - start);
      // One reparameterized sample per step, shared by the batch.
      Rng rng(cfg.seed, kSampleStream ^ (0x706f7374ULL + step++));
      Vec noise;
      const Policy sample = sample_policy(post, rng, &noise);
      std::vector<Vec> grads(static_cast<std::size_t>(bs));
      parallel_for(bs, threads, [&](int j) {
        loss(data[static_cast<std::size_t>(perm[start + static_cast<std::size_t>(j)])], sample,
             &grads[static_cast<std::size_t>(j)]);
      });
      Vec g = Vec::Zero(n);
      for (const auto& gj : grads) g += gj;
      g /= bs;
      const Vec std_dev = post.log_std.array().exp().matrix();

      const double kl = kl_gaussian(post, prior);
      const double reg = bound_regularizer(kl, H, cfg.delta);
      const double dreg = 1.0 / (4.0 * H * reg);
      const Vec dkl_mean = (post.mean.theta - prior.mean.theta).cwiseProduct(prior_var_inv);
      const Vec dkl_logstd = (std_dev.cwiseAbs2().cwiseProduct(prior_var_inv).array() - 1.0).matrix();

      Vec grad(2 * n);
      grad << g + dreg * dkl_mean, g.cwiseProduct(std_dev).cwiseProduct(noise) + dreg * dkl_logstd;
      if (!grad.allFinite()) throw NumericError("train_posterior: non-finite gradient at epoch " + std::to_string(epoch));
      adam.step(params, grad);
      post.mean.theta = params.head(n);
      post.log_std = params.tail(n);
    }
  }
  return post;
}

}  // namespace dqp
