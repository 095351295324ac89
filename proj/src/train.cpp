#include "dqp/train.hpp"

#include <cmath>
#include <numeric>

#include "dqp/parallel.hpp"
#include "dqp/rng.hpp"

namespace dqp {

Adam::Adam(Eigen::Index dim, const AdamConfig& cfg) : cfg_(cfg), m_(Vec::Zero(dim)), v_(Vec::Zero(dim)) {
  if (!(cfg.lr >= 0.0) || !(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0) ||
      !(cfg.eps > 0.0))
    throw ConfigError("adam: invalid hyperparameters");
}

void Adam::step(Vec& theta, const Vec& grad) {
  if (grad.size() != m_.size() || theta.size() != m_.size()) throw DimensionError("adam: size mismatch");
  ++t_;
  m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
  v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t_);
  if (cfg_.lr == 0.0) return;
  theta.array() -= cfg_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + cfg_.eps);
}

double batch_loss(const std::vector<LabeledInstance>& data, const std::vector<int>& idx, const Policy& policy,
                  const UnfoldedOptions& opt, int threads, Vec* grad) {
  const int n = static_cast<int>(idx.size());
  if (n == 0) throw ConfigError("batch_loss: empty batch");
  std::vector<double> losses(static_cast<std::size_t>(n));
  std::vector<Vec> grads(grad ? static_cast<std::size_t>(n) : 0);
  parallel_for(n, threads, [&](int j) {
    const auto& inst = data.at(static_cast<std::size_t>(idx[static_cast<std::size_t>(j)]));
    losses[static_cast<std::size_t>(j)] =
        instance_loss(inst, policy, opt, grad ? &grads[static_cast<std::size_t>(j)] : nullptr);
  });
  double total = 0.0;
  for (double l : losses) total += l;
  if (grad) {
    *grad = Vec::Zero(policy.theta.size());
    for (const auto& gj : grads) *grad += gj;
    *grad /= n;
  }
  return total / n;
}

TrainResult train(const std::vector<LabeledInstance>& data, const TrainConfig& cfg, const Policy& init,
                  const EpochCallback& on_epoch) {
  if (data.empty()) throw ConfigError("train: empty dataset");
  if (cfg.epochs < 0 || cfg.batch < 1) throw ConfigError("train: epochs must be >= 0 and batch >= 1");
  if (!(cfg.val_fraction >= 0.0 && cfg.val_fraction < 1.0)) throw ConfigError("train: val_fraction must lie in [0, 1)");
  for (const auto& inst : data) check_compatible(inst.problem, init, cfg.unfolded);

  TrainResult res;
  Rng rng(cfg.seed, 0x747261696eULL);
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  const int n_val = static_cast<int>(std::floor(cfg.val_fraction * static_cast<double>(data.size())));
  res.val_indices.assign(order.begin(), order.begin() + n_val);
  res.train_indices.assign(order.begin() + n_val, order.end());
  const std::vector<int>& select = n_val > 0 ? res.val_indices : res.train_indices;

  Policy policy = init;
  Adam adam(policy.theta.size(), cfg.adam);
  const int threads = resolve_threads(cfg.threads);

  auto evaluate = [&](int epoch, double train_loss) {
    EpochLog log;
    log.epoch = epoch;
    log.val_loss = batch_loss(data, select, policy, cfg.unfolded, threads);
    // Without a validation split both losses cover the same instances.
    log.train_loss = std::isnan(train_loss) ? log.val_loss : train_loss;
    if (!std::isfinite(log.val_loss))
      throw NumericError("train: non-finite selection loss at epoch " + std::to_string(epoch));
    if (epoch == 0 || log.val_loss < res.best_loss) {
      res.best_loss = log.val_loss;
      res.best_epoch = epoch;
      res.policy = policy;
    }
    res.log.push_back(log);
    if (on_epoch) on_epoch(log);
  };
  evaluate(0, n_val > 0 ? batch_loss(data, res.train_indices, policy, cfg.unfolded, threads) : std::nan(""));

  std::vector<int> perm = res.train_indices;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(perm);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < perm.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t stop = std::min(perm.size(), start + static_cast<std::size_t>(cfg.batch));
      const std::vector<int> idx(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                 perm.begin() + static_cast<std::ptrdiff_t>(stop));
      Vec grad;
      const double loss = batch_loss(data, idx, policy, cfg.unfolded, threads, &grad);
      if (!std::isfinite(loss) || !grad.allFinite())
        throw NumericError("train: non-finite loss or gradient at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batches) + " (loss " + std::to_string(loss) + ")");
      adam.step(policy.theta, grad);
      sum += loss;
      ++batches;
    }
    evaluate(epoch, sum / batches);
  }
  return res;
}

}  // namespace dqp
