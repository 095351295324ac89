#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dqp/unfolded.hpp"

namespace dqp {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(Eigen::Index dim, const AdamConfig& cfg);
  /// theta -= lr * m_hat / (sqrt(v_hat) + eps).
  void step(Vec& theta, const Vec& grad);
  int steps() const { return t_; }

 private:
  AdamConfig cfg_;
  Vec m_, v_;
  int t_ = 0;
};

struct TrainConfig {
  int epochs = 10;
  int batch = 50;
  AdamConfig adam;
  /// Share of the data held out for best-epoch selection.
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  int threads = 1;
  UnfoldedOptions unfolded;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Policy policy;  // best on validation (on the training loss when no data is held out)
  int best_epoch = 0;
  double best_loss = 0.0;
  std::vector<EpochLog> log;
  std::vector<int> train_indices, val_indices;
};

/// Mean loss over `idx`; `grad` receives the mean gradient. Instances are
/// processed in parallel and reduced in index order.
double batch_loss(const std::vector<LabeledInstance>& data, const std::vector<int>& idx, const Policy& policy,
                  const UnfoldedOptions& opt, int threads, Vec* grad = nullptr);

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam over shuffled mini-batches; epoch 0 is the initialization.
TrainResult train(const std::vector<LabeledInstance>& data, const TrainConfig& cfg, const Policy& init,
                  const EpochCallback& on_epoch = {});

}  // namespace dqp
