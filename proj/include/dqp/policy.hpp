#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "dqp/linalg.hpp"

namespace dqp {

enum class Sharing { kShared, kLocal };
const char* to_string(Sharing s);
Sharing sharing_from_string(const std::string& s);

inline constexpr int kHidden = 16;
inline constexpr int kRhoFeatures = 4;
inline constexpr int kMuFeatures = 2;
inline constexpr double kFeatureFloor = 1e-8;

/// Parameter count of an in_dim -> 16 -> 16 -> 1 tanh network.
constexpr int mlp_size(int in_dim) { return kHidden * in_dim + kHidden + kHidden * kHidden + kHidden + kHidden + 1; }

/// Activations kept for the backward pass.
struct MlpCache {
  double in[kRhoFeatures] = {};
  double h1[kHidden] = {};
  double h2[kHidden] = {};
};

/// Weights are read from `w` in the order W1 (row-major, 16 x in), b1, W2, b2, w3, b3.
double mlp_forward(const double* w, int in_dim, const double* input, MlpCache* cache);
/// Accumulates d(out)/d(weights) * gout into gw and d(out)/d(input) * gout into gin.
void mlp_backward(const double* w, int in_dim, const MlpCache& cache, double gout, double* gw, double* gin);

/// Checked form: the input size must be 4 or 2 and match the weight count.
double mlp_forward(const Vec& weights, const Vec& input);

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);

inline constexpr double kMinPenalty = 1e-12;
inline constexpr double kAlphaMargin = 1e-12;

/// max(softplus(pre), kMinPenalty), so penalties stay positive for any raw value.
double penalty_from_raw(double pre);
/// d penalty / d pre (zero where the floor binds).
double penalty_slope(double pre);

/// Flat parameter layout. Per layer: the relaxation raw value, then one slot
/// per node (local) or a single slot (shared) holding the rho raw value, the mu
/// raw value (when learned) and, in closed loop, the two feedback networks.
struct PolicyLayout {
  int K = 0;
  int nodes = 1;
  Sharing sharing = Sharing::kShared;
  bool closed_loop = true;
  bool learn_mu = true;

  int slots() const { return sharing == Sharing::kShared ? 1 : nodes; }
  int slot_of(int node) const { return sharing == Sharing::kShared ? 0 : node; }
  int slot_size() const;
  int layer_size() const { return 1 + slots() * slot_size(); }
  int size() const { return K * layer_size(); }

  int alpha_index(int k) const { return k * layer_size(); }
  int rho_index(int k, int slot) const { return k * layer_size() + 1 + slot * slot_size(); }
  int mu_index(int k, int slot) const;
  int mlp_rho_offset(int k, int slot) const;
  int mlp_mu_offset(int k, int slot) const;

  bool operator==(const PolicyLayout& o) const = default;
};

struct Policy {
  PolicyLayout layout;
  Vec theta;
};

struct PolicyInit {
  double rho = 1.0;
  double mu = 1.0;
  double alpha = 1.6;
  std::uint64_t seed = 0;
};

/// softplus(raw) = init.rho / init.mu, 1 + sigmoid(raw) = init.alpha, zero
/// output layers and N(0, 1/fan_in) hidden weights.
Policy init_policy(const PolicyLayout& layout, const PolicyInit& init);

/// Raw relaxation value for a target alpha in (1, 2).
double alpha_raw(double alpha);
/// 1 + sigmoid(raw), kept kAlphaMargin inside (1, 2).
double alpha_from_raw(double raw);
double alpha_slope(double raw);

nlohmann::json policy_to_json(const Policy& p);
Policy policy_from_json(const nlohmann::json& j);

/// Same layout with a different node count (shared policies only).
Policy resize_nodes(const Policy& p, int nodes);

}  // namespace dqp
