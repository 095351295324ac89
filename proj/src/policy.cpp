#include "dqp/policy.hpp"

#include <algorithm>
#include <cmath>

#include "dqp/rng.hpp"

namespace dqp {

const char* to_string(Sharing s) { return s == Sharing::kShared ? "shared" : "local"; }

Sharing sharing_from_string(const std::string& s) {
  if (s == "shared") return Sharing::kShared;
  if (s == "local") return Sharing::kLocal;
  throw ConfigError("unknown sharing mode '" + s + "'");
}

double mlp_forward(const double* w, int in_dim, const double* input, MlpCache* cache) {
  const double* W1 = w;
  const double* b1 = W1 + kHidden * in_dim;
  const double* W2 = b1 + kHidden;
  const double* b2 = W2 + kHidden * kHidden;
  const double* w3 = b2 + kHidden;
  const double b3 = w3[kHidden];
  double h1[kHidden], h2[kHidden];
  for (int i = 0; i < kHidden; ++i) {
    double a = b1[i];
    for (int j = 0; j < in_dim; ++j) a += W1[i * in_dim + j] * input[j];
    h1[i] = std::tanh(a);
  }
  double out = b3;
  for (int i = 0; i < kHidden; ++i) {
    double a = b2[i];
    for (int j = 0; j < kHidden; ++j) a += W2[i * kHidden + j] * h1[j];
    h2[i] = std::tanh(a);
    out += w3[i] * h2[i];
  }
  if (cache) {
    for (int j = 0; j < in_dim; ++j) cache->in[j] = input[j];
    for (int i = 0; i < kHidden; ++i) {
      cache->h1[i] = h1[i];
      cache->h2[i] = h2[i];
    }
  }
  return out;
}

void mlp_backward(const double* w, int in_dim, const MlpCache& c, double gout, double* gw, double* gin) {
  const double* W1 = w;
  const double* W2 = W1 + kHidden * in_dim + kHidden;
  const double* w3 = W2 + kHidden * kHidden + kHidden;
  double* gW1 = gw;
  double* gb1 = gW1 + kHidden * in_dim;
  double* gW2 = gb1 + kHidden;
  double* gb2 = gW2 + kHidden * kHidden;
  double* gw3 = gb2 + kHidden;
  gw3[kHidden] += gout;
  double ga2[kHidden];
  for (int i = 0; i < kHidden; ++i) {
    gw3[i] += gout * c.h2[i];
    ga2[i] = gout * w3[i] * (1.0 - c.h2[i] * c.h2[i]);
    gb2[i] += ga2[i];
  }
  double ga1[kHidden];
  for (int j = 0; j < kHidden; ++j) {
    double g = 0.0;
    for (int i = 0; i < kHidden; ++i) {
      gW2[i * kHidden + j] += ga2[i] * c.h1[j];
      g += ga2[i] * W2[i * kHidden + j];
    }
    ga1[j] = g * (1.0 - c.h1[j] * c.h1[j]);
    gb1[j] += ga1[j];
  }
  for (int i = 0; i < kHidden; ++i)
    for (int j = 0; j < in_dim; ++j) {
      gW1[i * in_dim + j] += ga1[i] * c.in[j];
      if (gin) gin[j] += ga1[i] * W1[i * in_dim + j];
    }
}

double mlp_forward(const Vec& weights, const Vec& input) {
  const int in_dim = static_cast<int>(input.size());
  if ((in_dim != kRhoFeatures && in_dim != kMuFeatures) || weights.size() != mlp_size(in_dim))
    throw DimensionError("mlp_forward: input of size " + std::to_string(in_dim) + " does not fit " +
                         std::to_string(weights.size()) + " weights");
  return mlp_forward(weights.data(), in_dim, input.data(), nullptr);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw ConfigError("softplus_inverse: argument must be positive");
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double alpha_raw(double alpha) {
  if (!(alpha > 1.0 && alpha < 2.0)) throw ConfigError("alpha must lie in (1, 2)");
  const double p = alpha - 1.0;
  return std::log(p / (1.0 - p));
}

double alpha_from_raw(double raw) { return 1.0 + std::clamp(sigmoid(raw), kAlphaMargin, 1.0 - kAlphaMargin); }

double alpha_slope(double raw) {
  const double s = sigmoid(raw);
  if (s <= kAlphaMargin || s >= 1.0 - kAlphaMargin) return 0.0;
  return s * (1.0 - s);
}

double penalty_from_raw(double pre) { return std::max(softplus(pre), kMinPenalty); }

double penalty_slope(double pre) { return softplus(pre) > kMinPenalty ? sigmoid(pre) : 0.0; }

int PolicyLayout::slot_size() const {
  int s = 1;
  if (learn_mu) s += 1;
  if (closed_loop) {
    s += mlp_size(kRhoFeatures);
    if (learn_mu) s += mlp_size(kMuFeatures);
  }
  return s;
}

int PolicyLayout::mu_index(int k, int slot) const {
  if (!learn_mu) throw ConfigError("policy layout has no mu parameters");
  return rho_index(k, slot) + 1;
}

int PolicyLayout::mlp_rho_offset(int k, int slot) const {
  if (!closed_loop) throw ConfigError("policy layout has no feedback networks");
  return rho_index(k, slot) + (learn_mu ? 2 : 1);
}

int PolicyLayout::mlp_mu_offset(int k, int slot) const {
  if (!closed_loop || !learn_mu) throw ConfigError("policy layout has no mu feedback network");
  return mlp_rho_offset(k, slot) + mlp_size(kRhoFeatures);
}

namespace {

void init_mlp(double* w, int in_dim, Rng& rng) {
  double* W1 = w;
  double* b1 = W1 + kHidden * in_dim;
  double* W2 = b1 + kHidden;
  double* b2 = W2 + kHidden * kHidden;
  double* w3 = b2 + kHidden;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(kHidden));
  for (int i = 0; i < kHidden * in_dim; ++i) W1[i] = s1 * rng.normal();
  for (int i = 0; i < kHidden; ++i) b1[i] = 0.0;
  for (int i = 0; i < kHidden * kHidden; ++i) W2[i] = s2 * rng.normal();
  for (int i = 0; i < kHidden; ++i) b2[i] = 0.0;
  for (int i = 0; i <= kHidden; ++i) w3[i] = 0.0;
}

}  // namespace

Policy init_policy(const PolicyLayout& layout, const PolicyInit& init) {
  if (layout.K < 0 || layout.nodes < 1) throw ConfigError("policy layout needs K >= 0 and nodes >= 1");
  Policy p;
  p.layout = layout;
  p.theta = Vec::Zero(layout.size());
  Rng rng(init.seed, 0x706f6c6963ULL);
  for (int k = 0; k < layout.K; ++k) {
    p.theta[layout.alpha_index(k)] = alpha_raw(init.alpha);
    for (int s = 0; s < layout.slots(); ++s) {
      p.theta[layout.rho_index(k, s)] = softplus_inverse(init.rho);
      if (layout.learn_mu) p.theta[layout.mu_index(k, s)] = softplus_inverse(init.mu);
      if (layout.closed_loop) {
        init_mlp(p.theta.data() + layout.mlp_rho_offset(k, s), kRhoFeatures, rng);
        if (layout.learn_mu) init_mlp(p.theta.data() + layout.mlp_mu_offset(k, s), kMuFeatures, rng);
      }
    }
  }
  return p;
}

nlohmann::json policy_to_json(const Policy& p) {
  using nlohmann::json;
  const auto& L = p.layout;
  json layers = json::array();
  for (int k = 0; k < L.K; ++k) {
    json slots = json::array();
    for (int s = 0; s < L.slots(); ++s) {
      json slot{{"rho_raw", p.theta[L.rho_index(k, s)]}};
      if (L.learn_mu) slot["mu_raw"] = p.theta[L.mu_index(k, s)];
      if (L.closed_loop) {
        const int o = L.mlp_rho_offset(k, s);
        slot["mlp_rho"] = std::vector<double>(p.theta.data() + o, p.theta.data() + o + mlp_size(kRhoFeatures));
        if (L.learn_mu) {
          const int om = L.mlp_mu_offset(k, s);
          slot["mlp_mu"] = std::vector<double>(p.theta.data() + om, p.theta.data() + om + mlp_size(kMuFeatures));
        }
      }
      slots.push_back(std::move(slot));
    }
    layers.push_back(json{{"alpha_raw", p.theta[L.alpha_index(k)]}, {"slots", std::move(slots)}});
  }
  return json{{"K", L.K},
              {"nodes", L.nodes},
              {"sharing", to_string(L.sharing)},
              {"closed_loop", L.closed_loop},
              {"learn_mu", L.learn_mu},
              {"hidden", kHidden},
              {"activation", "tanh"},
              {"layers", std::move(layers)}};
}

Policy policy_from_json(const nlohmann::json& j) {
  PolicyLayout L;
  L.K = j.at("K").get<int>();
  L.nodes = j.at("nodes").get<int>();
  L.sharing = sharing_from_string(j.at("sharing").get<std::string>());
  L.closed_loop = j.at("closed_loop").get<bool>();
  L.learn_mu = j.at("learn_mu").get<bool>();
  if (j.contains("hidden") && j.at("hidden").get<int>() != kHidden) throw ConfigError("policy: hidden width mismatch");
  Policy p;
  p.layout = L;
  p.theta = Vec::Zero(L.size());
  const auto& layers = j.at("layers");
  if (static_cast<int>(layers.size()) != L.K) throw ConfigError("policy: layer count mismatch");
  for (int k = 0; k < L.K; ++k) {
    const auto& layer = layers[static_cast<std::size_t>(k)];
    p.theta[L.alpha_index(k)] = layer.at("alpha_raw").get<double>();
    const auto& slots = layer.at("slots");
    if (static_cast<int>(slots.size()) != L.slots()) throw ConfigError("policy: slot count mismatch");
    for (int s = 0; s < L.slots(); ++s) {
      const auto& slot = slots[static_cast<std::size_t>(s)];
      p.theta[L.rho_index(k, s)] = slot.at("rho_raw").get<double>();
      if (L.learn_mu) p.theta[L.mu_index(k, s)] = slot.at("mu_raw").get<double>();
      if (L.closed_loop) {
        auto copy = [&](const char* key, int offset, int size) {
          const auto v = slot.at(key).get<std::vector<double>>();
          if (static_cast<int>(v.size()) != size) throw ConfigError(std::string("policy: wrong size for ") + key);
          for (int i = 0; i < size; ++i) p.theta[offset + i] = v[static_cast<std::size_t>(i)];
        };
        copy("mlp_rho", L.mlp_rho_offset(k, s), mlp_size(kRhoFeatures));
        if (L.learn_mu) copy("mlp_mu", L.mlp_mu_offset(k, s), mlp_size(kMuFeatures));
      }
    }
  }
  if (!p.theta.allFinite()) throw ConfigError("policy: non-finite parameters");
  return p;
}

Policy resize_nodes(const Policy& p, int nodes) {
  if (p.layout.sharing != Sharing::kShared && nodes != p.layout.nodes)
    throw ConfigError("policy: local policies cannot change node count");
  Policy out = p;
  out.layout.nodes = nodes;
  return out;
}

}  // namespace dqp
