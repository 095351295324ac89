#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dqp/label.hpp"
#include "dqp/qp_model.hpp"

namespace dqp {

/// Problem family plus the size parameters it reads. Unused fields are ignored.
struct GenSpec {
  std::string kind = "random_qp";
  std::uint64_t seed = 0;
  // random_qp
  int n = 50, m = 40, p = 0;
  // random_networked_qp
  int grid_rows = 4, grid_cols = 4, n_i = 10, m_ij = 5, p_ij = 0;
  // optimal control families
  int N = 10, T = 15;
  // portfolio
  int k = 25;
  // lasso / distributed_lasso (n_i shared with networked QPs)
  int m_i = 100;
  // network_flow
  int n_nodes = 20, n_edges = 100, n_inject = 10;

  /// Throws ConfigError when the kind is unknown or a size is out of range.
  void check() const;
};

/// Family names accepted by GenSpec::kind.
const std::vector<std::string>& generator_kinds();
bool is_distributed_kind(const std::string& kind);

CentralizedQP gen_random_qp(std::uint64_t seed, int n, int m, int p, std::uint64_t stream = 0);
ConsensusQP gen_random_networked_qp(std::uint64_t seed, int grid_rows, int grid_cols, int n_i, int m_ij, int p_ij,
                                    std::uint64_t stream = 0);
/// kind in {double_integrator, osc_masses} (centralized, N ignored) or
/// {coupled_pendulums, coupled_osc_masses} (chain of N agents).
ConsensusQP gen_optimal_control(const std::string& kind, std::uint64_t seed, int N, int T, std::uint64_t stream = 0);
CentralizedQP gen_portfolio(std::uint64_t seed, int n, int k, std::uint64_t stream = 0);
CentralizedQP gen_lasso(std::uint64_t seed, int n, int m, std::uint64_t stream = 0);
ConsensusQP gen_distributed_lasso(std::uint64_t seed, int N, int n_i, int m_i, std::uint64_t stream = 0);
ConsensusQP gen_network_flow(std::uint64_t seed, int n_nodes, int n_edges, int n_inject, std::uint64_t stream = 0);

/// Dispatch on spec.kind; centralized families come back as one node.
ConsensusQP generate(const GenSpec& spec, std::uint64_t seed, std::uint64_t stream = 0);

struct Dataset {
  GenSpec spec;
  std::vector<LabeledInstance> instances;
  int rejected = 0;
  long long label_iters = 0;
};

/// H labeled instances; instance i uses seed spec.seed + i. An instance whose
/// labeling fails is regenerated from the next stream of the same seed.
Dataset build_dataset(const GenSpec& spec, int H, int threads = 1, const LabelSettings& label = {});

}  // namespace dqp
