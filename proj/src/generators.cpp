#include "dqp/generators.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <queue>
#include <set>

#include "dqp/parallel.hpp"
#include "dqp/rng.hpp"

namespace dqp {

namespace {

class RowBuilder {
 public:
  explicit RowBuilder(int cols) : cols_(cols) {}
  int add_row(RowKind kind, double rhs) {
    b_.push_back(rhs);
    kinds_.push_back(kind);
    return static_cast<int>(b_.size()) - 1;
  }
  void add(int row, int col, double v) {
    if (v != 0.0) t_.emplace_back(row, col, v);
  }
  void finish(QuadProgram& p) const {
    p.A.resize(static_cast<Eigen::Index>(b_.size()), cols_);
    p.A.setFromTriplets(t_.begin(), t_.end());
    p.b = Eigen::Map<const Vec>(b_.data(), static_cast<Eigen::Index>(b_.size()));
    p.kinds = kinds_;
  }

 private:
  int cols_;
  std::vector<Triplet> t_;
  std::vector<double> b_;
  std::vector<RowKind> kinds_;
};

Mat normal_matrix(Rng& rng, int r, int c) {
  Mat M(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) M(i, j) = rng.normal();
  return M;
}

Vec normal_vec(Rng& rng, int n) {
  Vec v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.normal();
  return v;
}

/// F^T F + gamma I from an r x n Gaussian F.
Mat gram_plus_identity(Rng& rng, int n, double gamma) {
  const Mat F = normal_matrix(rng, n, n);
  Mat Q = F.transpose() * F;
  Q.diagonal().array() += gamma;
  return 0.5 * (Q + Q.transpose());
}

/// Row-major loop over a rows x cols grid; node id r * cols + c.
std::vector<std::vector<int>> grid_neighbors(int rows, int cols) {
  std::vector<std::vector<int>> nb(static_cast<std::size_t>(rows * cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const int i = r * cols + c;
      if (c + 1 < cols) {
        nb[static_cast<std::size_t>(i)].push_back(i + 1);
        nb[static_cast<std::size_t>(i + 1)].push_back(i);
      }
      if (r + 1 < rows) {
        nb[static_cast<std::size_t>(i)].push_back(i + cols);
        nb[static_cast<std::size_t>(i + cols)].push_back(i);
      }
    }
  for (auto& v : nb) std::sort(v.begin(), v.end());
  return nb;
}

std::vector<std::vector<int>> chain_neighbors(int N) {
  std::vector<std::vector<int>> nb(static_cast<std::size_t>(N));
  for (int i = 0; i + 1 < N; ++i) {
    nb[static_cast<std::size_t>(i)].push_back(i + 1);
    nb[static_cast<std::size_t>(i + 1)].push_back(i);
  }
  for (auto& v : nb) std::sort(v.begin(), v.end());
  return nb;
}

/// Augmented layout: own variables first, then each neighbor's in ascending
/// order. offset[j] is where agent j's block starts in node i's vector.
struct AugLayout {
  std::vector<int> mapping;
  std::map<int, int> offset;
  int dim = 0;
};

AugLayout augmented_layout(int i, const std::vector<int>& neighbors, int block) {
  AugLayout L;
  std::vector<int> members = {i};
  members.insert(members.end(), neighbors.begin(), neighbors.end());
  for (int j : members) {
    L.offset[j] = L.dim;
    for (int k = 0; k < block; ++k) L.mapping.push_back(j * block + k);
    L.dim += block;
  }
  return L;
}

SpMat sparse_block_diag(const Mat& top, int total) {
  Mat D = Mat::Zero(total, total);
  D.topLeftCorner(top.rows(), top.cols()) = top;
  return to_sparse(D);
}

const std::vector<double> kFlowValues = {1.0, 2.0, 3.0, 4.0, 5.0, 10.0};
const std::vector<double> kFlowProbs = {0.2, 0.2, 0.2, 0.2, 0.1, 0.1};

}  // namespace

const std::vector<std::string>& generator_kinds() {
  static const std::vector<std::string> kinds = {
      "random_qp",         "random_networked_qp", "double_integrator", "osc_masses",        "coupled_pendulums",
      "coupled_osc_masses", "portfolio",          "lasso",             "distributed_lasso", "network_flow"};
  return kinds;
}

bool is_distributed_kind(const std::string& kind) {
  return kind == "random_networked_qp" || kind == "coupled_pendulums" || kind == "coupled_osc_masses" ||
         kind == "distributed_lasso" || kind == "network_flow";
}

void GenSpec::check() const {
  const auto& ks = generator_kinds();
  if (std::find(ks.begin(), ks.end(), kind) == ks.end()) throw ConfigError("unknown generator kind '" + kind + "'");
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("generator parameter '") + name + "' must be positive");
  };
  auto nonneg = [](int v, const char* name) {
    if (v < 0) throw ConfigError(std::string("generator parameter '") + name + "' must be nonnegative");
  };
  if (kind == "random_qp") {
    positive(n, "n");
    nonneg(m, "m");
    nonneg(p, "p");
  } else if (kind == "random_networked_qp") {
    positive(grid_rows, "grid_rows");
    positive(grid_cols, "grid_cols");
    if (grid_rows * grid_cols < 2) throw ConfigError("random_networked_qp needs at least two nodes");
    positive(n_i, "n_i");
    nonneg(m_ij, "m_ij");
    nonneg(p_ij, "p_ij");
  } else if (kind == "double_integrator" || kind == "osc_masses") {
    positive(T, "T");
  } else if (kind == "coupled_pendulums" || kind == "coupled_osc_masses") {
    positive(T, "T");
    if (N < 2) throw ConfigError("coupled systems need N >= 2");
  } else if (kind == "portfolio") {
    positive(k, "k");
    if (n < k) throw ConfigError("portfolio needs n >= k");
  } else if (kind == "lasso") {
    positive(n, "n");
    positive(m, "m");
  } else if (kind == "distributed_lasso") {
    positive(N, "N");
    positive(n_i, "n_i");
    positive(m_i, "m_i");
  } else if (kind == "network_flow") {
    if (n_nodes < 2) throw ConfigError("network_flow needs at least two nodes");
    positive(n_edges, "n_edges");
    nonneg(n_inject, "n_inject");
    if (n_edges % n_nodes != 0) throw ConfigError("network_flow: n_edges must be a multiple of n_nodes (regular digraph)");
    if (n_edges / n_nodes >= n_nodes) throw ConfigError("network_flow: degree must be below n_nodes");
    if (n_inject > n_nodes) throw ConfigError("network_flow: more injections than nodes");
  }
}

CentralizedQP gen_random_qp(std::uint64_t seed, int n, int m, int p, std::uint64_t stream) {
  Rng rng(seed, stream);
  QuadProgram qp;
  qp.Q = to_sparse(gram_plus_identity(rng, n, 1.0));
  qp.q = normal_vec(rng, n);
  const Mat A = normal_matrix(rng, m, n);
  const Vec theta = normal_vec(rng, n);
  const Mat C = normal_matrix(rng, p, n);
  const Vec xi = normal_vec(rng, n);
  Mat stacked(m + p, n);
  stacked << A, C;
  qp.A = to_sparse(stacked);
  qp.b.resize(m + p);
  qp.b << A * theta, C * xi;
  qp.kinds.assign(static_cast<std::size_t>(m), RowKind::kUpper);
  qp.kinds.insert(qp.kinds.end(), static_cast<std::size_t>(p), RowKind::kEquality);
  return qp;
}

ConsensusQP gen_random_networked_qp(std::uint64_t seed, int grid_rows, int grid_cols, int n_i, int m_ij, int p_ij,
                                    std::uint64_t stream) {
  Rng rng(seed, stream);
  const int N = grid_rows * grid_cols;
  const auto nb = grid_neighbors(grid_rows, grid_cols);
  std::vector<Mat> Qown(static_cast<std::size_t>(N));
  std::vector<Vec> qown(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) {
    Qown[static_cast<std::size_t>(i)] = gram_plus_identity(rng, n_i, 1.0);
    qown[static_cast<std::size_t>(i)] = normal_vec(rng, n_i);
  }
  ConsensusQP cp;
  cp.n_global = N * n_i;
  std::vector<AugLayout> layouts;
  std::vector<RowBuilder> rows;
  for (int i = 0; i < N; ++i) {
    layouts.push_back(augmented_layout(i, nb[static_cast<std::size_t>(i)], n_i));
    rows.emplace_back(layouts.back().dim);
  }
  // Edge (i, j), i < j, is owned by node i.
  for (int i = 0; i < N; ++i)
    for (int j : nb[static_cast<std::size_t>(i)]) {
      if (j < i) continue;
      const Mat A = normal_matrix(rng, m_ij, 2 * n_i);
      const Vec theta = normal_vec(rng, 2 * n_i);
      const Mat C = normal_matrix(rng, p_ij, 2 * n_i);
      const Vec xi = normal_vec(rng, 2 * n_i);
      const Vec b = A * theta, d = C * xi;
      auto& rb = rows[static_cast<std::size_t>(i)];
      const auto& L = layouts[static_cast<std::size_t>(i)];
      const int oi = L.offset.at(i), oj = L.offset.at(j);
      auto emit = [&](const Mat& M, const Vec& rhs, RowKind kind) {
        for (int r = 0; r < M.rows(); ++r) {
          const int row = rb.add_row(kind, rhs[r]);
          for (int c = 0; c < n_i; ++c) {
            rb.add(row, oi + c, M(r, c));
            rb.add(row, oj + c, M(r, n_i + c));
          }
        }
      };
      emit(A, b, RowKind::kUpper);
      emit(C, d, RowKind::kEquality);
    }
  for (int i = 0; i < N; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    QuadProgram blk;
    blk.Q = sparse_block_diag(Qown[ii], layouts[ii].dim);
    blk.q = Vec::Zero(layouts[ii].dim);
    blk.q.head(n_i) = qown[ii];
    rows[ii].finish(blk);
    cp.blocks.push_back(std::move(blk));
    cp.mapping.push_back(layouts[ii].mapping);
  }
  return cp;
}

namespace {

struct LinearSystem {
  Mat Ad, Bd;
  Mat Ax, Au;  // state / control constraint rows, as upper rows
  Vec bx, bu;
};

LinearSystem double_integrator_system() {
  LinearSystem s;
  s.Ad.resize(2, 2);
  s.Ad << 1, 1, 0, 1;
  s.Bd.resize(2, 1);
  s.Bd << 0.5, 0.1;
  s.Ax.resize(4, 2);
  s.Ax << Mat::Identity(2, 2), -Mat::Identity(2, 2);
  s.bx.resize(4);
  s.bx << 5, 1, 5, 1;
  s.Au.resize(2, 1);
  s.Au << 1, -1;
  s.bu = Vec::Constant(2, 0.1);
  return s;
}

LinearSystem osc_masses_system() {
  const double c = 1.0, d = 0.1, a = -2.0 * c, bcoef = -2.0, dt = 0.5;
  Mat L = Mat::Zero(6, 6);
  for (int i = 1; i < 6; ++i) L(i, i - 1) = 1.0;
  Mat Ac = Mat::Zero(12, 12);
  Ac.topRightCorner(6, 6) = Mat::Identity(6, 6);
  Ac.bottomLeftCorner(6, 6) = a * Mat::Identity(6, 6) + c * L + c * L.transpose();
  Ac.bottomRightCorner(6, 6) = bcoef * Mat::Identity(6, 6) + d * L + d * L.transpose();
  Mat F = Mat::Zero(6, 3);
  F(0, 0) = 1;
  F(1, 0) = -1;
  F(2, 1) = 1;
  F(3, 2) = 1;
  F(4, 1) = -1;
  F(5, 2) = 1;
  Mat Bc = Mat::Zero(12, 3);
  Bc.bottomRows(6) = F;
  LinearSystem s;
  s.Ad = Mat::Identity(12, 12) + Ac * dt;
  s.Bd = Bc * dt;
  s.Ax.resize(24, 12);
  s.Ax << Mat::Identity(12, 12), -Mat::Identity(12, 12);
  s.bx = Vec::Constant(24, 4.0);
  s.Au.resize(6, 3);
  s.Au << Mat::Identity(3, 3), -Mat::Identity(3, 3);
  s.bu = Vec::Constant(6, 0.5);
  return s;
}

/// Trajectory layout [x_0, u_0, x_1, u_1, ..., x_{T-1}, u_{T-1}, x_T].
int state_offset(int t, int nx, int nu) { return t * (nx + nu); }
int control_offset(int t, int nx, int nu) { return t * (nx + nu) + nx; }

CentralizedQP single_agent_control(const LinearSystem& sys, const Vec& x0, int T) {
  const int nx = static_cast<int>(sys.Ad.rows()), nu = static_cast<int>(sys.Bd.cols());
  const int dim = (T + 1) * nx + T * nu;
  QuadProgram qp;
  // Stage costs x'x + u'u with no 1/2 factor.
  SpMat Q(dim, dim);
  Q.setIdentity();
  qp.Q = 2.0 * Q;
  qp.q = Vec::Zero(dim);
  RowBuilder rb(dim);
  for (int i = 0; i < nx; ++i) {
    const int row = rb.add_row(RowKind::kEquality, x0[i]);
    rb.add(row, state_offset(0, nx, nu) + i, 1.0);
  }
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < nx; ++i) {
      const int row = rb.add_row(RowKind::kEquality, 0.0);
      rb.add(row, state_offset(t + 1, nx, nu) + i, 1.0);
      for (int j = 0; j < nx; ++j) rb.add(row, state_offset(t, nx, nu) + j, -sys.Ad(i, j));
      for (int j = 0; j < nu; ++j) rb.add(row, control_offset(t, nx, nu) + j, -sys.Bd(i, j));
    }
  for (int t = 0; t <= T; ++t)
    for (int r = 0; r < sys.Ax.rows(); ++r) {
      const int row = rb.add_row(RowKind::kUpper, sys.bx[r]);
      for (int j = 0; j < nx; ++j) rb.add(row, state_offset(t, nx, nu) + j, sys.Ax(r, j));
    }
  for (int t = 0; t < T; ++t)
    for (int r = 0; r < sys.Au.rows(); ++r) {
      const int row = rb.add_row(RowKind::kUpper, sys.bu[r]);
      for (int j = 0; j < nu; ++j) rb.add(row, control_offset(t, nx, nu) + j, sys.Au(r, j));
    }
  rb.finish(qp);
  return qp;
}

ConsensusQP coupled_chain_control(bool pendulums, Rng& rng, int N, int T) {
  const int nx = 2, nu = 1;
  const int block = (T + 1) * nx + T * nu;
  const double dt = pendulums ? 0.1 : 0.5;
  const double mass = 1.0, k = pendulums ? 0.1 : 0.4, c = 0.1, g = 9.81, ell = 0.5;
  const auto nb = chain_neighbors(N);
  ConsensusQP cp;
  cp.n_global = N * block;
  for (int i = 0; i < N; ++i) {
    const auto& neigh = nb[static_cast<std::size_t>(i)];
    const double nn = static_cast<double>(neigh.size());
    Mat Aii(2, 2), Aij(2, 2), B(2, 1);
    if (pendulums) {
      Aii << 1, dt, -(g / ell + nn * k / mass) * dt, 1 - nn * c / mass * dt;
      B << 0, dt / (mass * ell * ell);
    } else {
      Aii << 1, dt, -2.0 * k / mass * dt, 1 - 2.0 * c / mass * dt;
      B << 0, dt / mass;
    }
    Aij << 0, 0, k / mass * dt, c / mass * dt;
    Vec x0(2);
    for (int j = 0; j < 2; ++j)
      x0[j] = pendulums ? rng.uniform(-std::numbers::pi, std::numbers::pi) : rng.uniform(-2.0, 2.0);

    const AugLayout L = augmented_layout(i, neigh, block);
    RowBuilder rb(L.dim);
    const int own = L.offset.at(i);
    for (int j = 0; j < nx; ++j) {
      const int row = rb.add_row(RowKind::kEquality, x0[j]);
      rb.add(row, own + state_offset(0, nx, nu) + j, 1.0);
    }
    for (int t = 0; t < T; ++t)
      for (int r = 0; r < nx; ++r) {
        const int row = rb.add_row(RowKind::kEquality, 0.0);
        rb.add(row, own + state_offset(t + 1, nx, nu) + r, 1.0);
        for (int j = 0; j < nx; ++j) rb.add(row, own + state_offset(t, nx, nu) + j, -Aii(r, j));
        rb.add(row, own + control_offset(t, nx, nu), -B(r, 0));
        for (int nbr : neigh)
          for (int j = 0; j < nx; ++j) rb.add(row, L.offset.at(nbr) + state_offset(t, nx, nu) + j, -Aij(r, j));
      }
    if (!pendulums) {
      for (int t = 0; t <= T; ++t)
        for (int j = 0; j < nx; ++j)
          for (double sgn : {1.0, -1.0}) {
            const int row = rb.add_row(RowKind::kUpper, 4.0);
            rb.add(row, own + state_offset(t, nx, nu) + j, sgn);
          }
      for (int t = 0; t < T; ++t)
        for (double sgn : {1.0, -1.0}) {
          const int row = rb.add_row(RowKind::kUpper, 0.5);
          rb.add(row, own + control_offset(t, nx, nu), sgn);
        }
    }
    QuadProgram blk;
    blk.Q = sparse_block_diag(2.0 * Mat::Identity(block, block), L.dim);
    blk.q = Vec::Zero(L.dim);
    rb.finish(blk);
    cp.blocks.push_back(std::move(blk));
    cp.mapping.push_back(L.mapping);
  }
  return cp;
}

}  // namespace

ConsensusQP gen_optimal_control(const std::string& kind, std::uint64_t seed, int N, int T, std::uint64_t stream) {
  if (T < 1) throw ConfigError("optimal control horizon must be at least 1");
  Rng rng(seed, stream);
  if (kind == "double_integrator") {
    Vec x0(2);
    x0 << rng.uniform(-1.0, 1.0), rng.uniform(-0.3, 0.3);
    return as_consensus(single_agent_control(double_integrator_system(), x0, T));
  }
  if (kind == "osc_masses") {
    Vec x0(12);
    for (int i = 0; i < 12; ++i) x0[i] = rng.uniform(-1.0, 1.0);
    return as_consensus(single_agent_control(osc_masses_system(), x0, T));
  }
  if (kind == "coupled_pendulums") return coupled_chain_control(true, rng, N, T);
  if (kind == "coupled_osc_masses") return coupled_chain_control(false, rng, N, T);
  throw ConfigError("unknown optimal control kind '" + kind + "'");
}

CentralizedQP gen_portfolio(std::uint64_t seed, int n, int k, std::uint64_t stream) {
  Rng rng(seed, stream);
  const double gamma = 1.0;
  Vec mu = normal_vec(rng, n);
  Mat F = Mat::Zero(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j)
      if (rng.bernoulli(0.5)) F(i, j) = rng.normal();
  Vec D(n);
  for (int i = 0; i < n; ++i) D[i] = rng.uniform(0.0, std::sqrt(static_cast<double>(k)));
  const int dim = n + k;
  QuadProgram qp;
  Vec diag(dim);
  diag << 2.0 * D, Vec::Constant(k, 2.0);
  qp.Q = to_sparse(Mat(diag.asDiagonal()));
  qp.q = Vec::Zero(dim);
  qp.q.head(n) = -mu / gamma;
  RowBuilder rb(dim);
  for (int j = 0; j < k; ++j) {
    const int row = rb.add_row(RowKind::kEquality, 0.0);
    rb.add(row, n + j, 1.0);
    for (int i = 0; i < n; ++i) rb.add(row, i, -F(i, j));
  }
  {
    const int row = rb.add_row(RowKind::kEquality, 1.0);
    for (int i = 0; i < n; ++i) rb.add(row, i, 1.0);
  }
  for (int i = 0; i < n; ++i) {
    const int row = rb.add_row(RowKind::kUpper, 0.0);
    rb.add(row, i, -1.0);
  }
  rb.finish(qp);
  return qp;
}

namespace {

// On every variable: a data column with no nonzeros would otherwise leave its
// coefficient cost-free.
constexpr double kLassoRidge = 1e-4;

/// Sparse data matrix, sparse ground truth and noisy targets.
void lasso_data(Rng& rng, int m, int n, const Vec& v, Mat& A, Vec& b) {
  A = Mat::Zero(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      if (rng.bernoulli(0.15)) A(i, j) = rng.normal();
  b = A * v;
  for (int i = 0; i < m; ++i) b[i] += rng.normal();
}

Vec sparse_truth(Rng& rng, int n) {
  Vec v = Vec::Zero(n);
  for (int i = 0; i < n; ++i)
    if (rng.bernoulli(0.5)) v[i] = rng.normal(0.0, std::sqrt(1.0 / n));
  return v;
}

}  // namespace

CentralizedQP gen_lasso(std::uint64_t seed, int n, int m, std::uint64_t stream) {
  Rng rng(seed, stream);
  const Vec v = sparse_truth(rng, n);
  Mat A;
  Vec b;
  lasso_data(rng, m, n, v, A, b);
  const double lam = 0.2 * (A.transpose() * b).lpNorm<Eigen::Infinity>();
  QuadProgram qp;
  Mat H = Mat::Zero(2 * n, 2 * n);
  H.topLeftCorner(n, n) = 2.0 * A.transpose() * A;
  H.diagonal().array() += kLassoRidge;
  qp.Q = to_sparse(0.5 * (H + H.transpose()));
  qp.q.resize(2 * n);
  qp.q << -2.0 * A.transpose() * b, Vec::Constant(n, lam);
  RowBuilder rb(2 * n);
  for (int i = 0; i < n; ++i)
    for (double sgn : {1.0, -1.0}) {
      const int row = rb.add_row(RowKind::kUpper, 0.0);
      rb.add(row, i, sgn);
      rb.add(row, n + i, -1.0);
    }
  rb.finish(qp);
  return qp;
}

ConsensusQP gen_distributed_lasso(std::uint64_t seed, int N, int n_i, int m_i, std::uint64_t stream) {
  Rng rng(seed, stream);
  const int n = n_i;
  const Vec v = sparse_truth(rng, n);
  std::vector<Mat> As(static_cast<std::size_t>(N));
  std::vector<Vec> bs(static_cast<std::size_t>(N));
  double lam = 0.0;
  for (int i = 0; i < N; ++i) {
    lasso_data(rng, m_i, n, v, As[static_cast<std::size_t>(i)], bs[static_cast<std::size_t>(i)]);
    lam = std::max(lam, (As[static_cast<std::size_t>(i)].transpose() * bs[static_cast<std::size_t>(i)])
                            .lpNorm<Eigen::Infinity>());
  }
  lam *= 0.2;
  // Globals: [w (n), g (n), then per node x_i (n), t_i (n)].
  ConsensusQP cp;
  cp.n_global = 2 * n + N * 2 * n;
  const int dim = 4 * n;  // local [x_i, t_i, w copy, g copy]
  for (int i = 0; i < N; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    Mat H = Mat::Zero(dim, dim);
    H.topLeftCorner(n, n) = 2.0 * As[ii].transpose() * As[ii];
    H.diagonal().array() += kLassoRidge;
    QuadProgram blk;
    blk.Q = to_sparse(0.5 * (H + H.transpose()));
    blk.q = Vec::Zero(dim);
    blk.q.head(n) = -2.0 * As[ii].transpose() * bs[ii];
    blk.q.segment(n, n).setConstant(lam / N);
    RowBuilder rb(dim);
    for (int j = 0; j < n; ++j)
      for (double sgn : {1.0, -1.0}) {
        const int row = rb.add_row(RowKind::kUpper, 0.0);
        rb.add(row, j, sgn);
        rb.add(row, n + j, -1.0);
      }
    for (int j = 0; j < n; ++j) {
      const int row = rb.add_row(RowKind::kEquality, 0.0);
      rb.add(row, j, 1.0);
      rb.add(row, 2 * n + j, -1.0);
    }
    for (int j = 0; j < n; ++j) {
      const int row = rb.add_row(RowKind::kEquality, 0.0);
      rb.add(row, n + j, 1.0);
      rb.add(row, 3 * n + j, -1.0);
    }
    rb.finish(blk);
    std::vector<int> g(static_cast<std::size_t>(dim));
    const int base = 2 * n + i * 2 * n;
    for (int j = 0; j < 2 * n; ++j) g[static_cast<std::size_t>(j)] = base + j;
    for (int j = 0; j < 2 * n; ++j) g[static_cast<std::size_t>(2 * n + j)] = j;
    cp.blocks.push_back(std::move(blk));
    cp.mapping.push_back(std::move(g));
  }
  return cp;
}

ConsensusQP gen_network_flow(std::uint64_t seed, int n_nodes, int n_edges, int n_inject, std::uint64_t stream) {
  if (n_nodes < 2 || n_edges % n_nodes != 0) throw ConfigError("network_flow: n_edges must be a multiple of n_nodes");
  const int degree = n_edges / n_nodes;
  if (degree >= n_nodes) throw ConfigError("network_flow: degree must be below n_nodes");
  Rng rng(seed, stream);

  // Stack `degree` random permutations; a layer is redrawn if it creates a
  // self-loop or repeats an edge.
  std::vector<std::pair<int, int>> edges;
  std::set<std::pair<int, int>> used;
  for (int layer = 0; layer < degree; ++layer) {
    bool placed = false;
    for (int attempt = 0; attempt < 10000 && !placed; ++attempt) {
      std::vector<int> perm(static_cast<std::size_t>(n_nodes));
      for (int i = 0; i < n_nodes; ++i) perm[static_cast<std::size_t>(i)] = i;
      rng.shuffle(perm);
      bool ok = true;
      for (int i = 0; i < n_nodes && ok; ++i) {
        const int j = perm[static_cast<std::size_t>(i)];
        if (j == i || used.count({i, j})) ok = false;
      }
      if (!ok) continue;
      for (int i = 0; i < n_nodes; ++i) {
        edges.emplace_back(i, perm[static_cast<std::size_t>(i)]);
        used.insert({i, perm[static_cast<std::size_t>(i)]});
      }
      placed = true;
    }
    if (!placed) throw ConfigError("network_flow: regular digraph construction failed");
  }
  std::sort(edges.begin(), edges.end());
  std::vector<double> a(edges.size());
  for (auto& v : a) v = kFlowValues[rng.categorical(kFlowProbs)];

  std::vector<std::vector<int>> in_e(static_cast<std::size_t>(n_nodes)), out_e(static_cast<std::size_t>(n_nodes));
  for (std::size_t e = 0; e < edges.size(); ++e) {
    out_e[static_cast<std::size_t>(edges[e].first)].push_back(static_cast<int>(e));
    in_e[static_cast<std::size_t>(edges[e].second)].push_back(static_cast<int>(e));
  }

  // Net external supply per node: injected at a source, removed at a
  // reachable descendant.
  Vec supply = Vec::Zero(n_nodes);
  std::vector<int> nodes(static_cast<std::size_t>(n_nodes));
  for (int i = 0; i < n_nodes; ++i) nodes[static_cast<std::size_t>(i)] = i;
  rng.shuffle(nodes);
  for (int r = 0; r < n_inject; ++r) {
    const int src = nodes[static_cast<std::size_t>(r)];
    const double f = kFlowValues[rng.categorical(kFlowProbs)];
    std::vector<int> seen(static_cast<std::size_t>(n_nodes), 0), reach;
    std::queue<int> bfs;
    bfs.push(src);
    seen[static_cast<std::size_t>(src)] = 1;
    while (!bfs.empty()) {
      const int u = bfs.front();
      bfs.pop();
      for (int e : out_e[static_cast<std::size_t>(u)]) {
        const int v = edges[static_cast<std::size_t>(e)].second;
        if (!seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = 1;
          reach.push_back(v);
          bfs.push(v);
        }
      }
    }
    std::sort(reach.begin(), reach.end());
    if (reach.empty()) continue;
    const int dst = reach[static_cast<std::size_t>(rng.below(reach.size()))];
    supply[src] += f;
    supply[dst] -= f;
  }

  const double fmax = 5.0;
  ConsensusQP cp;
  cp.n_global = static_cast<int>(edges.size());
  for (int i = 0; i < n_nodes; ++i) {
    const auto& ins = in_e[static_cast<std::size_t>(i)];
    const auto& outs = out_e[static_cast<std::size_t>(i)];
    const int ni = static_cast<int>(ins.size()), no = static_cast<int>(outs.size());
    const int dim = ni + no;
    QuadProgram blk;
    Vec diag(dim);
    diag << Vec::Zero(ni), Vec::Ones(no);
    blk.Q = to_sparse(Mat(diag.asDiagonal()));
    blk.q = Vec::Zero(dim);
    for (int j = 0; j < no; ++j) blk.q[ni + j] = -a[static_cast<std::size_t>(outs[static_cast<std::size_t>(j)])];
    RowBuilder rb(dim);
    // inflow + supply = outflow.
    const int cons = rb.add_row(RowKind::kEquality, -supply[i]);
    for (int j = 0; j < ni; ++j) rb.add(cons, j, 1.0);
    for (int j = 0; j < no; ++j) rb.add(cons, ni + j, -1.0);
    for (int j = 0; j < no; ++j) {
      const int row = rb.add_row(RowKind::kBox, fmax);
      rb.add(row, ni + j, 1.0);
    }
    rb.finish(blk);
    std::vector<int> g(ins.begin(), ins.end());
    g.insert(g.end(), outs.begin(), outs.end());
    cp.blocks.push_back(std::move(blk));
    cp.mapping.push_back(std::move(g));
  }
  return cp;
}

ConsensusQP generate(const GenSpec& spec, std::uint64_t seed, std::uint64_t stream) {
  spec.check();
  const std::string& k = spec.kind;
  if (k == "random_qp") return as_consensus(gen_random_qp(seed, spec.n, spec.m, spec.p, stream));
  if (k == "random_networked_qp")
    return gen_random_networked_qp(seed, spec.grid_rows, spec.grid_cols, spec.n_i, spec.m_ij, spec.p_ij, stream);
  if (k == "double_integrator" || k == "osc_masses" || k == "coupled_pendulums" || k == "coupled_osc_masses")
    return gen_optimal_control(k, seed, spec.N, spec.T, stream);
  if (k == "portfolio") return as_consensus(gen_portfolio(seed, spec.n, spec.k, stream));
  if (k == "lasso") return as_consensus(gen_lasso(seed, spec.n, spec.m, stream));
  if (k == "distributed_lasso") return gen_distributed_lasso(seed, spec.N, spec.n_i, spec.m_i, stream);
  if (k == "network_flow") return gen_network_flow(seed, spec.n_nodes, spec.n_edges, spec.n_inject, stream);
  throw ConfigError("unknown generator kind '" + k + "'");
}

Dataset build_dataset(const GenSpec& spec, int H, int threads, const LabelSettings& label) {
  if (H < 1) throw ConfigError("dataset size H must be at least 1");
  spec.check();
  Dataset ds;
  ds.spec = spec;
  ds.instances.resize(static_cast<std::size_t>(H));
  std::vector<int> rejected(static_cast<std::size_t>(H), 0);
  std::vector<long long> iters(static_cast<std::size_t>(H), 0);
  constexpr int kMaxAttempts = 20;
  parallel_for(H, threads, [&](int i) {
    const auto ii = static_cast<std::size_t>(i);
    const std::uint64_t seed = derive_seed(spec.seed, static_cast<std::uint64_t>(i));
    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
      ConsensusQP p = generate(spec, seed, static_cast<std::uint64_t>(attempt));
      try {
        const QuadProgram c = centralize(p);
        LabelResult lr = label_program(c, label);
        LabeledInstance& inst = ds.instances[ii];
        inst.problem = std::move(p);
        inst.w_star = std::move(lr.x);
        inst.lambda_star = std::move(lr.lambda);
        inst.label_gap = lr.residual;
        inst.seed = seed;
        inst.kind = spec.kind;
        iters[ii] = lr.iters;
        return;
      } catch (const Error&) {
        ++rejected[ii];
      }
    }
    throw NumericError("build_dataset: instance " + std::to_string(i) + " (seed " + std::to_string(seed) +
                       ") could not be labeled");
  });
  for (int i = 0; i < H; ++i) {
    ds.rejected += rejected[static_cast<std::size_t>(i)];
    ds.label_iters += iters[static_cast<std::size_t>(i)];
  }
  return ds;
}

}  // namespace dqp
