#include "dqp/qp_model.hpp"

#include <algorithm>
#include <sstream>

#include <Eigen/Eigenvalues>

namespace dqp {

const char* to_string(RowKind kind) {
  switch (kind) {
    case RowKind::kUpper: return "upper";
    case RowKind::kEquality: return "eq";
    case RowKind::kBox: return "box";
  }
  return "upper";
}

RowKind row_kind_from_string(const std::string& s) {
  if (s == "upper") return RowKind::kUpper;
  if (s == "eq") return RowKind::kEquality;
  if (s == "box") return RowKind::kBox;
  throw ConfigError("unknown row kind '" + s + "'");
}

int QuadProgram::inequality_rows() const {
  int count = 0;
  for (RowKind k : kinds) count += (k == RowKind::kEquality) ? 2 : 1;
  return count;
}

void QuadProgram::check_dims() const {
  if (Q.rows() != Q.cols()) throw DimensionError("QuadProgram: Q is not square");
  if (q.size() != Q.rows()) throw DimensionError("QuadProgram: q length differs from Q size");
  if (A.rows() > 0 && A.cols() != Q.rows()) throw DimensionError("QuadProgram: A columns differ from Q size");
  if (b.size() != A.rows()) throw DimensionError("QuadProgram: b length differs from A rows");
  if (static_cast<Eigen::Index>(kinds.size()) != A.rows()) throw DimensionError("QuadProgram: row kinds differ from A rows");
}

int ConsensusQP::total_local_dim() const {
  int s = 0;
  for (const auto& blk : blocks) s += blk.n();
  return s;
}

int ConsensusQP::total_rows() const {
  int s = 0;
  for (const auto& blk : blocks) s += blk.m();
  return s;
}

int ConsensusQP::inequality_rows() const {
  int s = 0;
  for (const auto& blk : blocks) s += blk.inequality_rows();
  return s;
}

ConsensusQP as_consensus(const QuadProgram& p) {
  ConsensusQP c;
  c.blocks.push_back(p);
  c.mapping.emplace_back(p.n());
  for (int j = 0; j < p.n(); ++j) c.mapping[0][j] = j;
  c.n_global = p.n();
  return c;
}

Vec gather(const Vec& w, const std::vector<int>& g) {
  Vec out;
  gather(w, g, out);
  return out;
}

void gather(const Vec& w, const std::vector<int>& g, Vec& out) {
  out.resize(static_cast<Eigen::Index>(g.size()));
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (g[j] < 0 || g[j] >= w.size()) throw DimensionError("gather: index out of range");
    out[static_cast<Eigen::Index>(j)] = w[g[j]];
  }
}

void scatter_add(const Vec& v, const std::vector<int>& g, Vec& acc) {
  if (static_cast<std::size_t>(v.size()) != g.size()) throw DimensionError("scatter_add: size mismatch");
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (g[j] < 0 || g[j] >= acc.size()) throw DimensionError("scatter_add: index out of range");
    acc[g[j]] += v[static_cast<Eigen::Index>(j)];
  }
}

std::vector<int> owner_counts(const ConsensusQP& p) {
  std::vector<int> counts(static_cast<std::size_t>(p.n_global), 0);
  for (const auto& g : p.mapping)
    for (int l : g)
      if (l >= 0 && l < p.n_global) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

QuadProgram centralize(const ConsensusQP& p) {
  if (p.blocks.size() != p.mapping.size()) throw DimensionError("centralize: blocks and mapping differ in length");
  QuadProgram out;
  const int n = p.n_global;
  std::vector<Triplet> qt, at;
  out.q = Vec::Zero(n);
  int row0 = 0;
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const auto& blk = p.blocks[i];
    const auto& g = p.mapping[i];
    blk.check_dims();
    if (static_cast<int>(g.size()) != blk.n()) throw DimensionError("centralize: mapping length differs from block size");
    for (int c = 0; c < blk.Q.outerSize(); ++c)
      for (SpMat::InnerIterator it(blk.Q, c); it; ++it) qt.emplace_back(g[it.row()], g[it.col()], it.value());
    scatter_add(blk.q, g, out.q);
    for (int c = 0; c < blk.A.outerSize(); ++c)
      for (SpMat::InnerIterator it(blk.A, c); it; ++it) at.emplace_back(row0 + it.row(), g[it.col()], it.value());
    row0 += blk.m();
  }
  out.Q.resize(n, n);
  out.Q.setFromTriplets(qt.begin(), qt.end());
  out.A.resize(row0, n);
  out.A.setFromTriplets(at.begin(), at.end());
  out.b.resize(row0);
  out.kinds.reserve(static_cast<std::size_t>(row0));
  row0 = 0;
  for (const auto& blk : p.blocks) {
    out.b.segment(row0, blk.m()) = blk.b;
    out.kinds.insert(out.kinds.end(), blk.kinds.begin(), blk.kinds.end());
    row0 += blk.m();
  }
  // Summation order can break exact symmetry of shared entries.
  SpMat sym = SpMat(out.Q.transpose());
  out.Q = 0.5 * (out.Q + sym);
  if (!is_positive_definite(out.Q)) throw ConfigError("centralize: Hessian is not positive definite (cost-free global component)");
  return out;
}

Vec row_scale(const std::vector<RowKind>& kinds) {
  Vec s(static_cast<Eigen::Index>(kinds.size()));
  for (std::size_t j = 0; j < kinds.size(); ++j)
    s[static_cast<Eigen::Index>(j)] = kinds[j] == RowKind::kEquality ? kEqualityRhoScale : 1.0;
  return s;
}

void project_rows(const Vec& v, const Vec& b, const std::vector<RowKind>& kinds, Vec& out) {
  out.resize(v.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    switch (kinds[static_cast<std::size_t>(j)]) {
      case RowKind::kUpper: out[j] = std::min(v[j], b[j]); break;
      case RowKind::kEquality: out[j] = b[j]; break;
      case RowKind::kBox: out[j] = std::clamp(v[j], -b[j], b[j]); break;
    }
  }
}

void projection_mask(const Vec& v, const Vec& b, const std::vector<RowKind>& kinds, Vec& mask) {
  mask.resize(v.size());
  for (Eigen::Index j = 0; j < v.size(); ++j) {
    switch (kinds[static_cast<std::size_t>(j)]) {
      case RowKind::kUpper: mask[j] = v[j] < b[j] ? 1.0 : 0.0; break;
      case RowKind::kEquality: mask[j] = 0.0; break;
      case RowKind::kBox: mask[j] = (v[j] < b[j] && v[j] > -b[j]) ? 1.0 : 0.0; break;
    }
  }
}

bool Validation::has(const std::string& code) const {
  return std::any_of(issues.begin(), issues.end(), [&](const Diagnostic& d) { return d.code == code; });
}

std::string Validation::summary() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < issues.size(); ++i) {
    if (i) os << "; ";
    os << issues[i].code << ": " << issues[i].message;
  }
  return os.str();
}

namespace {

bool is_psd_dense(const SpMat& Q) {
  if (Q.rows() == 0) return true;
  const Mat D = Mat(Q);
  Eigen::SelfAdjointEigenSolver<Mat> es(D, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) return false;
  const double scale = std::max(1.0, D.cwiseAbs().maxCoeff());
  return es.eigenvalues().minCoeff() >= -1e-10 * scale;
}

void check_block(const QuadProgram& blk, const std::string& where, Validation& v, bool require_pd) {
  try {
    blk.check_dims();
  } catch (const DimensionError& e) {
    v.issues.push_back({"dimension mismatch", where + e.what()});
    return;
  }
  if (!is_symmetric(blk.Q)) v.issues.push_back({"asymmetric Hessian", where + "Q differs from its transpose"});
  else if (require_pd && !is_positive_definite(blk.Q))
    v.issues.push_back({"indefinite Hessian", where + "Q is not positive definite"});
  else if (!require_pd && !is_psd_dense(blk.Q))
    v.issues.push_back({"indefinite Hessian", where + "Q is not positive semidefinite"});
  if (!blk.q.allFinite() || !blk.b.allFinite()) v.issues.push_back({"non-finite data", where + "q or b has NaN/Inf"});
  for (int j = 0; j < blk.m(); ++j)
    if (blk.kinds[static_cast<std::size_t>(j)] == RowKind::kBox && blk.b[j] < 0.0) {
      v.issues.push_back({"empty box", where + "box row " + std::to_string(j) + " has negative bound"});
      break;
    }
}

}  // namespace

Validation validate(const QuadProgram& p) {
  Validation v;
  check_block(p, "", v, true);
  return v;
}

Validation validate(const ConsensusQP& p) {
  Validation v;
  if (p.blocks.empty()) v.issues.push_back({"empty problem", "no blocks"});
  if (p.blocks.size() != p.mapping.size()) {
    v.issues.push_back({"dimension mismatch", "blocks and mapping differ in length"});
    return v;
  }
  std::vector<int> seen(static_cast<std::size_t>(std::max(p.n_global, 0)), 0);
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string where = "node " + std::to_string(i) + ": ";
    check_block(p.blocks[i], where, v, false);
    const auto& g = p.mapping[i];
    if (static_cast<int>(g.size()) != p.blocks[i].n())
      v.issues.push_back({"dimension mismatch", where + "mapping length differs from block size"});
    std::vector<int> sorted = g;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      v.issues.push_back({"duplicate mapping", where + "a global component is mapped twice"});
    for (int l : g) {
      if (l < 0 || l >= p.n_global) {
        v.issues.push_back({"mapping out of range", where + "global index " + std::to_string(l)});
        break;
      }
      seen[static_cast<std::size_t>(l)] = 1;
    }
  }
  for (int l = 0; l < p.n_global; ++l)
    if (!seen[static_cast<std::size_t>(l)]) {
      v.issues.push_back({"uncovered global component", "global index " + std::to_string(l) + " has no owner"});
      break;
    }
  if (v.ok()) {
    try {
      (void)centralize(p);
    } catch (const ConfigError& e) {
      v.issues.push_back({"indefinite Hessian", e.what()});
    }
  }
  return v;
}

double kkt_residual(const QuadProgram& p, const Vec& x, const Vec& lambda) {
  const Vec Ax = p.A * x;
  const Vec Qx = p.Q * x;
  const Vec Atl = p.A.transpose() * lambda;
  const double stat_scale = std::max({1.0, Qx.lpNorm<Eigen::Infinity>(), p.q.lpNorm<Eigen::Infinity>(),
                                      Atl.lpNorm<Eigen::Infinity>()});
  double res = (Qx + p.q + Atl).lpNorm<Eigen::Infinity>() / stat_scale;
  const double prim_scale = std::max({1.0, Ax.size() ? Ax.lpNorm<Eigen::Infinity>() : 0.0,
                                      p.b.size() ? p.b.lpNorm<Eigen::Infinity>() : 0.0});
  const double lam_scale = std::max(1.0, lambda.size() ? lambda.lpNorm<Eigen::Infinity>() : 0.0);
  for (Eigen::Index j = 0; j < Ax.size(); ++j) {
    const double a = Ax[j], bj = p.b[j], l = lambda[j];
    double viol = 0.0, sign = 0.0, comp = 0.0;
    switch (p.kinds[static_cast<std::size_t>(j)]) {
      case RowKind::kUpper:
        viol = std::max(0.0, a - bj);
        sign = std::max(0.0, -l);
        comp = std::abs(l) * std::abs(bj - a);
        break;
      case RowKind::kEquality:
        viol = std::abs(a - bj);
        break;
      case RowKind::kBox:
        viol = std::max(0.0, std::abs(a) - bj);
        // l > 0 pairs with the upper face, l < 0 with the lower face.
        comp = l > 0.0 ? l * std::abs(bj - a) : (l < 0.0 ? -l * std::abs(a + bj) : 0.0);
        break;
    }
    res = std::max(res, viol / prim_scale);
    res = std::max(res, sign / lam_scale);
    res = std::max(res, comp / (prim_scale * lam_scale));
  }
  return res;
}

double optimality_gap(const Vec& w, const Vec& w_star) {
  if (w.size() != w_star.size()) throw DimensionError("optimality_gap: size mismatch");
  if (w.size() == 0) return 0.0;
  return (w - w_star).norm() / std::sqrt(static_cast<double>(w.size()));
}

Metrics optimality_metrics(const Vec& w, const LabeledInstance& inst) {
  Metrics m;
  m.opt_gap = optimality_gap(w, inst.w_star);
  const QuadProgram c = centralize(inst.problem);
  Vec s;
  project_rows(c.A * w, c.b, c.kinds, s);
  m.prim_res = (c.A * w - s).norm();
  Vec lam = inst.lambda_star.size() == c.m() ? inst.lambda_star : Vec::Zero(c.m());
  m.dual_res = (c.Q * w + c.q + c.A.transpose() * lam).norm();
  return m;
}

}  // namespace dqp
