#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "dqp/dqp.hpp"
#include "dqp/evaluate.hpp"
#include "dqp/generators.hpp"
#include "dqp/io.hpp"
#include "dqp/label.hpp"
#include "dqp/osqp.hpp"
#include "dqp/pac_bayes.hpp"
#include "dqp/train.hpp"

namespace py = pybind11;
using namespace dqp;

namespace {

QuadProgram dense_program(const Mat& Q, const Vec& q, const Mat& A, const Vec& b,
                          const std::vector<std::string>& kinds) {
  QuadProgram p;
  p.Q = to_sparse(Q);
  p.q = q;
  p.A = A.rows() ? to_sparse(A) : SpMat(0, Q.rows());
  p.b = b;
  if (kinds.empty()) {
    p.kinds.assign(static_cast<std::size_t>(A.rows()), RowKind::kUpper);
  } else {
    for (const auto& k : kinds) p.kinds.push_back(row_kind_from_string(k));
  }
  p.check_dims();
  return p;
}

std::vector<LabeledInstance> parse_lines(const std::string& text) {
  std::vector<LabeledInstance> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) out.push_back(instance_from_json(json::parse(line)));
  return out;
}

UnfoldedOptions unfolded_for(const LabeledInstance& inst, const Policy& p) {
  UnfoldedOptions o;
  o.centralized = inst.problem.num_nodes() == 1 && !p.layout.learn_mu;
  return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Distributed operator-splitting QP solver with learned penalty policies";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<IntegrityError>(m, "IntegrityError", PyExc_RuntimeError);

  m.def(
      "osqp_solve",
      [](const Mat& Q, const Vec& q, const Mat& A, const Vec& b, const std::vector<std::string>& kinds, double rho,
         double sigma, double alpha, bool adaptive, int max_iter, double eps) {
        const QuadProgram p = dense_program(Q, q, A, b, kinds);
        OsqpSettings s;
        s.rho = rho;
        s.sigma = sigma;
        s.alpha = alpha;
        s.mode = adaptive ? PenaltyMode::kAdaptive : PenaltyMode::kFixed;
        s.max_iter = max_iter;
        s.eps_prim = s.eps_dual = eps;
        const OsqpResult r = osqp_solve(p, s);
        py::dict d;
        d["x"] = r.x;
        d["lambda"] = r.state.lambda;
        d["iters"] = r.iters;
        d["rho"] = r.state.rho;
        return d;
      },
      py::arg("Q"), py::arg("q"), py::arg("A"), py::arg("b"), py::arg("kinds") = std::vector<std::string>{},
      py::arg("rho") = 1.0, py::arg("sigma") = 1e-6, py::arg("alpha") = 1.6, py::arg("adaptive") = false,
      py::arg("max_iter") = 4000, py::arg("eps") = 0.0,
      "Operator-splitting solve of min 1/2 x'Qx + q'x subject to the rows of A x against b.");

  m.def(
      "label",
      [](const Mat& Q, const Vec& q, const Mat& A, const Vec& b, const std::vector<std::string>& kinds) {
        const LabelResult r = label_program(dense_program(Q, q, A, b, kinds));
        return py::make_tuple(r.x, r.lambda, r.residual);
      },
      py::arg("Q"), py::arg("q"), py::arg("A"), py::arg("b"), py::arg("kinds") = std::vector<std::string>{},
      "High-accuracy solution (x, multipliers, scaled KKT residual).");

  m.def(
      "generate",
      [](const std::string& spec_json, int H, int threads) {
        const GenSpec spec = genspec_from_json(json::parse(spec_json));
        spec.check();
        py::gil_scoped_release release;
        return dataset_to_string(build_dataset(spec, H, threads).instances);
      },
      py::arg("spec"), py::arg("H"), py::arg("threads") = 1, "Labeled dataset as JSON lines.");

  m.def(
      "dqp_solve",
      [](const std::string& instance_json, double rho, double mu, double alpha, bool adaptive, int max_iter) {
        const LabeledInstance inst = instance_from_json(json::parse(instance_json));
        DqpSettings s;
        s.rho = rho;
        s.mu = mu;
        s.alpha = alpha;
        s.mode = adaptive ? PenaltyMode::kAdaptive : PenaltyMode::kFixed;
        s.max_iter = max_iter;
        const DqpResult r = dqp_solve(inst.problem, s, &inst.w_star);
        std::vector<double> gaps;
        for (const auto& row : r.trace) gaps.push_back(row.gap);
        py::dict d;
        d["w"] = r.w;
        d["gaps"] = gaps;
        d["iters"] = r.iters;
        return d;
      },
      py::arg("instance"), py::arg("rho") = 1.0, py::arg("mu") = 1.0, py::arg("alpha") = 1.6,
      py::arg("adaptive") = false, py::arg("max_iter") = 1000,
      "Distributed solve of one JSON instance; gaps are measured against its label.");

  m.def("optimality_gap", &optimality_gap, py::arg("w"), py::arg("w_star"));

  m.def(
      "train",
      [](const std::string& dataset, int K, int epochs, double lr, int batch, bool closed_loop, std::uint64_t seed) {
        const auto data = parse_lines(dataset);
        if (data.empty()) throw ConfigError("train: empty dataset");
        const auto& first = data.front();
        const bool centralized = first.problem.num_nodes() == 1 && !is_distributed_kind(first.kind);
        PolicyLayout layout{K, first.problem.num_nodes(), Sharing::kShared, closed_loop, !centralized};
        const double rho = penalty_median(first.kind);
        const Policy init = init_policy(layout, PolicyInit{rho, rho, 1.6, seed});
        TrainConfig tc;
        tc.epochs = epochs;
        tc.adam.lr = lr;
        tc.batch = batch;
        tc.seed = seed;
        tc.unfolded = unfolded_for(first, init);
        py::gil_scoped_release release;
        const TrainResult r = train(data, tc, init);
        return policy_to_json(r.policy).dump();
      },
      py::arg("dataset"), py::arg("K") = 10, py::arg("epochs") = 5, py::arg("lr") = 1e-3, py::arg("batch") = 50,
      py::arg("closed_loop") = true, py::arg("seed") = 0, "Trains a shared policy; returns it as JSON.");

  m.def(
      "loss",
      [](const std::string& instance_json, const std::string& policy_json) {
        const LabeledInstance inst = instance_from_json(json::parse(instance_json));
        const Policy p = policy_from_json(json::parse(policy_json));
        Vec g;
        const double L = instance_loss(inst, p, unfolded_for(inst, p), &g);
        return py::make_tuple(L, g);
      },
      py::arg("instance"), py::arg("policy"), "Unrolled training loss and its parameter gradient.");

  m.def(
      "unrolled_gaps",
      [](const std::string& instance_json, const std::string& policy_json) {
        const LabeledInstance inst = instance_from_json(json::parse(instance_json));
        const Policy p = policy_from_json(json::parse(policy_json));
        const UnrolledResult r = forward_unrolled(inst.problem, p, unfolded_for(inst, p), false);
        std::vector<double> gaps;
        for (const auto& w : r.w) gaps.push_back(optimality_gap(w, inst.w_star));
        return gaps;
      },
      py::arg("instance"), py::arg("policy"));

  m.def("kl_bernoulli", &kl_bernoulli, py::arg("p"), py::arg("q"));
  m.def("kl_inverse", &kl_inverse, py::arg("p"), py::arg("c"));
  m.def("sample_convergence_bound", &sample_convergence_bound, py::arg("q_hat"), py::arg("M"), py::arg("eps"));
  m.def("pac_bound", &pac_bound, py::arg("q_bar"), py::arg("kl"), py::arg("H"), py::arg("delta"));
  m.def("progress_metric", &progress_metric, py::arg("w_K"), py::arg("w_0"), py::arg("w_star"));
  m.def("adapt_rho", [](double prim, double dual, double rho) { return adapt_rho(prim, dual, rho); },
        py::arg("prim_res"), py::arg("dual_res"), py::arg("rho"));
  m.def("penalty_sweep", &penalty_sweep, py::arg("kind"));
  m.attr("SCHEMA_VERSION") = kSchemaVersion;
}
