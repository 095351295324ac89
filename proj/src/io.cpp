#include "dqp/io.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dqp {

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string config_hash(const json& j) { return hex64(fnv1a(j.dump())); }

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Vec vec_from_json(const json& j) {
  if (!j.is_array()) throw ConfigError("expected a numeric array");
  Vec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

json spmat_to_json(const SpMat& M) {
  json t = json::array();
  for (int c = 0; c < M.outerSize(); ++c)
    for (SpMat::InnerIterator it(M, c); it; ++it) t.push_back(json::array({it.row(), it.col(), it.value()}));
  return json{{"rows", M.rows()}, {"cols", M.cols()}, {"triplets", std::move(t)}};
}

SpMat spmat_from_json(const json& j) {
  const int rows = j.at("rows").get<int>(), cols = j.at("cols").get<int>();
  if (rows < 0 || cols < 0) throw ConfigError("matrix with negative size");
  std::vector<Triplet> trips;
  for (const auto& t : j.at("triplets")) {
    const int r = t.at(0).get<int>(), c = t.at(1).get<int>();
    if (r < 0 || r >= rows || c < 0 || c >= cols) throw ConfigError("matrix triplet index out of range");
    trips.emplace_back(r, c, t.at(2).get<double>());
  }
  SpMat M(rows, cols);
  // Duplicates would be summed; the format forbids them.
  M.setFromTriplets(trips.begin(), trips.end());
  if (static_cast<std::size_t>(M.nonZeros()) != trips.size()) throw ConfigError("matrix has duplicate entries");
  return M;
}

json program_to_json(const QuadProgram& p) {
  json kinds = json::array();
  for (RowKind k : p.kinds) kinds.push_back(to_string(k));
  return json{{"Q", spmat_to_json(p.Q)}, {"q", vec_to_json(p.q)}, {"A", spmat_to_json(p.A)},
              {"b", vec_to_json(p.b)},   {"row_kinds", kinds}};
}

QuadProgram program_from_json(const json& j) {
  QuadProgram p;
  p.Q = spmat_from_json(j.at("Q"));
  p.q = vec_from_json(j.at("q"));
  p.A = spmat_from_json(j.at("A"));
  p.b = vec_from_json(j.at("b"));
  for (const auto& k : j.at("row_kinds")) p.kinds.push_back(row_kind_from_string(k.get<std::string>()));
  p.check_dims();
  return p;
}

json instance_to_json(const LabeledInstance& inst) {
  json blocks = json::array();
  for (const auto& b : inst.problem.blocks) blocks.push_back(program_to_json(b));
  return json{{"schema_version", kSchemaVersion},
              {"kind", inst.kind},
              {"seed", inst.seed},
              {"n_global", inst.problem.n_global},
              {"blocks", std::move(blocks)},
              {"mapping", inst.problem.mapping},
              {"w_star", vec_to_json(inst.w_star)},
              {"lambda_star", vec_to_json(inst.lambda_star)},
              {"label_gap", inst.label_gap}};
}

LabeledInstance instance_from_json(const json& j) {
  if (j.at("schema_version").get<int>() != kSchemaVersion) throw ConfigError("unsupported dataset schema_version");
  LabeledInstance inst;
  inst.kind = j.at("kind").get<std::string>();
  inst.seed = j.at("seed").get<std::uint64_t>();
  inst.problem.n_global = j.at("n_global").get<int>();
  for (const auto& b : j.at("blocks")) inst.problem.blocks.push_back(program_from_json(b));
  inst.problem.mapping = j.at("mapping").get<std::vector<std::vector<int>>>();
  inst.w_star = vec_from_json(j.at("w_star"));
  if (j.contains("lambda_star")) inst.lambda_star = vec_from_json(j.at("lambda_star"));
  inst.label_gap = j.at("label_gap").get<double>();
  if (inst.w_star.size() != inst.problem.n_global) throw ConfigError("w_star length differs from n_global");
  return inst;
}

json genspec_to_json(const GenSpec& s) {
  return json{{"kind", s.kind}, {"seed", s.seed},       {"n", s.n},
              {"m", s.m},       {"p", s.p},             {"grid_rows", s.grid_rows},
              {"grid_cols", s.grid_cols}, {"n_i", s.n_i}, {"m_ij", s.m_ij},
              {"p_ij", s.p_ij}, {"N", s.N},             {"T", s.T},
              {"k", s.k},       {"m_i", s.m_i},         {"n_nodes", s.n_nodes},
              {"n_edges", s.n_edges}, {"n_inject", s.n_inject}};
}

GenSpec genspec_from_json(const json& j) {
  reject_unknown_keys(j, {"kind", "seed", "n", "m", "p", "grid_rows", "grid_cols", "grid_side", "n_i", "m_ij", "p_ij",
                          "N", "T", "k", "m_i", "n_nodes", "n_edges", "n_inject"},
                      "generator spec");
  GenSpec s;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("kind", s.kind);
  get("seed", s.seed);
  get("n", s.n);
  get("m", s.m);
  get("p", s.p);
  if (j.contains("grid_side")) s.grid_rows = s.grid_cols = j.at("grid_side").get<int>();
  get("grid_rows", s.grid_rows);
  get("grid_cols", s.grid_cols);
  get("n_i", s.n_i);
  get("m_ij", s.m_ij);
  get("p_ij", s.p_ij);
  get("N", s.N);
  get("T", s.T);
  get("k", s.k);
  get("m_i", s.m_i);
  get("n_nodes", s.n_nodes);
  get("n_edges", s.n_edges);
  get("n_inject", s.n_inject);
  s.check();
  return s;
}

std::string dataset_to_string(const std::vector<LabeledInstance>& instances, const std::string& config_hash) {
  std::string out;
  for (const auto& inst : instances) {
    json j = instance_to_json(inst);
    if (!config_hash.empty()) j["config_hash"] = config_hash;
    out += j.dump();
    out += '\n';
  }
  return out;
}

void write_dataset(const std::string& path, const std::vector<LabeledInstance>& instances,
                   const std::string& config_hash) {
  write_text(path, dataset_to_string(instances, config_hash));
}

std::vector<LabeledInstance> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset '" + path + "'");
  std::vector<LabeledInstance> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(instance_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write '" + path + "'");
  out << text;
  if (!out) throw ConfigError("write failed for '" + path + "'");
}

std::string file_fingerprint(const std::string& path) { return hex64(fnv1a(read_text(path))); }

void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
      throw ConfigError(where + ": unknown field '" + it.key() + "'");
}

}  // namespace dqp
