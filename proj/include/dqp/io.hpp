#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "dqp/generators.hpp"
#include "dqp/qp_model.hpp"

namespace dqp {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// 64-bit FNV-1a.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);
/// Hash of a JSON value's canonical (sorted-key, compact) dump.
std::string config_hash(const json& j);

json vec_to_json(const Vec& v);
Vec vec_from_json(const json& j);
/// {rows, cols, triplets: [[row, col, value], ...]} in column order.
json spmat_to_json(const SpMat& M);
SpMat spmat_from_json(const json& j);

json program_to_json(const QuadProgram& p);
QuadProgram program_from_json(const json& j);

json instance_to_json(const LabeledInstance& inst);
LabeledInstance instance_from_json(const json& j);

json genspec_to_json(const GenSpec& s);
/// Rejects unknown fields.
GenSpec genspec_from_json(const json& j);

/// One record per line. Doubles are written in shortest round-trip form, so
/// reading back is bit-exact. A non-empty `config_hash` is stamped on every line.
void write_dataset(const std::string& path, const std::vector<LabeledInstance>& instances,
                   const std::string& config_hash = "");
std::vector<LabeledInstance> read_dataset(const std::string& path);
std::string dataset_to_string(const std::vector<LabeledInstance>& instances, const std::string& config_hash = "");

/// FNV-1a over the file bytes, hex encoded.
std::string file_fingerprint(const std::string& path);

std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);

/// Throws ConfigError listing any key of `j` outside `allowed`.
void reject_unknown_keys(const json& j, const std::vector<std::string>& allowed, const std::string& where);

}  // namespace dqp
