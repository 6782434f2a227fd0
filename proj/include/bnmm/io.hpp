#ifndef BNMM_IO_HPP
#define BNMM_IO_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "bnmm/core_types.hpp"
#include "bnmm/diagnostics.hpp"
#include "bnmm/effects.hpp"
#include "bnmm/sampler.hpp"
#include "bnmm/simulate.hpp"

namespace bnmm {

inline constexpr const char* kSchemaVersion = "1.0";
inline constexpr const char* kSoftwareVersion = "0.1.0";

/// Shortest exact decimal form of a double (round-trips bit-identically).
std::string format_double(double value);

/// Whole-file atomic write (temp file in the same directory, then rename).
void write_text_atomic(const std::string& path, const std::string& content);

std::string read_text(const std::string& path);

/// FNV-1a 64-bit digest, hex-encoded.
std::uint64_t fnv1a64(const std::string& bytes);
std::string digest_file(const std::string& path);

// Matrix CSV: one row per line, comma separated, no header. Parse errors name
// the file and the offending row.
Eigen::MatrixXd read_matrix_csv(const std::string& path);
void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m);
void write_matrix_csv(const std::string& path, const Eigen::MatrixXi& m);

/// Writes subjects.csv plus one connectome CSV per measurement into dir.
/// subjects.csv header: id,outcome,exposure,cov1..covP,connectomes where the
/// last column is a semicolon-separated list of relative matrix paths.
/// Covariates are written without the leading intercept.
void write_dataset(const Dataset& dataset, const std::string& dir);

/// Reads the subjects table (paths resolved relative to its directory) and
/// validates the assembled dataset.
Dataset read_dataset(const std::string& subjects_csv);

/// The subjects table plus every connectome file it references, in order.
std::vector<std::string> dataset_files(const std::string& subjects_csv);

// JSON codecs. Every document carries schema_version and kind; readers
// reject newer major versions loudly.

nlohmann::json hyperparams_to_json(const Hyperparams& h);
Hyperparams hyperparams_from_json(const nlohmann::json& j);

nlohmann::json chain_config_to_json(const ChainConfig& c);
ChainConfig chain_config_from_json(const nlohmann::json& j);

nlohmann::json sim_config_to_json(const SimConfig& c);
SimConfig sim_config_from_json(const nlohmann::json& j);

nlohmann::json model_state_to_json(const ModelState& s);
ModelState model_state_from_json(const nlohmann::json& j);

nlohmann::json ground_truth_to_json(const GroundTruth& t);
GroundTruth ground_truth_from_json(const nlohmann::json& j);

nlohmann::json effect_summary_to_json(const EffectSummary& s);

nlohmann::json gr_report_to_json(const GrReport& r, double warn_threshold = 1.1);

/// Columnar draws CSV: a single "#"-prefixed JSON metadata line, a header,
/// then one row per stored draw. Values round-trip bit-identically.
void write_draws_csv(const PosteriorDraws& draws, const std::string& path);
PosteriorDraws read_draws_csv(const std::string& path);

struct RunManifest {
    std::string command;
    std::string software_version = kSoftwareVersion;
    nlohmann::json config;
    nlohmann::json hyper;
    std::uint64_t master_seed = 0;
    std::vector<std::pair<std::string, std::string>> input_digests;   // path, fnv1a64 hex
    double wall_seconds = 0.0;
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

void write_json_atomic(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

/// Verifies schema_version (major must match) and kind; throws DataError.
void check_schema(const nlohmann::json& j, const std::string& kind);

}  // namespace bnmm

#endif  // BNMM_IO_HPP
