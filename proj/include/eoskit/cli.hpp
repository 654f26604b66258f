#pragma once

#include "eoskit/data_gen.hpp"
#include "eoskit/eos_solver.hpp"
#include "eoskit/langevin_oracle.hpp"
#include "eoskit/two_layer_analytic.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace eoskit::cli {

inline constexpr int kSchemaVersion = 1;

struct DataSection {
  std::string generator = "linear_cnn_teacher";  // gaussian | linear_cnn_teacher | fcn_teacher | cnn_teacher | file
  int n = 0;
  std::uint64_t seed = 0;
  std::uint64_t teacher_seed = 0;
  std::vector<double> teacher_variances;  // network teachers; defaults to the model variances
  std::filesystem::path path;             // generator "file"
};

struct AnalyticSection {
  std::vector<double> channels;  // C values; "inf" allowed
  std::optional<double> q_train;  // default: from alpha_EK and C_bar
  std::optional<double> c_bar;    // default: from the EK spectrum
  int ek_samples = 4000;
  std::uint64_t ek_seed = 0;
  std::optional<double> a_norm2, w_norm2;  // default: linear teacher norms
  bool include_fluctuation = true;
  bool trace_loop = false;
};

struct OutputSection {
  std::filesystem::path directory = "out";
  std::vector<std::string> formats{"json", "csv"};  // plus "kernels"
  bool wants(const std::string& f) const;
};

struct ExperimentConfig {
  int schema = kSchemaVersion;
  nlohmann::json model_json;
  eos::NetworkSpec model;
  DataSection data;
  eos::SolverOptions solver;
  std::optional<nlohmann::json> oracle_json;
  std::optional<AnalyticSection> analytic;
  OutputSection outputs;
};

ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

struct BuiltData {
  data::Dataset dataset;
  std::optional<data::TeacherSpec> teacher;
};
BuiltData build_data(const ExperimentConfig& cfg);

// Fingerprint of the model section and the generated data; compare refuses on mismatch.
std::string experiment_digest(const ExperimentConfig& cfg, const data::Dataset& ds);

// Locale-independent shortest round-trip formatting.
std::string fmt(double v);

struct Tolerances {
  double train_mse = 0.15;
  double top_sigma = 0.15;
  double alpha = 0.15;
};
Tolerances load_tolerances(const std::filesystem::path& path);

void cmd_eos_solve(const ExperimentConfig& cfg);
void cmd_analytic(const ExperimentConfig& cfg, std::ostream& warn);
void cmd_langevin(const ExperimentConfig& cfg);
// Writes the CSV report to `out`; throws ComparisonError on digest mismatch or any failing row.
void cmd_compare(const std::filesystem::path& a, const std::filesystem::path& b, const Tolerances& tol,
                 std::ostream& out);

// Maps ConfigError / json errors -> 2, NumericalError -> 3, ComparisonError -> 4.
int run_guarded(const std::function<void()>& body, std::ostream& err);

}  // namespace eoskit::cli
