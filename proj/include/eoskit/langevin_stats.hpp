#pragma once

#include "eoskit/common.hpp"
#include "eoskit/kernel_core.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <vector>

namespace eoskit::langevin {

struct ProjectionStats {
  std::string label;
  std::size_t samples = 0;
  double mean = 0.0;
  double variance = 0.0;
  double skewness = 0.0;
  double excess_kurtosis = 0.0;
  double ks_distance = 0.0;  // against the normal with the sample mean and variance
  // Half the difference between the two seed-halves, per statistic.
  double variance_split_err = 0.0;
  double kurtosis_split_err = 0.0;
};

// Moments and KS distance of one pooled sample.
ProjectionStats describe(const std::vector<double>& x, const std::string& label = {});

// Per-direction report. groups[k] holds the samples of direction k split by
// seed (groups[k][s]); the seed split feeds the reproducibility error bars.
std::vector<ProjectionStats> gaussianity_report(const std::vector<std::vector<std::vector<double>>>& groups,
                                                const std::vector<std::string>& labels);

struct Correlation {
  std::string label;
  double rho = 0.0;
  double stderr_boot = 0.0;  // seed-level bootstrap
  std::size_t pairs = 0;
  bool consistent_with_zero = false;  // |rho| < 3 stderr
};

double pearson(const std::vector<double>& x, const std::vector<double>& y);

// x[s][c], y[s][c]: summaries of channel c in seed s. Pearson over all pairs,
// bootstrap over seeds with a fixed generator.
Correlation correlate(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
                      const std::string& label, int resamples = 1000, std::uint64_t seed = 7);

// Snapshots are (dim x channels) matrices of pre-activations or weights.
// K_hat = mean over snapshots and channels of h h^T.
Mat empirical_covariance(const std::vector<Mat>& snapshots);
// s2 * mean of phi(h) phi(h)^T.
Mat empirical_post_kernel(const std::vector<Mat>& snapshots, kernel::ActivationKind kind, double s2);

// Mean and standard error across seeds of a per-seed scalar.
struct SeedMean {
  double mean = 0.0;
  double stderr_seeds = 0.0;
};
SeedMean seed_mean(const std::vector<double>& per_seed);

nlohmann::json to_json(const ProjectionStats& p);
nlohmann::json to_json(const Correlation& c);

}  // namespace eoskit::langevin
