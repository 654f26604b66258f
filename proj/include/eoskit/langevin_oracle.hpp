#pragma once

#include "eoskit/common.hpp"
#include "eoskit/data_gen.hpp"
#include "eoskit/eos_solver.hpp"
#include "eoskit/langevin_stats.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <deque>
#include <filesystem>
#include <string>
#include <vector>

namespace eoskit::langevin {

struct AdaptiveOptions {
  int window = 500;             // rolling window (epochs)
  double spike_factor = 5.0;    // spike: loss - rolling mean > factor * rolling std
  double decay = 0.7;           // lr <- decay * lr on a spike
  long quiet_epochs = 50000;    // after this many spike-free epochs: lr <- final_factor * lr, then frozen
  double final_factor = 0.5;
};

struct ScheduleEvent {
  long epoch = 0;
  double old_lr = 0.0;
  double new_lr = 0.0;
  std::string reason;  // "warmup_end", "spike", "quiet_freeze"
};

// Spike-detecting learning-rate controller. Warmup runs at lr0 * warmup_factor.
class AdaptiveScheduler {
 public:
  AdaptiveScheduler(double lr0, AdaptiveOptions opts, int warmup_epochs = 0, double warmup_factor = 1.0);
  // Feeds the loss of `epoch` (consecutive from 0) and returns the lr for the next epoch.
  double observe(long epoch, double loss);
  double lr() const { return lr_; }
  bool frozen() const { return frozen_; }
  const std::vector<ScheduleEvent>& log() const { return log_; }

 private:
  AdaptiveOptions opts_;
  double lr_;
  double base_lr_;
  int warmup_;
  std::deque<double> window_;
  double sum_ = 0.0, sum2_ = 0.0;
  long quiet_ = 0;
  bool frozen_ = false;
  std::vector<ScheduleEvent> log_;
};

// Runs the scheduler over a whole trace and returns its event log.
std::vector<ScheduleEvent> adaptive_schedule(const std::vector<double>& loss_trace, double lr0,
                                             const AdaptiveOptions& opts, int warmup_epochs = 0,
                                             double warmup_factor = 1.0);

enum class SchedulerKind { Fixed, Adaptive };
// Prior: per-layer step eta * var_l (weights move in prior-whitened units).
// None: the plain update w <- w - eta grad U + sqrt(2 eta) xi.
enum class Preconditioning { Prior, None };

struct LangevinConfig {
  eos::NetworkSpec spec;  // widths must be finite integers
  double lr = 2e-3;
  long burn_in = 10000;
  long epochs = 20000;  // sampling epochs after burn-in
  int sample_stride = 100;
  std::vector<std::uint64_t> seeds{0, 1};
  SchedulerKind scheduler = SchedulerKind::Fixed;
  int warmup_epochs = 100;
  double warmup_factor = 0.1;
  AdaptiveOptions adaptive;
  Preconditioning preconditioning = Preconditioning::Prior;
  int probe_points = 32;
  // Directions for first-layer projections; the first one is treated as the
  // teacher direction in correlation summaries. Random unit directions are appended.
  std::vector<Vec> directions;
  int random_directions = 4;
  std::uint64_t direction_seed = 12345;
  double divergence_factor = 1e6;
  std::filesystem::path log_dir;  // empty: no trajectory logs
  int log_stride = 100;

  void validate() const;
};

struct LayerVariance {
  int layer = 0;
  double expected = 0.0;
  double empirical = 0.0;
  double stderr_weights = 0.0;
  bool within_3se = false;
};

struct SeedSummary {
  std::uint64_t seed = 0;
  double final_lr = 0.0;
  double mean_train_mse = 0.0;  // time average of the instantaneous train MSE
  double fbar_mse = 0.0;        // train MSE of this seed's posterior-mean estimate
  double alpha = 0.0;
  double top_sigma = 0.0;
  std::size_t snapshots = 0;
  std::vector<ScheduleEvent> schedule;
};

struct EquilibriumStats {
  Mat Sigma_hat;
  double top_sigma = 0.0;
  double top_sigma_stderr = 0.0;  // across seeds
  std::vector<Mat> K_hat;         // layers 1..L-1 on the probe subset (point-major)
  std::vector<Mat> Q_hat;         // direct estimate of layer l+1 post-kernels
  Vec f_bar;
  double train_mse = 0.0;
  double alpha = 0.0;
  double alpha_stderr = 0.0;
  std::vector<double> mse_trace;  // seed-averaged per snapshot
  std::vector<ProjectionStats> gaussianity;
  std::vector<Correlation> inter_layer;
  std::vector<Correlation> inter_channel;
  std::vector<LayerVariance> layer_variances;
  bool stationary = false;
  bool seeds_agree = false;
  std::vector<SeedSummary> seeds;
  std::size_t samples_per_direction = 0;
};

// Network weights by layer: [0] = {W1 (C1 x S0)}, hidden l = {V_i (C_l x C_{l-1}), i < stride},
// last = {a (P x C_{L-1})}.
using Weights = std::vector<std::vector<Mat>>;

// Prior variance per weight for each layer.
std::vector<double> prior_variances(const eos::NetworkSpec& spec);
Weights sample_prior(const eos::NetworkSpec& spec, std::uint64_t seed);
Vec network_output(const eos::NetworkSpec& spec, const data::Dataset& data, const Weights& w);
// U = |f - y|^2 / (2 s2) + sum |w|^2 / (2 var); fills grad when given.
double potential(const eos::NetworkSpec& spec, const data::Dataset& data, const Weights& w, Weights* grad = nullptr);

EquilibriumStats sample_equilibrium(const LangevinConfig& cfg, const data::Dataset& data);

nlohmann::json to_json(const EquilibriumStats& s);
nlohmann::json to_json(const ScheduleEvent& e);
LangevinConfig langevin_config_from_json(const nlohmann::json& j, const eos::NetworkSpec& spec);

}  // namespace eoskit::langevin
