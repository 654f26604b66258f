#pragma once

#include "eoskit/common.hpp"
#include "eoskit/data_gen.hpp"
#include "eoskit/gp_inference.hpp"
#include "eoskit/kernel_core.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace eoskit::eos {

enum class Architecture { Fcn, Cnn };
enum class Scaling { Standard, MeanField };

// Layers are numbered 1..L (L = number of weight layers). Layer 1 maps input
// patches through the weight covariance Sigma; hidden layers 2..L-1 carry the
// pre-kernels K(l); layer L is the readout. An FCN is a CNN with one patch of
// dimension d and unit strides.
struct NetworkSpec {
  Architecture arch = Architecture::Fcn;
  int depth = 2;                  // L >= 2
  std::vector<double> widths;     // N_1..N_{L-1} (channels for CNNs); kInf allowed
  std::vector<double> variances;  // sigma_1^2..sigma_L^2, variance per fan-in
  // Activation applied to the pre-activations of layer l = 1..L-1.
  std::vector<kernel::ActivationKind> activations;
  int patches = 1;                // latent pixels of layer 1
  int patch_dim = 1;              // S_0 (= d for FCNs)
  std::vector<int> strides;       // strides of hidden layers 2..L-1
  double noise = 0.1;             // sigma^2
  Scaling scaling = Scaling::Standard;
  bool include_output_fluctuation = true;

  // Convenience builders with erf activations everywhere.
  static NetworkSpec fcn(int depth, int d, double width, std::vector<double> variances, double noise);
  static NetworkSpec cnn(int depth, int patches, int patch_dim, std::vector<int> strides, double channels,
                         std::vector<double> variances, double noise);

  void validate() const;  // throws ConfigError
  // Pixel count of layer l (1..L-1).
  int pixels(int layer) const;
  // Stride of layer l (2..L); the readout stride equals pixels(L-1).
  int stride(int layer) const;
  // Readout variance after the scaling convention.
  double readout_variance() const;
};

enum class UpdateOrder { GaussSeidel, Jacobi };

struct SolverOptions {
  double damping = 1.0;  // beta in (0, 1]
  int max_iters = 2000;
  double residual_tol = 1e-10;  // on max_block |F(x) - x|_F / |x|_F
  std::vector<double> schedule;  // strictly descending widths; empty -> spec widths
  UpdateOrder order = UpdateOrder::GaussSeidel;
  bool newton_krylov = true;
  int krylov_dim = 30;
  double fd_step = 1e-6;  // relative to |x|
  int newton_max_iters = 50;
  int stall_window = 10;
  double psd_floor = 1e-12;  // relative eigenvalue floor used by PSD clipping

  void validate() const;
};

struct EoSState {
  Mat Sigma;
  std::vector<Mat> K;  // K[l] for l = 2..L-1 stored at index l-2
  std::vector<Mat> Q;  // Q[l] likewise
  Mat Qf;
  gp::PosteriorSummary posterior;
  std::vector<Mat> A;  // hidden A(l) for l = 2..L-1, then A_out last
  double chi = 0.0;
  double mf = 0.0;
  double width = kInf;  // width used in this solve
  int iterations = 0;
  int newton_steps = 0;
  int psd_clips = 0;
  double step_residual = kInf;     // last Picard step size metric
  double inverse_residual = kInf;  // max relative inverse-form residual
  bool converged = false;
};

struct StepRecord {
  double width = kInf;
  int iterations = 0;
  int newton_steps = 0;
  double step_residual = 0.0;
  double inverse_residual = 0.0;
  bool converged = false;
  double alpha = 0.0;
  double chi = 0.0;
  double train_mse = 0.0;
  double top_sigma = 0.0;
};

struct SolveResult {
  EoSState state;                // state at the last schedule entry
  std::vector<StepRecord> steps;
  std::vector<double> trace;     // step metric per Picard iteration, all steps
};

// A(l) = Q^{-1} (Q - K) Q^{-1}.
Mat hidden_fluctuation(const Mat& K, const Mat& Q);

// D_KL(N(0,K) || N(0,Q)).
double kl_divergence(const Mat& K, const Mat& Q);

// 2 dD_KL(K_upper || Q(K_lower)) / dK_lower with Q = (s2/stride) sum_i phi(block_i(K_lower)).
Mat kl_gradient(const Mat& K_upper, const Mat& K_lower, kernel::ActivationKind kind, double s2,
                const kernel::Stride& geometry);
Mat kl_gradient(const Mat& K_upper, const Mat& K_lower, kernel::ActivationKind kind, double s2);

// M_lower = sum_i scatter(adjoint of block_i contracted with A); A lives on the upper space.
Mat strided_adjoint(kernel::ActivationKind kind, const Mat& K_lower, double s2, const kernel::Stride& g, const Mat& A);

class Solver {
 public:
  Solver(NetworkSpec spec, const data::Dataset& data, SolverOptions options = {});

  // Anneals through options.schedule (or solves once at the spec widths).
  SolveResult solve(const std::function<void(const StepRecord&, const EoSState&)>& on_step = {});
  // Solve at the current widths from the given initial state.
  EoSState solve_at(EoSState init, std::vector<double>* trace = nullptr);

  EoSState gp_state() const;
  // Evaluates forward maps, posterior and fluctuation matrices for the unknowns in s.
  void refresh(EoSState& s) const;
  // One damped Picard sweep; returns the step metric max_block |F(x)-x|/|x|.
  double picard_step(EoSState& s, double damping) const;
  // Inverse-form residual stacked over unknown blocks (packed upper triangles).
  Vec residual(const EoSState& s) const;
  double relative_inverse_residual(const EoSState& s) const;

  void set_widths(double w);
  const NetworkSpec& spec() const { return spec_; }
  const SolverOptions& options() const { return opts_; }
  SolverOptions& options() { return opts_; }

  // Packing of the unknowns (Sigma, K(2..L-1)) with per-block scales.
  Vec pack(const EoSState& s, const std::vector<double>& scales) const;
  void unpack(const Vec& v, const std::vector<double>& scales, EoSState& s) const;
  std::vector<double> block_scales(const EoSState& s) const;

 private:
  struct Coupling {
    double out = 0.0;               // multiplies adj(A_out) on the top unknown
    std::vector<double> hidden;     // hidden[l] multiplies adj(A(l+1)) on layer l unknown
  };
  Coupling coupling() const;
  std::vector<Mat> layer1_blocks(const Mat& Sigma) const;
  std::vector<Mat> lower_blocks(const EoSState& s, int layer) const;  // blocks of K(layer) at stride(layer+1)
  Mat sigma_adjoint(const Mat& Sigma, const Mat& A, double s2) const;
  Mat raw_update(const EoSState& s, int layer, const Mat& A_upper, double c) const;
  EoSState picard_map(const EoSState& s) const;  // Jacobi, undamped, unclipped
  bool newton_krylov(EoSState& s, std::vector<double>* trace) const;
  double step_metric(const EoSState& a, const EoSState& b) const;
  Mat readout_linearization(const EoSState& s) const;

  NetworkSpec spec_;
  Mat X_;
  Vec y_;
  SolverOptions opts_;
  std::vector<Mat> patches1_;  // patch rows P_i for layer-1 blocks at stride(2)
};

// Inverse-form residual of the FCN / CNN equations at state s (kernels refreshed first).
Vec fcn_residual(const EoSState& s, const NetworkSpec& spec, const data::Dataset& data);
Vec cnn_residual(const EoSState& s, const NetworkSpec& spec, const data::Dataset& data);

// Feature-learning scale: chi = sum_ik v_ik^2 / (width * pixels * sum_i v_ii) with
// v_ik = delta^T Q[(.,i),(.,k)] delta over a point-major (n x pixels) kernel.
// For pixels = 1 this is delta^T Q delta / width.
double emergent_scale(const Vec& delta, const Mat& Q, int pixels, double width);
// delta^T Q delta summed over diagonal pixel blocks: the width at which chi = 1 for pixels = 1.
double width_at_chi_one(const Vec& delta, const Mat& Q, int pixels);

// Tr[(Qf + s2 I)^{-1} Qf] / (width * pixels).
double mf_diagnostic(const Mat& Qf, double s2, double width, int pixels);

double top_eigenvalue(const Mat& m);

// Infinite-width output kernel Q_f on the rows of X (flat patch layout of the spec).
// Two-layer nets stream the per-pixel blocks so only two n x n buffers are live.
Mat gp_output_kernel(const NetworkSpec& spec, const Mat& X);

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SolverOptions& o);
SolverOptions options_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StepRecord& r);

}  // namespace eoskit::eos
