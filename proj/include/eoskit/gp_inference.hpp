#pragma once

#include "eoskit/common.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <optional>

namespace eoskit::gp {

struct PosteriorSummary {
  Vec f_bar;
  Vec delta;  // (y - f_bar) / s2
  double train_mse = 0.0;
  // s2^{-1} sum (f_bar - y) y / sum y^2 (non-positive for a sensible fit).
  double alpha_overlap = 0.0;
  // Discrepancy overlap y^T delta / y^T y, i.e. the alpha with delta = alpha * y.
  // Equals -alpha_overlap.
  double alpha = 0.0;
};

PosteriorSummary posterior_mean(const Mat& Qf, const Vec& y, double s2);

Vec posterior_predict(const Mat& Q_train, const Mat& Q_cross, const Vec& y, double s2);

// delta delta^T - (Qf + s2 I)^{-1}.
Mat output_fluctuation(const Vec& delta, const Mat& Qf, double s2);

enum class Retention {
  All,   // every eigenvalue of the Gram matrix
  Gap,   // eigenvalues above the largest multiplicative gap (resolution floor)
  TopK,  // the `top_k` largest eigenvalues
};

struct SpectrumOptions {
  Retention retention = Retention::Gap;
  int top_k = 0;
  // A gap is only accepted as the resolution floor when lambda_k / lambda_{k+1} exceeds this.
  double min_gap_ratio = 2.0;
  // Eigenvalues below rel_zero * lambda_max count as numerically zero.
  double rel_zero = 1e-10;
  // Allowed negative mass (sum of negative eigenvalues relative to trace).
  double negative_tolerance = 1e-8;
};

struct EKSpectrum {
  Vec eigenvalues;  // all Gram eigenvalues / M, descending
  int retained = 0;
  double lambda_y = 0.0;  // Rayleigh quotient of the target (0 when no target given)
  double C_bar = 0.0;
  int n = 0;
  double s2 = 0.0;
  int M = 0;
};

using KernelFn = std::function<Mat(const Mat& Xa, const Mat& Xb)>;

// Diagonalizes the M x M Gram matrix of kernel_fn on measure_sample (rows are
// i.i.d. inputs) and evaluates C_bar_n over the retained spectrum.
EKSpectrum ek_spectrum(const KernelFn& kernel_fn, const Mat& measure_sample, int n, double s2,
                       const SpectrumOptions& opts = {}, const std::optional<Vec>& target = std::nullopt);
// Spectrum from an already-built Gram matrix G (M x M); eigenvalues of G/M.
EKSpectrum ek_spectrum_from_gram(const Mat& G, int n, double s2, const SpectrumOptions& opts = {},
                                 const std::optional<Vec>& target = std::nullopt);
int retained_count(const Vec& descending, const SpectrumOptions& opts);
double c_bar(const Vec& eigenvalues, int count, int n, double s2);

struct EkAlpha {
  double alpha = 0.0;     // delta(x) = alpha * y(x), units 1/s2
  double alpha_ek = 0.0;  // (s2/n) / (lambda_y + s2/n)
};

EkAlpha ek_alpha(double lambda_y, int n, double s2, double q_train);

double q_train(double alpha_ek, double C_bar, double s2);

nlohmann::json to_json(const PosteriorSummary& p);
nlohmann::json to_json(const EKSpectrum& s);

}  // namespace eoskit::gp
