#pragma once

#include "eoskit/common.hpp"

#include <nlohmann/json.hpp>

namespace eoskit::analytic {

// Two-layer erf CNN f(x) = sum_{i,c} a_ic erf(w_c . x_i) with N patches of
// dimension S, C channels, linear teacher y = sum_i a*_i (w* . x_i).
struct TwoLayerConfig {
  double n = 0;
  double S = 0;
  double N = 0;
  double C = kInf;
  double sa2 = 1.0;  // readout variance per fan-in (sigma_a^2)
  double sw2 = 1.0;  // filter variance per fan-in (sigma_w^2)
  double s2 = 0.1;   // noise sigma^2
  double a_norm2 = 1.0;
  double w_norm2 = 1.0;
  // Keep the (Q_f + s2 I)^{-1} part of the output fluctuation matrix.
  bool include_fluctuation = true;
  // Iterate Tr Sigma to self-consistency instead of freezing it at sigma_w^2.
  bool trace_loop = false;

  void validate() const;
};

struct TwoLayerSolution {
  double alpha = 0.0;  // delta(x) = alpha y(x)
  double lambda_inf = 0.0;
  double lambda_y = 0.0;
  double l_star = 0.0;  // Sigma eigenvalue along w*
  double l_iso = 0.0;   // Sigma eigenvalue orthogonal to w*
  double trace_sigma = 0.0;
  double chi2 = 0.0;
  double q_train = 1.0;
  double alpha_ek = 0.0;
  double C_bar = 0.0;
  int roots_found = 0;  // sign changes detected on the scan grid
};

// 4 sa2 sw2 / (pi (1 + 2 sw2) N S).
double lambda_inf(const TwoLayerConfig& cfg);

// chi2 = alpha^2 n^2 lambda_inf |a*|^2 |w*|^2 / C.
double chi2(const TwoLayerConfig& cfg, double alpha, double lam_inf);

// Solves s2 alpha = 1 - q lambda_y / (lambda_y + s2/n) with lambda_y depending on
// alpha through l_*. Scans 256 grid points for sign changes, refines with
// TOMS 748 and returns the physical root (chi2 < 1) with the smallest chi2.
TwoLayerSolution solve_alpha(const TwoLayerConfig& cfg, double q_train, double C_bar);

// alpha_GP + (d alpha / d(1/C))|_{C=inf} / C.
double first_order_alpha(const TwoLayerConfig& cfg, double q_train, double C_bar);

// Sigma with eigenvalue l_* along w*/|w*| and l_iso on the complement.
Mat sigma_construct(const TwoLayerSolution& sol, const Vec& w_star);

nlohmann::json to_json(const TwoLayerSolution& s);

}  // namespace eoskit::analytic
