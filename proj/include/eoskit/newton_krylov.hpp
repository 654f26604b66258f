#pragma once

#include "eoskit/common.hpp"

#include <functional>

namespace eoskit::nk {

using Operator = std::function<Vec(const Vec&)>;

struct GmresResult {
  Vec x;
  double relative_residual = 0.0;
  int iterations = 0;
};

// Restarted GMRES with Givens rotations, zero initial guess.
GmresResult gmres(const Operator& A, const Vec& b, int restart, int max_restarts, double rel_tol);

struct NewtonOptions {
  int max_iters = 50;
  int krylov_dim = 30;
  int max_restarts = 3;
  double fd_step = 1e-6;   // h = fd_step * max(1, |x|) / |v|
  double abs_tol = 1e-12;  // on |G(x)|
  int max_backtracks = 8;
};

struct NewtonResult {
  Vec x;
  double residual_norm = 0.0;
  int iterations = 0;
  int linear_iterations = 0;
  bool converged = false;
};

// Jacobian-free Newton-Krylov for G(x) = 0 with finite-difference
// directional derivatives and a backtracking line search on |G|.
// G may throw NumericalError; that point counts as a failed trial.
// `done(x, g)` may stop the iteration early on a caller-defined criterion.
NewtonResult newton_krylov(const Operator& G, Vec x0, const NewtonOptions& opts,
                           const std::function<bool(const Vec&, const Vec&)>& done = {});

}  // namespace eoskit::nk
