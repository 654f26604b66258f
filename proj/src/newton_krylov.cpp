#include "eoskit/newton_krylov.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace eoskit::nk {

GmresResult gmres(const Operator& A, const Vec& b, int restart, int max_restarts, double rel_tol) {
  const Eigen::Index n = b.size();
  GmresResult r;
  r.x = Vec::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) return r;
  const int m = std::max(1, std::min<int>(restart, static_cast<int>(n)));
  for (int cycle = 0; cycle <= max_restarts; ++cycle) {
    Vec res = b - (r.x.isZero() ? Vec::Zero(n) : A(r.x));
    double beta = res.norm();
    r.relative_residual = beta / bnorm;
    if (r.relative_residual <= rel_tol) return r;
    Mat V(n, m + 1);
    Mat H = Mat::Zero(m + 1, m);
    Vec cs = Vec::Zero(m), sn = Vec::Zero(m), g = Vec::Zero(m + 1);
    V.col(0) = res / beta;
    g(0) = beta;
    int k = 0;
    for (; k < m; ++k) {
      Vec w = A(V.col(k));
      ++r.iterations;
      for (int j = 0; j <= k; ++j) {  // modified Gram-Schmidt
        H(j, k) = w.dot(V.col(j));
        w -= H(j, k) * V.col(j);
      }
      H(k + 1, k) = w.norm();
      if (H(k + 1, k) > 0.0) V.col(k + 1) = w / H(k + 1, k);
      for (int j = 0; j < k; ++j) {
        double t = cs(j) * H(j, k) + sn(j) * H(j + 1, k);
        H(j + 1, k) = -sn(j) * H(j, k) + cs(j) * H(j + 1, k);
        H(j, k) = t;
      }
      double d = std::hypot(H(k, k), H(k + 1, k));
      cs(k) = d > 0.0 ? H(k, k) / d : 1.0;
      sn(k) = d > 0.0 ? H(k + 1, k) / d : 0.0;
      H(k, k) = d;
      H(k + 1, k) = 0.0;
      g(k + 1) = -sn(k) * g(k);
      g(k) = cs(k) * g(k);
      r.relative_residual = std::abs(g(k + 1)) / bnorm;
      if (r.relative_residual <= rel_tol || H(k, k) == 0.0) {
        ++k;
        break;
      }
    }
    Vec yk = H.topLeftCorner(k, k).triangularView<Eigen::Upper>().solve(g.head(k));
    r.x += V.leftCols(k) * yk;
    if (r.relative_residual <= rel_tol) return r;
  }
  return r;
}

NewtonResult newton_krylov(const Operator& G, Vec x0, const NewtonOptions& opts,
                           const std::function<bool(const Vec&, const Vec&)>& done) {
  NewtonResult out;
  out.x = std::move(x0);
  Vec g = G(out.x);
  out.residual_norm = g.norm();
  for (int it = 0; it < opts.max_iters; ++it) {
    if (out.residual_norm <= opts.abs_tol || (done && done(out.x, g))) {
      out.converged = true;
      return out;
    }
    const double xnorm = std::max(1.0, out.x.norm());
    Operator J = [&](const Vec& v) -> Vec {
      double vn = v.norm();
      if (vn == 0.0) return Vec::Zero(v.size());
      double h = opts.fd_step * xnorm / vn;
      return (G(out.x + h * v) - g) / h;
    };
    // Eisenstat-Walker style forcing term, capped.
    double eta = std::min(0.1, std::sqrt(out.residual_norm));
    GmresResult lin = gmres(J, -g, opts.krylov_dim, opts.max_restarts, eta);
    out.linear_iterations += lin.iterations;
    double lambda = 1.0;
    bool accepted = false;
    for (int bt = 0; bt <= opts.max_backtracks; ++bt, lambda *= 0.5) {
      Vec trial = out.x + lambda * lin.x;
      Vec gt;
      try {
        gt = G(trial);
      } catch (const NumericalError&) {
        continue;
      }
      double tn = gt.allFinite() ? gt.norm() : std::numeric_limits<double>::infinity();
      if (tn <= (1.0 - 1e-4 * lambda) * out.residual_norm) {
        out.x = std::move(trial);
        g = std::move(gt);
        out.residual_norm = tn;
        accepted = true;
        break;
      }
    }
    ++out.iterations;
    if (!accepted) return out;
  }
  out.converged = out.residual_norm <= opts.abs_tol || (done && done(out.x, g));
  return out;
}

}  // namespace eoskit::nk
