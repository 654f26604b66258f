#include "eoskit/gp_inference.hpp"

#include "eoskit/kernel_core.hpp"
#include "eoskit/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace eoskit::gp {

PosteriorSummary posterior_mean(const Mat& Qf, const Vec& y, double s2) {
  if (!(s2 > 0.0)) throw ConfigError("posterior_mean: noise variance must be positive");
  if (Qf.rows() != Qf.cols() || Qf.rows() != y.size()) throw ConfigError("posterior_mean: shape mismatch");
  Mat Kf = Qf;
  Kf.diagonal().array() += s2;
  kernel::SpdFactor f(Kf, 0.0);
  PosteriorSummary p;
  p.delta = f.solve(y);
  p.f_bar = y - s2 * p.delta;
  const double n = static_cast<double>(y.size());
  p.train_mse = (y - p.f_bar).squaredNorm() / n;
  const double yy = y.squaredNorm();
  if (yy > 0.0) {
    p.alpha = y.dot(p.delta) / yy;
    p.alpha_overlap = (p.f_bar - y).dot(y) / (s2 * yy);
  }
  return p;
}

Vec posterior_predict(const Mat& Q_train, const Mat& Q_cross, const Vec& y, double s2) {
  if (Q_train.rows() != Q_train.cols() || Q_train.rows() != y.size() || Q_cross.cols() != y.size())
    throw ConfigError("posterior_predict: shape mismatch");
  Mat Kf = Q_train;
  Kf.diagonal().array() += s2;
  kernel::SpdFactor f(Kf, 0.0);
  return Q_cross * f.solve(y);
}

Mat output_fluctuation(const Vec& delta, const Mat& Qf, double s2) {
  if (Qf.rows() != delta.size()) throw ConfigError("output_fluctuation: shape mismatch");
  Mat Kf = Qf;
  Kf.diagonal().array() += s2;
  Mat A = delta * delta.transpose() - kernel::regularized_inverse(Kf, 0.0);
  return symmetrize(A);
}

int retained_count(const Vec& lam, const SpectrumOptions& opts) {
  const int m = static_cast<int>(lam.size());
  if (m == 0) return 0;
  switch (opts.retention) {
    case Retention::All: return m;
    case Retention::TopK:
      if (opts.top_k < 1) throw ConfigError("ek_spectrum: top_k must be >= 1");
      return std::min(opts.top_k, m);
    case Retention::Gap: break;
  }
  const double zero = opts.rel_zero * std::max(lam(0), 0.0);
  int positive = 0;
  while (positive < m && lam(positive) > zero) ++positive;
  if (positive < m) return positive;  // numerically-zero tail: keep every resolved mode
  int best = m;
  double best_ratio = opts.min_gap_ratio;
  for (int k = 0; k + 1 < positive; ++k) {
    double r = lam(k) / lam(k + 1);
    if (r > best_ratio) {
      best_ratio = r;
      best = k + 1;
    }
  }
  return best;
}

double c_bar(const Vec& lam, int count, int n, double s2) {
  double c = 0.0;
  const double rate = static_cast<double>(n) / s2;
  for (int k = 0; k < count; ++k)
    if (lam(k) > 0.0) c += lam(k) / (1.0 + lam(k) * rate);
  return c;
}

EKSpectrum ek_spectrum_from_gram(const Mat& G, int n, double s2, const SpectrumOptions& opts,
                                 const std::optional<Vec>& target) {
  const int M = static_cast<int>(G.rows());
  if (G.cols() != M) throw ConfigError("ek_spectrum: Gram matrix must be square");
  if (M < n) throw ConfigError("ek_spectrum: need M >= n");
  if (!(s2 > 0.0)) throw ConfigError("ek_spectrum: noise variance must be positive");
  Eigen::SelfAdjointEigenSolver<Mat> es(G / static_cast<double>(M), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw NumericalError("ek_spectrum: eigensolver failed");
  Vec lam = es.eigenvalues().reverse();
  double trace = lam.cwiseMax(0.0).sum();
  double neg = -lam.cwiseMin(0.0).sum();
  if (trace <= 0.0 || neg > opts.negative_tolerance * trace) {
    std::ostringstream msg;
    msg << "ek_spectrum: negative spectral mass " << neg << " exceeds tolerance (trace " << trace << ")";
    throw NumericalError(msg.str());
  }
  EKSpectrum s;
  s.eigenvalues = lam;
  s.retained = retained_count(lam, opts);
  s.C_bar = c_bar(lam, s.retained, n, s2);
  s.n = n;
  s.s2 = s2;
  s.M = M;
  if (target) {
    if (target->size() != M) throw ConfigError("ek_spectrum: target length must equal M");
    s.lambda_y = target->dot(G * (*target)) / (static_cast<double>(M) * target->squaredNorm());
  }
  return s;
}

EKSpectrum ek_spectrum(const KernelFn& kernel_fn, const Mat& sample, int n, double s2, const SpectrumOptions& opts,
                       const std::optional<Vec>& target) {
  Mat G = kernel_fn(sample, sample);
  return ek_spectrum_from_gram(symmetrize(G), n, s2, opts, target);
}

EkAlpha ek_alpha(double lambda_y, int n, double s2, double q) {
  if (!(lambda_y > 0.0)) throw ConfigError("ek_alpha: lambda_y must be positive");
  const double noise = s2 / n;
  EkAlpha r;
  r.alpha_ek = noise / (lambda_y + noise);
  r.alpha = (1.0 - q * lambda_y / (lambda_y + noise)) / s2;
  return r;
}

double q_train(double alpha_ek, double C_bar, double s2) {
  if (alpha_ek == 1.0) throw NumericalError("q_train: alpha_EK = 1 makes the correction singular");
  return (1.0 - alpha_ek * (1.0 - C_bar * alpha_ek / s2)) / (1.0 - alpha_ek);
}

nlohmann::json to_json(const PosteriorSummary& p) {
  return {{"f_bar", io::to_json(p.f_bar)},
          {"delta", io::to_json(p.delta)},
          {"train_mse", p.train_mse},
          {"alpha_overlap", p.alpha_overlap},
          {"alpha", p.alpha}};
}

nlohmann::json to_json(const EKSpectrum& s) {
  return {{"eigenvalues", io::to_json(s.eigenvalues)},
          {"retained", s.retained},
          {"lambda_y", s.lambda_y},
          {"C_bar", s.C_bar},
          {"n", s.n},
          {"sigma2", s.s2},
          {"M", s.M}};
}

}  // namespace eoskit::gp
