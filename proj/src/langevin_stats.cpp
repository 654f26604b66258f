#include "eoskit/langevin_stats.hpp"

#include "eoskit/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace eoskit::langevin {

namespace {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

std::vector<double> concat(const std::vector<std::vector<double>>& parts, std::size_t from, std::size_t to) {
  std::vector<double> out;
  for (std::size_t s = from; s < to; ++s) out.insert(out.end(), parts[s].begin(), parts[s].end());
  return out;
}

}  // namespace

ProjectionStats describe(const std::vector<double>& x, const std::string& label) {
  if (x.size() < 100) throw ConfigError("gaussianity: need at least 100 samples per direction");
  ProjectionStats p;
  p.label = label;
  p.samples = x.size();
  const double n = static_cast<double>(x.size());
  p.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double m2 = 0, m3 = 0, m4 = 0;
  for (double v : x) {
    double d = v - p.mean, d2 = d * d;
    m2 += d2;
    m3 += d2 * d;
    m4 += d2 * d2;
  }
  m2 /= n;
  m3 /= n;
  m4 /= n;
  p.variance = m2 * n / (n - 1.0);
  if (m2 > 0.0) {
    p.skewness = m3 / std::pow(m2, 1.5);
    p.excess_kurtosis = m4 / (m2 * m2) - 3.0;
    std::vector<double> s = x;
    std::sort(s.begin(), s.end());
    const double sd = std::sqrt(m2);
    double ks = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      double F = normal_cdf((s[i] - p.mean) / sd);
      ks = std::max({ks, std::abs(F - static_cast<double>(i) / n), std::abs(static_cast<double>(i + 1) / n - F)});
    }
    p.ks_distance = ks;
  } else {
    p.ks_distance = 1.0;
  }
  return p;
}

std::vector<ProjectionStats> gaussianity_report(const std::vector<std::vector<std::vector<double>>>& groups,
                                                const std::vector<std::string>& labels) {
  std::vector<ProjectionStats> out;
  for (std::size_t k = 0; k < groups.size(); ++k) {
    const auto& g = groups[k];
    ProjectionStats p = describe(concat(g, 0, g.size()), k < labels.size() ? labels[k] : "direction");
    if (g.size() >= 2) {
      std::size_t half = g.size() / 2;
      auto a = concat(g, 0, half), b = concat(g, half, g.size());
      if (a.size() >= 100 && b.size() >= 100) {
        ProjectionStats pa = describe(a), pb = describe(b);
        p.variance_split_err = 0.5 * std::abs(pa.variance - pb.variance);
        p.kurtosis_split_err = 0.5 * std::abs(pa.excess_kurtosis - pb.excess_kurtosis);
      }
    }
    out.push_back(p);
  }
  return out;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ConfigError("pearson: need two equal-length samples");
  const double n = static_cast<double>(x.size());
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0) || !(syy > 0.0)) throw NumericalError("pearson: zero-variance summary");
  return sxy / std::sqrt(sxx * syy);
}

Correlation correlate(const std::vector<std::vector<double>>& x, const std::vector<std::vector<double>>& y,
                      const std::string& label, int resamples, std::uint64_t seed) {
  if (x.size() != y.size() || x.empty()) throw ConfigError("correlate: seed counts differ");
  Correlation c;
  c.label = label;
  auto xs = concat(x, 0, x.size()), ys = concat(y, 0, y.size());
  c.pairs = xs.size();
  c.rho = pearson(xs, ys);
  if (x.size() >= 2) {
    data::Rng rng(seed, 3);
    std::vector<double> reps;
    for (int b = 0; b < resamples; ++b) {
      std::vector<double> bx, by;
      for (std::size_t k = 0; k < x.size(); ++k) {
        std::size_t s = static_cast<std::size_t>(rng.uniform() * static_cast<double>(x.size()));
        s = std::min(s, x.size() - 1);
        bx.insert(bx.end(), x[s].begin(), x[s].end());
        by.insert(by.end(), y[s].begin(), y[s].end());
      }
      try {
        reps.push_back(pearson(bx, by));
      } catch (const NumericalError&) {
      }
    }
    if (reps.size() >= 2) {
      double m = std::accumulate(reps.begin(), reps.end(), 0.0) / static_cast<double>(reps.size());
      double v = 0;
      for (double r : reps) v += (r - m) * (r - m);
      c.stderr_boot = std::sqrt(v / static_cast<double>(reps.size() - 1));
    }
  }
  c.consistent_with_zero = std::abs(c.rho) < 3.0 * c.stderr_boot;
  return c;
}

Mat empirical_covariance(const std::vector<Mat>& snapshots) {
  if (snapshots.empty()) throw ConfigError("empirical kernels: no snapshots");
  const Eigen::Index d = snapshots[0].rows();
  Mat K = Mat::Zero(d, d);
  double count = 0;
  for (const Mat& H : snapshots) {
    if (H.rows() != d) throw ConfigError("empirical kernels: snapshot shapes differ");
    K.noalias() += H * H.transpose();
    count += static_cast<double>(H.cols());
  }
  return symmetrize(K / count);
}

Mat empirical_post_kernel(const std::vector<Mat>& snapshots, kernel::ActivationKind kind, double s2) {
  std::vector<Mat> act;
  act.reserve(snapshots.size());
  for (const Mat& H : snapshots) {
    switch (kind) {
      case kernel::ActivationKind::Erf: act.push_back(H.unaryExpr([](double v) { return std::erf(v); })); break;
      case kernel::ActivationKind::ReLU: act.push_back(H.cwiseMax(0.0)); break;
      case kernel::ActivationKind::Linear: act.push_back(H); break;
    }
  }
  return s2 * empirical_covariance(act);
}

SeedMean seed_mean(const std::vector<double>& v) {
  SeedMean m;
  if (v.empty()) return m;
  const double n = static_cast<double>(v.size());
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  if (v.size() >= 2) {
    double s = 0;
    for (double x : v) s += (x - m.mean) * (x - m.mean);
    m.stderr_seeds = std::sqrt(s / (n - 1.0) / n);
  }
  return m;
}

nlohmann::json to_json(const ProjectionStats& p) {
  return {{"label", p.label},
          {"samples", p.samples},
          {"mean", p.mean},
          {"variance", p.variance},
          {"skewness", p.skewness},
          {"excess_kurtosis", p.excess_kurtosis},
          {"ks_distance", p.ks_distance},
          {"variance_split_err", p.variance_split_err},
          {"kurtosis_split_err", p.kurtosis_split_err}};
}

nlohmann::json to_json(const Correlation& c) {
  return {{"label", c.label},
          {"rho", c.rho},
          {"stderr", c.stderr_boot},
          {"pairs", c.pairs},
          {"consistent_with_zero", c.consistent_with_zero}};
}

}  // namespace eoskit::langevin
