#include "eoskit/two_layer_analytic.hpp"

#include "eoskit/serialization.hpp"

#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <numbers>
#include <optional>
#include <sstream>
#include <vector>

namespace eoskit::analytic {

namespace {

constexpr int kScanPoints = 256;
constexpr double kPi = std::numbers::pi;

struct Branch {
  double l_star = 0.0;
  double l_iso = 0.0;
  double trace = 0.0;
  double lambda_y = 0.0;
};

// Sigma eigenvalues at a given alpha; nullopt when l_* would be non-positive.
std::optional<Branch> branch(const TwoLayerConfig& c, double alpha, double lam_inf) {
  double T = c.sw2;
  Branch b;
  const double inv_C = std::isinf(c.C) ? 0.0 : 1.0 / c.C;
  for (int it = 0; it < (c.trace_loop ? 200 : 1); ++it) {
    double fluct = c.include_fluctuation ? 4.0 * c.n * c.sa2 * inv_C / ((c.n * lam_inf + c.s2) * (1.0 + 2.0 * T) * kPi) : 0.0;
    double base = c.S / c.sw2 + fluct;
    double pull = 4.0 * c.n * c.n * c.sa2 * alpha * alpha * c.a_norm2 * c.w_norm2 * inv_C / (c.N * (1.0 + 2.0 * T) * kPi);
    double denom = base - pull;
    if (!(denom > 0.0)) return std::nullopt;
    b.l_iso = 1.0 / base;
    b.l_star = 1.0 / denom;
    double T_new = b.l_star + (c.S - 1.0) * b.l_iso;
    b.trace = T_new;
    if (!c.trace_loop || std::abs(T_new - T) <= 1e-15 * T) break;
    T = T_new;
  }
  const double T_used = c.trace_loop ? b.trace : c.sw2;
  b.lambda_y = (c.sa2 / c.N) * (4.0 / kPi) * b.l_star / (1.0 + 2.0 * T_used);
  return b;
}

double equation(const TwoLayerConfig& c, double q, double alpha, const Branch& b) {
  return c.s2 * alpha - 1.0 + q * b.lambda_y / (b.lambda_y + c.s2 / c.n);
}

}  // namespace

void TwoLayerConfig::validate() const {
  if (!(n > 0 && S > 0 && N > 0 && C > 0)) throw ConfigError("two-layer config: n, S, N, C must be positive");
  if (!(sa2 > 0 && sw2 > 0 && s2 > 0)) throw ConfigError("two-layer config: variances must be positive");
  if (!(a_norm2 > 0 && w_norm2 > 0)) throw ConfigError("two-layer config: teacher norms must be positive");
}

double lambda_inf(const TwoLayerConfig& c) {
  return 4.0 * c.sa2 * c.sw2 / (kPi * (1.0 + 2.0 * c.sw2) * c.N * c.S);
}

double chi2(const TwoLayerConfig& c, double alpha, double lam_inf) {
  if (std::isinf(c.C)) return 0.0;
  return alpha * alpha * c.n * c.n * lam_inf * c.a_norm2 * c.w_norm2 / c.C;
}

TwoLayerSolution solve_alpha(const TwoLayerConfig& cfg, double q, double C_bar) {
  cfg.validate();
  const double lam = lambda_inf(cfg);
  const double lo = 1e-12, hi = (1.0 / cfg.s2) * (1.0 - 1e-12);
  auto f = [&](double a) -> std::optional<double> {
    auto b = branch(cfg, a, lam);
    if (!b) return std::nullopt;
    return equation(cfg, q, a, *b);
  };
  std::vector<double> roots;
  double prev_a = lo;
  std::optional<double> prev_f = f(lo);
  for (int k = 1; k < kScanPoints; ++k) {
    double a = lo + (hi - lo) * k / (kScanPoints - 1);
    std::optional<double> fa = f(a);
    if (prev_f && fa) {
      if (*prev_f == 0.0) {
        roots.push_back(prev_a);
      } else if ((*prev_f < 0.0) != (*fa < 0.0)) {
        std::uintmax_t iters = 200;
        auto g = [&](double x) { return *f(x); };
        auto r = boost::math::tools::toms748_solve(g, prev_a, a, *prev_f, *fa,
                                                   boost::math::tools::eps_tolerance<double>(52), iters);
        roots.push_back(0.5 * (r.first + r.second));
      }
    }
    prev_a = a;
    prev_f = fa;
  }
  std::optional<TwoLayerSolution> best;
  for (double a : roots) {
    TwoLayerSolution s;
    s.alpha = a;
    s.lambda_inf = lam;
    s.chi2 = chi2(cfg, a, lam);
    if (s.chi2 >= 1.0) continue;
    if (best && best->chi2 <= s.chi2) continue;
    auto b = *branch(cfg, a, lam);
    s.l_star = b.l_star;
    s.l_iso = b.l_iso;
    s.trace_sigma = b.l_star + (cfg.S - 1.0) * b.l_iso;
    s.lambda_y = b.lambda_y;
    s.q_train = q;
    s.C_bar = C_bar;
    s.alpha_ek = (cfg.s2 / cfg.n) / (b.lambda_y + cfg.s2 / cfg.n);
    best = s;
  }
  if (!best) {
    std::ostringstream msg;
    msg << "solve_alpha: no physical root at C=" << cfg.C << " (" << roots.size()
        << " roots, all with chi2 >= 1); the analytic branch diverges as chi2 -> 1";
    throw NumericalError(msg.str());
  }
  best->roots_found = static_cast<int>(roots.size());
  return *best;
}

double first_order_alpha(const TwoLayerConfig& cfg, double q, double C_bar) {
  TwoLayerConfig inf = cfg;
  inf.C = kInf;
  const double a0 = solve_alpha(inf, q, C_bar).alpha;
  if (std::isinf(cfg.C)) return a0;
  // Slope in eps = 1/C by a forward difference deep in the perturbative regime.
  TwoLayerConfig near = cfg;
  const double coef = chi2(cfg, a0, lambda_inf(cfg)) * cfg.C;  // chi2 * C at alpha_GP
  const double eps = 1e-6 / std::max(1.0, coef);
  near.C = 1.0 / eps;
  const double a1 = solve_alpha(near, q, C_bar).alpha;
  const double slope = (a1 - a0) / eps;
  return a0 + slope / cfg.C;
}

Mat sigma_construct(const TwoLayerSolution& sol, const Vec& w_star) {
  if (!(sol.l_star > 0.0)) throw NumericalError("sigma_construct: l_* must be positive");
  double nrm = w_star.norm();
  if (!(nrm > 0.0)) throw ConfigError("sigma_construct: teacher direction must be non-zero");
  Vec u = w_star / nrm;
  const auto S = w_star.size();
  Mat P = u * u.transpose();
  return sol.l_iso * (Mat::Identity(S, S) - P) + sol.l_star * P;
}

nlohmann::json to_json(const TwoLayerSolution& s) {
  return {{"alpha", s.alpha},         {"lambda_inf", s.lambda_inf}, {"lambda_y", s.lambda_y},
          {"l_star", s.l_star},       {"l_iso", s.l_iso},           {"trace_sigma", s.trace_sigma},
          {"chi2", s.chi2},           {"q_train", s.q_train},       {"alpha_ek", s.alpha_ek},
          {"C_bar", s.C_bar},         {"roots_found", s.roots_found}};
}

}  // namespace eoskit::analytic
