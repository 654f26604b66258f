#include "eoskit/two_layer_analytic.hpp"

#include "eoskit/gp_inference.hpp"

#include "helpers.hpp"

#include <numbers>

using namespace eoskit;
using namespace eoskit::analytic;

namespace {

TwoLayerConfig desk(double C) {
  TwoLayerConfig c;
  c.n = 200;
  c.S = 16;
  c.N = 4;
  c.C = C;
  c.sa2 = 2.0;
  c.sw2 = 2.0;
  c.s2 = 0.1;
  return c;
}

}  // namespace

TEST_CASE("lambda_inf closed form") {
  TwoLayerConfig unit;
  unit.n = 1, unit.S = 1, unit.N = 1;
  CHECK(lambda_inf(unit) == doctest::Approx(4.0 / (3.0 * std::numbers::pi)).epsilon(1e-14));
  CHECK(lambda_inf(unit) == doctest::Approx(0.42441).epsilon(1e-5));
  TwoLayerConfig paper;
  paper.n = 1600, paper.S = 64, paper.N = 20, paper.sa2 = 2.0, paper.sw2 = 2.0;
  CHECK(lambda_inf(paper) == doctest::Approx(16.0 / (std::numbers::pi * 5 * 1280)).epsilon(1e-14));
  CHECK(lambda_inf(paper) == doctest::Approx(7.96e-4).epsilon(1e-3));
}

TEST_CASE("infinite-C branch reproduces the equivalent-kernel alpha") {
  for (double q : {1.0, 1.03}) {
    auto c = desk(kInf);
    auto s = solve_alpha(c, q, 0.02);
    auto ek = gp::ek_alpha(lambda_inf(c), static_cast<int>(c.n), c.s2, q);
    CHECK(s.alpha == doctest::Approx(ek.alpha).epsilon(1e-12));
    CHECK(s.chi2 == 0.0);
    CHECK(s.l_star == doctest::Approx(c.sw2 / c.S).epsilon(1e-14));
  }
}

TEST_CASE("strict EK limit with q = 1") {
  auto c = desk(kInf);
  auto s = solve_alpha(c, 1.0, 0.0);
  double lam = lambda_inf(c);
  CHECK(c.s2 * s.alpha == doctest::Approx((c.s2 / c.n) / (lam + c.s2 / c.n)).epsilon(1e-12));
}

TEST_CASE("roots satisfy the scalar equation and are physical") {
  for (double C : {2000.0, 300.0, 100.0, 40.0}) {
    auto c = desk(C);
    auto s = solve_alpha(c, 1.0, 0.0);
    CHECK(s.chi2 < 1.0);
    CHECK(c.s2 * s.alpha == doctest::Approx(1.0 - s.lambda_y / (s.lambda_y + c.s2 / c.n)).epsilon(1e-10));
    CHECK(s.l_star > s.l_iso);
    CHECK(s.chi2 == doctest::Approx(s.alpha * s.alpha * c.n * c.n * s.lambda_inf / C).epsilon(1e-12));
  }
}

TEST_CASE("alpha decreases as C shrinks") {
  double prev = solve_alpha(desk(kInf), 1.0, 0.0).alpha;
  for (double C : {4096.0, 1024.0, 256.0, 64.0}) {
    double a = solve_alpha(desk(C), 1.0, 0.0).alpha;
    CHECK(a < prev);
    prev = a;
  }
}

TEST_CASE("first-order expansion agrees with the exact root at large C") {
  auto c = desk(1e6);
  double exact = solve_alpha(c, 1.0, 0.0).alpha;
  double first = first_order_alpha(c, 1.0, 0.0);
  double a0 = solve_alpha(desk(kInf), 1.0, 0.0).alpha;
  CHECK(std::abs(exact - first) < 1e-3 * std::abs(exact - a0));
  CHECK(first_order_alpha(desk(kInf), 1.0, 0.0) == a0);
}

TEST_CASE("without the fluctuation term l_iso equals sw2 / S") {
  auto c = desk(128);
  c.include_fluctuation = false;
  auto s = solve_alpha(c, 1.0, 0.0);
  CHECK(s.l_iso == doctest::Approx(c.sw2 / c.S).epsilon(1e-14));
  c.include_fluctuation = true;
  CHECK(solve_alpha(c, 1.0, 0.0).l_iso < c.sw2 / c.S);
}

TEST_CASE("trace loop changes the answer only slightly at moderate chi2") {
  auto c = desk(512);
  auto frozen = solve_alpha(c, 1.0, 0.0);
  c.trace_loop = true;
  auto looped = solve_alpha(c, 1.0, 0.0);
  CHECK(looped.trace_sigma == doctest::Approx(looped.l_star + 15 * looped.l_iso).epsilon(1e-12));
  CHECK(std::abs(looped.alpha - frozen.alpha) < 0.05 * frozen.alpha);
}

TEST_CASE("sigma_construct places l_* along the teacher") {
  TwoLayerSolution s;
  s.l_star = 0.3;
  s.l_iso = 0.1;
  Vec w = Vec::LinSpaced(5, 1, 5);
  Mat Sigma = sigma_construct(s, w);
  CHECK((Sigma * w - 0.3 * w).norm() < 1e-13);
  Vec perp(5);
  perp << 5, 0, 0, 0, -1;
  CHECK((Sigma * perp - 0.1 * perp).norm() < 1e-13);
}

TEST_CASE("no physical root raises a numerical error") {
  auto c = desk(1e-3);
  c.n = 1e6;
  CHECK_THROWS_AS(solve_alpha(c, 1.0, 0.0), NumericalError);
}

TEST_CASE("invalid configs are rejected") {
  auto c = desk(10);
  c.s2 = 0.0;
  CHECK_THROWS_AS(solve_alpha(c, 1.0, 0.0), ConfigError);
}
