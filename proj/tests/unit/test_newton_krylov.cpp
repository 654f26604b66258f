#include "eoskit/newton_krylov.hpp"

#include "helpers.hpp"

using namespace eoskit;

TEST_CASE("GMRES solves a nonsymmetric linear system") {
  Mat A = testing::random_matrix(20, 20, 1) / std::sqrt(20.0) + 3.0 * Mat::Identity(20, 20);
  Vec b = testing::random_matrix(20, 1, 2).col(0);
  auto r = nk::gmres([&](const Vec& v) { return Vec(A * v); }, b, 20, 3, 1e-12);
  CHECK((A * r.x - b).norm() / b.norm() < 1e-10);
}

TEST_CASE("GMRES with restarts still converges") {
  Mat A = testing::random_spd(30, 3, 1.0);
  Vec b = Vec::Ones(30);
  auto r = nk::gmres([&](const Vec& v) { return Vec(A * v); }, b, 5, 50, 1e-10);
  CHECK((A * r.x - b).norm() / b.norm() < 1e-9);
}

TEST_CASE("Newton-Krylov solves a small nonlinear system") {
  // x^2 + y^2 = 4, x - y = 0 -> (sqrt 2, sqrt 2)
  auto G = [](const Vec& v) {
    Vec g(2);
    g << v(0) * v(0) + v(1) * v(1) - 4.0, v(0) - v(1);
    return g;
  };
  Vec x0(2);
  x0 << 1.0, 0.5;
  auto r = nk::newton_krylov(G, x0, {});
  CHECK(r.converged);
  CHECK(r.x(0) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
  CHECK(r.x(1) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));
}

TEST_CASE("Newton-Krylov treats a throwing residual as a failed trial") {
  auto G = [](const Vec& v) {
    if (v(0) < 0) throw NumericalError("outside domain");
    Vec g(1);
    g << std::log(v(0) + 1e-3) - 1.0;
    return g;
  };
  Vec x0 = Vec::Constant(1, 0.5);
  auto r = nk::newton_krylov(G, x0, {});
  CHECK(r.converged);
  CHECK(r.x(0) == doctest::Approx(std::exp(1.0) - 1e-3).epsilon(1e-8));
}
