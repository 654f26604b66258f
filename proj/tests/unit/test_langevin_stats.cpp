#include "eoskit/langevin_stats.hpp"

#include "helpers.hpp"

using namespace eoskit;
using namespace eoskit::langevin;

namespace {

std::vector<double> normals(int n, std::uint64_t seed, double sd = 1.0) {
  data::Rng r(seed, 9);
  std::vector<double> v(n);
  for (double& x : v) x = sd * r.normal();
  return v;
}

}  // namespace

TEST_CASE("moments of a normal sample") {
  auto p = describe(normals(50000, 1, 2.0), "n");
  CHECK(p.variance == doctest::Approx(4.0).epsilon(0.03));
  CHECK(std::abs(p.skewness) < 0.05);
  CHECK(std::abs(p.excess_kurtosis) < 0.1);
  CHECK(p.ks_distance < 0.01);
}

TEST_CASE("uniform sample has excess kurtosis -1.2 and a visible KS distance") {
  data::Rng r(3);
  std::vector<double> v(50000);
  for (double& x : v) x = r.uniform();
  auto p = describe(v);
  CHECK(p.excess_kurtosis == doctest::Approx(-1.2).epsilon(0.05));
  CHECK(p.ks_distance > 0.02);
}

TEST_CASE("describe refuses tiny samples") { CHECK_THROWS_AS(describe(normals(50, 1)), ConfigError); }

TEST_CASE("gaussianity report carries seed-split error bars") {
  std::vector<std::vector<std::vector<double>>> groups(1);
  for (int s = 0; s < 4; ++s) groups[0].push_back(normals(2000, 10 + s));
  auto rep = gaussianity_report(groups, {"dir"});
  REQUIRE(rep.size() == 1);
  CHECK(rep[0].samples == 8000);
  CHECK(rep[0].variance_split_err > 0.0);
  CHECK(rep[0].variance_split_err < 0.1);
}

TEST_CASE("pearson on exact linear relations") {
  std::vector<double> x{1, 2, 3, 4}, y{2, 4, 6, 8}, z{4, 3, 2, 1};
  CHECK(pearson(x, y) == doctest::Approx(1.0));
  CHECK(pearson(x, z) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(pearson(x, {1, 1, 1, 1}), NumericalError);
}

TEST_CASE("bootstrap correlation detects dependence and accepts independence") {
  std::vector<std::vector<double>> x, y_ind, y_dep;
  for (int s = 0; s < 8; ++s) {
    auto a = normals(64, 100 + s), b = normals(64, 200 + s);
    std::vector<double> dep(64);
    for (int c = 0; c < 64; ++c) dep[c] = a[c] + 0.3 * b[c];
    x.push_back(a);
    y_ind.push_back(b);
    y_dep.push_back(dep);
  }
  auto ind = correlate(x, y_ind, "ind");
  auto dep = correlate(x, y_dep, "dep");
  CHECK(ind.consistent_with_zero);
  CHECK_FALSE(dep.consistent_with_zero);
  CHECK(dep.rho > 0.9);
  CHECK(ind.pairs == 512);
  auto again = correlate(x, y_ind, "ind");
  CHECK(again.stderr_boot == ind.stderr_boot);
}

TEST_CASE("empirical kernels average over snapshots and channels") {
  Mat h1(2, 2), h2(2, 2);
  h1 << 1, 0, 0, 1;
  h2 << 1, 1, 1, 1;
  Mat K = empirical_covariance({h1, h2});
  Mat ref = (h1 * h1.transpose() + h2 * h2.transpose()) / 4.0;
  CHECK((K - ref).norm() < 1e-15);
  Mat Q = empirical_post_kernel({h1, h2}, kernel::ActivationKind::Linear, 2.0);
  CHECK((Q - 2.0 * ref).norm() < 1e-15);
}

TEST_CASE("seed mean and standard error") {
  auto m = seed_mean({1.0, 2.0, 3.0, 4.0});
  CHECK(m.mean == 2.5);
  CHECK(m.stderr_seeds == doctest::Approx(std::sqrt(5.0 / 3.0 / 4.0)));
}
