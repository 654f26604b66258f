#include "eoskit/gp_inference.hpp"

#include "helpers.hpp"

using namespace eoskit;
using namespace eoskit::gp;

TEST_CASE("posterior mean matches a direct dense solve") {
  Mat Q = testing::random_spd(8, 1);
  Vec y = testing::random_matrix(8, 1, 2).col(0);
  auto p = posterior_mean(Q, y, 0.1);
  Mat Kf = Q + 0.1 * Mat::Identity(8, 8);
  Vec f = Q * Kf.partialPivLu().solve(y);
  CHECK((p.f_bar - f).norm() < 1e-11);
  CHECK((p.delta - (y - f) / 0.1).norm() < 1e-9);
  CHECK(p.alpha == doctest::Approx(-p.alpha_overlap).epsilon(1e-12));
  CHECK(p.train_mse == doctest::Approx((y - f).squaredNorm() / 8).epsilon(1e-12));
}

TEST_CASE("predictions on the training inputs reproduce the posterior mean") {
  Mat Q = testing::random_spd(6, 3);
  Vec y = testing::random_matrix(6, 1, 4).col(0);
  CHECK((posterior_predict(Q, Q, y, 0.2) - posterior_mean(Q, y, 0.2).f_bar).norm() < 1e-12);
}

TEST_CASE("output fluctuation is delta delta^T minus the regularized inverse") {
  Mat Q = testing::random_spd(5, 5);
  Vec d = Vec::LinSpaced(5, -1, 1);
  Mat A = output_fluctuation(d, Q, 0.3);
  Mat ref = d * d.transpose() - (Q + 0.3 * Mat::Identity(5, 5)).inverse();
  CHECK((A - ref).norm() < 1e-12);
}

TEST_CASE("q_train values") {
  CHECK(q_train(0.2, 0.1, 0.1) == doctest::Approx(1.05).epsilon(1e-14));
  CHECK(q_train(0.0, 0.3, 0.1) == 1.0);
  CHECK(q_train(0.4, 0.0, 0.1) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK_THROWS(q_train(1.0, 0.1, 0.1));
}

TEST_CASE("ek_alpha limits") {
  auto a = ek_alpha(1.0, 1000, 0.1, 1.0);
  CHECK(a.alpha_ek == doctest::Approx(1e-4 / (1.0 + 1e-4)).epsilon(1e-12));
  CHECK(0.1 * a.alpha == doctest::Approx(0.1 / (1000 * 1.0)).epsilon(1e-3));
}

TEST_CASE("c_bar is non-negative and decreasing in n") {
  Vec lam = Vec::LinSpaced(20, 1.0, 0.01);
  double prev = kInf;
  for (int n : {1, 10, 100, 1000}) {
    double c = c_bar(lam, 20, n, 0.1);
    CHECK(c >= 0.0);
    CHECK(c < prev);
    prev = c;
  }
}

TEST_CASE("ek spectrum of a diagonal Gram matrix") {
  Vec d(6);
  d << 6, 3, 1e-14, 2, 0, 1;
  Mat G = d.asDiagonal();
  auto s = ek_spectrum_from_gram(G, 5, 0.1);
  CHECK(s.eigenvalues(0) == doctest::Approx(1.0));
  CHECK(s.retained == 4);  // zero tail excluded
  double ref = 0;
  for (double l : {1.0, 0.5, 1.0 / 3, 1.0 / 6}) ref += l / (1 + l * 5 / 0.1);
  CHECK(s.C_bar == doctest::Approx(ref).epsilon(1e-12));
}

TEST_CASE("retention rules") {
  Vec lam(6);
  lam << 1.0, 0.9, 0.8, 0.01, 0.009, 0.008;
  SpectrumOptions o;
  CHECK(retained_count(lam, o) == 3);
  o.retention = Retention::All;
  CHECK(retained_count(lam, o) == 6);
  o.retention = Retention::TopK;
  o.top_k = 2;
  CHECK(retained_count(lam, o) == 2);
}

TEST_CASE("ek spectrum rejects significant negative mass") {
  Mat G = Mat::Identity(3, 3);
  G(2, 2) = -0.5;
  CHECK_THROWS_AS(ek_spectrum_from_gram(G, 2, 0.1), NumericalError);
  CHECK_THROWS_AS(ek_spectrum_from_gram(Mat::Identity(3, 3), 4, 0.1), ConfigError);
}

TEST_CASE("target Rayleigh quotient on an eigenvector") {
  Mat G = Mat::Zero(4, 4);
  G.diagonal() << 8, 4, 2, 1;
  Vec y = Vec::Zero(4);
  y(1) = 3.0;
  auto s = ek_spectrum_from_gram(G, 3, 0.1, {}, y);
  CHECK(s.lambda_y == doctest::Approx(1.0));
}
