#include "eoskit/kernel_core.hpp"

#include "helpers.hpp"

#include <cmath>
#include <numbers>

using namespace eoskit;
using namespace eoskit::kernel;

namespace {

// Monte-Carlo estimate of s2 E[phi(h_a) phi(h_b)] for (h_a, h_b) ~ N(0, [[kaa, kab], [kab, kbb]]).
std::pair<double, double> mc_pair(double kaa, double kab, double kbb, ActivationKind kind, int samples,
                                  std::uint64_t seed) {
  data::Rng rng(seed, 5);
  double l11 = std::sqrt(kaa), l21 = kab / l11, l22 = std::sqrt(std::max(kbb - l21 * l21, 0.0));
  auto phi = [&](double h) {
    switch (kind) {
      case ActivationKind::Erf: return std::erf(h);
      case ActivationKind::ReLU: return std::max(h, 0.0);
      default: return h;
    }
  };
  double s = 0, s2 = 0;
  for (int i = 0; i < samples; ++i) {
    double z1 = rng.normal(), z2 = rng.normal();
    double v = phi(l11 * z1) * phi(l21 * z1 + l22 * z2);
    s += v;
    s2 += v * v;
  }
  double m = s / samples;
  return {m, std::sqrt((s2 / samples - m * m) / samples)};
}

KernelMatrix km(const Mat& m) { return KernelMatrix::make({static_cast<int>(m.rows()), 1}, m); }

double contract(const Mat& A, const Mat& B) { return (A.array() * B.array()).sum(); }

}  // namespace

TEST_CASE("erf and ReLU forward kernels agree with Monte Carlo") {
  for (auto kind : {ActivationKind::Erf, ActivationKind::ReLU}) {
    Mat K = testing::random_spd(3, 21, 0.3);
    Mat Q = post_kernel(kind, km(K), 1.0).values;
    for (int a = 0; a < 3; ++a)
      for (int b = a; b < 3; ++b) {
        auto [m, se] = mc_pair(K(a, a), K(a, b), K(b, b), kind, 200000, 100 + a * 3 + b);
        CHECK(std::abs(Q(a, b) - m) < 4.0 * se);
      }
  }
}

TEST_CASE("erf kernel closed form at a known point") {
  // K = [[1/2, 1/4], [1/4, 1/2]] -> (2/pi) asin(0.5/2) with s2 = 1.
  Mat K(2, 2);
  K << 0.5, 0.25, 0.25, 0.5;
  Mat Q = erf_post_kernel(km(K), 1.0).values;
  CHECK(Q(0, 1) == doctest::Approx(2.0 / std::numbers::pi * std::asin(0.25)).epsilon(1e-14));
  CHECK(Q(0, 0) == doctest::Approx(2.0 / std::numbers::pi * std::asin(0.5)).epsilon(1e-14));
}

TEST_CASE("ReLU kernel of identical inputs is K/2") {
  Mat K = Mat::Constant(2, 2, 1.7);
  Mat Q = relu_post_kernel(km(K), 2.0).values;
  CHECK(Q(0, 1) == doctest::Approx(1.7).epsilon(1e-12));
}

TEST_CASE("linear post kernel is s2 K") {
  Mat K = testing::random_spd(4, 2);
  CHECK((linear_post_kernel(km(K), 3.0).values - 3.0 * K).norm() < 1e-14);
}

TEST_CASE("post-kernel adjoints match central differences") {
  for (auto kind : {ActivationKind::Erf, ActivationKind::Linear}) {
    for (int trial = 0; trial < 5; ++trial) {
      Mat K = testing::random_spd(4, 300 + trial, 0.3);
      Mat A = testing::random_symmetric(4, 400 + trial);
      Mat M = post_kernel_adjoint(kind, km(K), 1.5, A);
      const double h = 1e-6;
      for (int a = 0; a < 4; ++a)
        for (int b = a; b < 4; ++b) {
          Mat Kp = K, Km = K;
          Kp(a, b) += h, Km(a, b) -= h;
          if (a != b) Kp(b, a) += h, Km(b, a) -= h;
          double fd = (contract(A, post_kernel(kind, km(Kp), 1.5).values) -
                       contract(A, post_kernel(kind, km(Km), 1.5).values)) /
                      (2 * h);
          double an = a == b ? M(a, a) : M(a, b) + M(b, a);
          CHECK(an == doctest::Approx(fd).epsilon(1e-6).scale(1.0));
        }
    }
  }
}

TEST_CASE("ReLU adjoint is rejected") {
  Mat K = testing::random_spd(3, 1);
  CHECK_THROWS_AS(post_kernel_adjoint(ActivationKind::ReLU, km(K), 1.0, K), ConfigError);
}

TEST_CASE("strided block extraction and scatter are adjoint") {
  Stride g{3, 6, 2};
  Mat lower = testing::random_symmetric(g.n * g.lower_pixels, 9);
  for (int i = 0; i < g.stride; ++i) {
    Mat B = testing::random_symmetric(g.block_size(), 10 + i);
    Mat scattered = Mat::Zero(lower.rows(), lower.cols());
    scatter_block_add(scattered, g, i, B);
    CHECK(contract(strided_block(lower, g, i), B) == doctest::Approx(contract(lower, scattered)).epsilon(1e-12));
  }
}

TEST_CASE("strided block picks pixels i + j*stride") {
  Stride g{2, 4, 2};
  Mat lower(8, 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) lower(r, c) = 100 * r + c;
  Mat b = strided_block(lower, g, 1);
  // upper (mu=1, j=1) -> lower (1, 1 + 2) -> flat 4 + 3 = 7; upper (0, 0) -> lower flat 1.
  CHECK(b(1 * 2 + 1, 0) == lower(7, 1));
}

TEST_CASE("stride-one forward equals the activation map") {
  Mat K = testing::random_spd(5, 4);
  Mat Q = strided_forward(ActivationKind::Erf, {K}, 2.0);
  CHECK((Q - activation_map(ActivationKind::Erf, K, 2.0)).norm() < 1e-14);
}

TEST_CASE("CNN input kernel entries are patch inner products") {
  Mat X = testing::random_matrix(3, 8, 1);
  Mat S = testing::random_spd(4, 2);
  KernelMatrix K = input_kernel(X, WeightCovariance::make(S), PatchShape{2, 4});
  CHECK(K.size() == 6);
  double v = X.row(2).segment(4, 4) * S * X.row(0).segment(0, 4).transpose();
  CHECK(K.values(2 * 2 + 1, 0) == doctest::Approx(v).epsilon(1e-13));
}

TEST_CASE("regularized inverse escalates jitter and fails on indefinite input") {
  Mat singular = Mat::Ones(3, 3);
  Mat inv = regularized_inverse(singular, 1e-6);
  CHECK(inv.allFinite());
  Mat indefinite = Mat::Identity(3, 3);
  indefinite(0, 0) = -1.0;
  CHECK_THROWS_AS(regularized_inverse(indefinite, 1e-10), NumericalError);
}

TEST_CASE("SpdFactor solves and reports log det") {
  Mat K = testing::random_spd(6, 8);
  SpdFactor f(K, 0.0);
  Vec b = Vec::LinSpaced(6, 1, 6);
  CHECK((K * f.solve(b) - b).norm() < 1e-12);
  CHECK(f.log_det() == doctest::Approx(std::log(K.determinant())).epsilon(1e-12));
}

TEST_CASE("kernel files round-trip") {
  auto path = std::filesystem::temp_directory_path() / "eoskit_kernel_test.bin";
  KernelMatrix K = KernelMatrix::make({2, 3}, testing::random_spd(6, 3));
  write_kernel_file(path, K);
  KernelMatrix back = read_kernel_file(path);
  CHECK(back.space == K.space);
  CHECK(back.values == K.values);
  std::filesystem::remove(path);
}

TEST_CASE("activation names round-trip") {
  for (auto k : {ActivationKind::Erf, ActivationKind::ReLU, ActivationKind::Linear})
    CHECK(activation_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(activation_from_string("tanh"), ConfigError);
}
