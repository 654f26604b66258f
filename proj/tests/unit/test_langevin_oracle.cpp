#include "eoskit/langevin_oracle.hpp"

#include "helpers.hpp"

using namespace eoskit;
using namespace eoskit::langevin;

namespace {

double dot(const Weights& a, const Weights& b) {
  double s = 0;
  for (std::size_t l = 0; l < a.size(); ++l)
    for (std::size_t i = 0; i < a[l].size(); ++i) s += (a[l][i].array() * b[l][i].array()).sum();
  return s;
}

Weights axpy(const Weights& x, double h, const Weights& d) {
  Weights out = x;
  for (std::size_t l = 0; l < x.size(); ++l)
    for (std::size_t i = 0; i < x[l].size(); ++i) out[l][i] += h * d[l][i];
  return out;
}

void check_gradient(const eos::NetworkSpec& spec, const data::Dataset& ds) {
  Weights w = sample_prior(spec, 3), dir = sample_prior(spec, 4), g;
  potential(spec, ds, w, &g);
  const double h = 1e-5;
  double fd = (potential(spec, ds, axpy(w, h, dir)) - potential(spec, ds, axpy(w, -h, dir))) / (2 * h);
  CHECK(dot(g, dir) == doctest::Approx(fd).epsilon(1e-6));
}

LangevinConfig ou_config() {
  LangevinConfig c;
  c.spec = eos::NetworkSpec::cnn(3, 4, 3, {2}, 6.0, {2.0, 1.0, 1.5}, 0.1);
  c.lr = 0.01;
  c.burn_in = 300;
  c.epochs = 8000;
  c.sample_stride = 10;
  c.seeds = {0, 1, 2};
  c.random_directions = 2;
  return c;
}

data::Dataset empty_data(const eos::NetworkSpec& s) { return data::gaussian_dataset(0, s.patches, s.patch_dim, 0); }

}  // namespace

TEST_CASE("backpropagated gradient matches finite differences") {
  SUBCASE("two-layer CNN") {
    auto spec = eos::NetworkSpec::cnn(2, 4, 3, {}, 5.0, {2.0, 2.0}, 0.1);
    auto ds = data::gaussian_dataset(6, 4, 3, 1);
    ds.y = data::make_target(ds, data::linear_cnn_teacher(4, 3, 2));
    check_gradient(spec, ds);
  }
  SUBCASE("three-layer strided CNN") {
    auto spec = eos::NetworkSpec::cnn(3, 4, 3, {2}, 5.0, {1.0, 1.5, 2.0}, 0.1);
    auto ds = data::gaussian_dataset(5, 4, 3, 1);
    ds.y = Vec::LinSpaced(5, -1, 1);
    check_gradient(spec, ds);
  }
  SUBCASE("four-layer linear FCN") {
    auto spec = eos::NetworkSpec::fcn(4, 5, 4.0, {1.0, 1.0, 1.0, 1.0}, 0.2);
    spec.activations.assign(3, kernel::ActivationKind::Linear);
    auto ds = data::gaussian_dataset(7, 1, 5, 3);
    ds.y = Vec::LinSpaced(7, -1, 1);
    check_gradient(spec, ds);
  }
}

TEST_CASE("network output is sum over pixels and channels of a phi(w . x)") {
  auto spec = eos::NetworkSpec::cnn(2, 3, 2, {}, 2.0, {1.0, 1.0}, 0.1);
  auto ds = data::gaussian_dataset(4, 3, 2, 5);
  Weights w = sample_prior(spec, 6);
  Vec f = network_output(spec, ds, w);
  for (int mu = 0; mu < 4; ++mu) {
    double s = 0;
    for (int j = 0; j < 3; ++j)
      for (int c = 0; c < 2; ++c) s += w[1][0](j, c) * std::erf(w[0][0].row(c).dot(ds.patch(mu, j)));
    CHECK(f(mu) == doctest::Approx(s).epsilon(1e-13));
  }
}

TEST_CASE("prior variances follow fan-in scaling") {
  auto spec = eos::NetworkSpec::cnn(3, 4, 3, {2}, 6.0, {2.0, 1.0, 1.5}, 0.1);
  auto v = prior_variances(spec);
  REQUIRE(v.size() == 3);
  CHECK(v[0] == doctest::Approx(2.0 / 3));
  CHECK(v[1] == doctest::Approx(1.0 / (6 * 2)));
  CHECK(v[2] == doctest::Approx(1.5 / (6 * 2)));
}

TEST_CASE("without data the sampler reproduces the prior variance of every layer") {
  for (auto pre : {Preconditioning::Prior, Preconditioning::None}) {
    auto c = ou_config();
    c.preconditioning = pre;
    if (pre == Preconditioning::None) {
      // Plain steps see the stiffest layer at eta / var; keep the Euler-Maruyama bias well below 3 SE.
      c.lr = 0.0005;
      c.burn_in = 2000;
      c.epochs = 40000;
    }
    auto st = sample_equilibrium(c, empty_data(c.spec));
    REQUIRE(st.layer_variances.size() == 3);
    for (const auto& lv : st.layer_variances) {
      INFO("layer " << lv.layer << ": " << lv.empirical << " +- " << lv.stderr_weights << " vs " << lv.expected);
      CHECK(lv.within_3se);
    }
  }
}

TEST_CASE("runs are deterministic and independent of seed order") {
  auto c = ou_config();
  c.epochs = 1000;
  auto a = sample_equilibrium(c, empty_data(c.spec));
  auto b = sample_equilibrium(c, empty_data(c.spec));
  c.seeds = {2, 0, 1};
  auto d = sample_equilibrium(c, empty_data(c.spec));
  CHECK(a.Sigma_hat == b.Sigma_hat);
  CHECK(a.Sigma_hat == d.Sigma_hat);
}

TEST_CASE("invalid sampler configs") {
  auto c = ou_config();
  c.seeds = {0};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ou_config();
  c.epochs = 50;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ou_config();
  c.spec.widths = {kInf, kInf};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("a divergent step size is reported as a numerical failure") {
  auto c = ou_config();
  c.spec = eos::NetworkSpec::cnn(2, 4, 3, {}, 8.0, {2.0, 2.0}, 0.01);
  c.lr = 50.0;
  c.warmup_epochs = 0;
  auto ds = data::gaussian_dataset(20, 4, 3, 1);
  ds.y = data::make_target(ds, data::linear_cnn_teacher(4, 3, 2));
  try {
    sample_equilibrium(c, ds);
    FAIL("expected divergence");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("last stable lr") != std::string::npos);
  }
}

TEST_CASE("adaptive scheduler: warmup, spikes and freeze") {
  AdaptiveOptions o;
  o.window = 50;
  o.quiet_epochs = 300;
  AdaptiveScheduler s(0.01, o, 10, 0.1);
  CHECK(s.lr() == doctest::Approx(0.001));
  data::Rng r(1);
  long e = 0;
  for (; e < 200; ++e) s.observe(e, 1.0 + 0.01 * r.normal());
  CHECK(s.lr() == doctest::Approx(0.01));
  s.observe(e++, 5.0);
  CHECK(s.lr() == doctest::Approx(0.007));
  for (; e < 1000; ++e) s.observe(e, 1.0 + 0.01 * r.normal());
  CHECK(s.frozen());
  CHECK(s.lr() == doctest::Approx(0.0035));
  const auto& log = s.log();
  REQUIRE(log.size() == 3);
  CHECK(log[0].reason == "warmup_end");
  CHECK(log[1].reason == "spike");
  CHECK(log[2].reason == "quiet_freeze");
  double before = s.lr();
  s.observe(e++, 100.0);
  CHECK(s.lr() == before);
}

TEST_CASE("adaptive_schedule replays a trace") {
  std::vector<double> trace(600, 1.0);
  for (std::size_t i = 0; i < trace.size(); ++i) trace[i] += 1e-3 * std::sin(0.7 * i);
  trace[400] = 10.0;
  AdaptiveOptions o;
  o.window = 100;
  auto ev = adaptive_schedule(trace, 0.1, o);
  REQUIRE(ev.size() == 1);
  CHECK(ev[0].epoch == 400);
}

// Posterior mean of a tiny two-layer linear network by importance sampling over
// first-layer weights drawn from the prior; the readout is integrated exactly.
TEST_CASE("posterior mean matches an importance-sampling oracle") {
  const int d = 2, N = 4, n = 3;
  const double s2 = 0.5;
  auto spec = eos::NetworkSpec::fcn(2, d, N, {1.0, 1.0}, s2);
  spec.activations = {kernel::ActivationKind::Linear};
  auto ds = data::gaussian_dataset(n, 1, d, 21);
  ds.y << 0.8, -0.5, 0.3;
  const double vw = 1.0 / d, va = 1.0 / N;

  data::Rng rng(99, 1);
  const int M = 200000;
  Vec num = Vec::Zero(n);
  double den = 0, max_logw = -kInf;
  std::vector<double> logw(M);
  std::vector<Vec> means(M);
  for (int k = 0; k < M; ++k) {
    Mat W(N, d);
    for (int i = 0; i < N; ++i)
      for (int j = 0; j < d; ++j) W(i, j) = std::sqrt(vw) * rng.normal();
    Mat H = ds.X * W.transpose();
    Mat G = va * H * H.transpose();
    Mat Kf = G + s2 * Mat::Identity(n, n);
    Eigen::LLT<Mat> llt(Kf);
    Vec alpha = llt.solve(ds.y);
    double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    logw[k] = -0.5 * ds.y.dot(alpha) - 0.5 * logdet;
    means[k] = G * alpha;
    max_logw = std::max(max_logw, logw[k]);
  }
  for (int k = 0; k < M; ++k) {
    double w = std::exp(logw[k] - max_logw);
    num += w * means[k];
    den += w;
  }
  Vec oracle = num / den;

  LangevinConfig c;
  c.spec = spec;
  c.lr = 0.01;
  c.burn_in = 2000;
  c.epochs = 200000;
  c.sample_stride = 5;
  c.seeds = {0, 1, 2, 3};
  c.probe_points = 0;
  c.random_directions = 1;
  auto st = sample_equilibrium(c, ds);
  INFO("oracle " << oracle.transpose() << " sampler " << st.f_bar.transpose());
  CHECK((st.f_bar - oracle).cwiseAbs().maxCoeff() < 0.03);
}
