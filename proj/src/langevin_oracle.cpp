#include "eoskit/langevin_oracle.hpp"

#include "eoskit/rng.hpp"
#include "eoskit/serialization.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

namespace eoskit::langevin {

using kernel::ActivationKind;

// ---------------------------------------------------------------- scheduler

AdaptiveScheduler::AdaptiveScheduler(double lr0, AdaptiveOptions opts, int warmup_epochs, double warmup_factor)
    : opts_(opts), lr_(warmup_epochs > 0 ? lr0 * warmup_factor : lr0), base_lr_(lr0), warmup_(warmup_epochs) {
  if (opts_.window < 2) throw ConfigError("adaptive scheduler: window must be >= 2");
}

double AdaptiveScheduler::observe(long epoch, double loss) {
  if (epoch + 1 == warmup_) {
    log_.push_back({epoch, lr_, base_lr_, "warmup_end"});
    lr_ = base_lr_;
    return lr_;
  }
  if (epoch < warmup_ || frozen_) return lr_;
  const auto w = static_cast<std::size_t>(opts_.window);
  bool spike = false;
  if (window_.size() == w) {
    const double n = static_cast<double>(w);
    double mean = sum_ / n;
    double var = std::max(sum2_ / n - mean * mean, 0.0);
    spike = loss - mean > opts_.spike_factor * std::sqrt(var);
  }
  if (spike) {
    log_.push_back({epoch, lr_, lr_ * opts_.decay, "spike"});
    lr_ *= opts_.decay;
    quiet_ = 0;
  } else if (++quiet_ >= opts_.quiet_epochs) {
    log_.push_back({epoch, lr_, lr_ * opts_.final_factor, "quiet_freeze"});
    lr_ *= opts_.final_factor;
    frozen_ = true;
  }
  window_.push_back(loss);
  sum_ += loss;
  sum2_ += loss * loss;
  if (window_.size() > w) {
    double old = window_.front();
    window_.pop_front();
    sum_ -= old;
    sum2_ -= old * old;
  }
  return lr_;
}

std::vector<ScheduleEvent> adaptive_schedule(const std::vector<double>& trace, double lr0, const AdaptiveOptions& opts,
                                             int warmup_epochs, double warmup_factor) {
  AdaptiveScheduler s(lr0, opts, warmup_epochs, warmup_factor);
  for (std::size_t e = 0; e < trace.size(); ++e) s.observe(static_cast<long>(e), trace[e]);
  return s.log();
}

// ---------------------------------------------------------------- config

void LangevinConfig::validate() const {
  spec.validate();
  for (double w : spec.widths)
    if (std::isinf(w) || w != std::floor(w) || w < 1) throw ConfigError("langevin: widths must be finite integers");
  if (!(lr > 0.0)) throw ConfigError("langevin: learning rate must be positive");
  if (burn_in < 0 || epochs < 1) throw ConfigError("langevin: epochs must be >= 1 and burn_in >= 0");
  if (sample_stride < 1) throw ConfigError("langevin: sample_stride must be >= 1");
  if (seeds.size() < 2) throw ConfigError("langevin: need at least 2 seeds");
  if (epochs / sample_stride < 10) throw ConfigError("langevin: need at least 10 snapshots per seed");
  if (probe_points < 0 || probe_points > 512) throw ConfigError("langevin: probe_points must lie in [0, 512]");
  if (random_directions < 0) throw ConfigError("langevin: random_directions must be >= 0");
  for (const Vec& d : directions)
    if (d.size() != spec.patch_dim || !(d.norm() > 0.0)) throw ConfigError("langevin: directions must be non-zero with patch_dim entries");
  if (directions.empty() && random_directions == 0) throw ConfigError("langevin: need at least one projection direction");
  if (log_stride < 1) throw ConfigError("langevin: log_stride must be >= 1");
}

namespace {

constexpr double kTwoOverSqrtPi = 2.0 / 1.7724538509055160273;

Mat phi(ActivationKind k, const Mat& H) {
  switch (k) {
    case ActivationKind::Erf: return H.unaryExpr([](double v) { return std::erf(v); });
    case ActivationKind::ReLU: return H.cwiseMax(0.0);
    case ActivationKind::Linear: return H;
  }
  return H;
}

Mat dphi(ActivationKind k, const Mat& H) {
  switch (k) {
    case ActivationKind::Erf: return H.unaryExpr([](double v) { return kTwoOverSqrtPi * std::exp(-v * v); });
    case ActivationKind::ReLU: return H.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; });
    case ActivationKind::Linear: return Mat::Ones(H.rows(), H.cols());
  }
  return H;
}

// Network parameters; layer index l = 1..L, tensors[l-1] holds the layer's weights.
// Layer 1: one C1 x S0 matrix. Hidden l: s_l matrices C_l x C_{l-1}. Readout: one P x C_{L-1}.
struct Params {
  std::vector<std::vector<Mat>> w;
};

struct Geometry {
  int L = 0, n = 0;
  std::vector<int> channels;  // C_1..C_{L-1} at [0..L-2]
  std::vector<int> pixels;    // P_1..P_{L-1}
  std::vector<int> strides;   // s_2..s_{L-1}
  std::vector<double> var;    // prior variance per weight, layers 1..L
  std::vector<std::vector<std::vector<int>>> gather;  // gather[l][i]: lower rows for hidden layer l (index l-2)
};

Geometry make_geometry(const eos::NetworkSpec& s, int n) {
  Geometry g;
  g.L = s.depth;
  g.n = n;
  for (double w : s.widths) g.channels.push_back(static_cast<int>(w));
  for (int l = 1; l <= g.L - 1; ++l) g.pixels.push_back(s.pixels(l));
  g.strides = s.strides;
  g.var.push_back(s.variances[0] / s.patch_dim);
  for (int l = 2; l <= g.L - 1; ++l) g.var.push_back(s.variances[l - 1] / (g.channels[l - 2] * s.strides[l - 2]));
  const int P = g.pixels.back();
  g.var.push_back(s.readout_variance() / (static_cast<double>(g.channels.back()) * P));
  for (int l = 2; l <= g.L - 1; ++l) {
    const int st = s.strides[l - 2], lowerP = g.pixels[l - 2], upperP = g.pixels[l - 1];
    std::vector<std::vector<int>> per;
    for (int i = 0; i < st; ++i) {
      std::vector<int> rows;
      for (int mu = 0; mu < n; ++mu)
        for (int j = 0; j < upperP; ++j) rows.push_back(mu * lowerP + i + j * st);
      per.push_back(std::move(rows));
    }
    g.gather.push_back(std::move(per));
  }
  return g;
}

Params init_params(const Geometry& g, int S0, data::Rng& rng) {
  Params p;
  auto draw = [&](int r, int c, double var) {
    Mat m(r, c);
    double sd = std::sqrt(var);
    for (int j = 0; j < c; ++j)
      for (int i = 0; i < r; ++i) m(i, j) = sd * rng.normal();
    return m;
  };
  p.w.push_back({draw(g.channels[0], S0, g.var[0])});
  for (int l = 2; l <= g.L - 1; ++l) {
    std::vector<Mat> v;
    for (int i = 0; i < g.strides[l - 2]; ++i) v.push_back(draw(g.channels[l - 1], g.channels[l - 2], g.var[l - 1]));
    p.w.push_back(std::move(v));
  }
  p.w.push_back({draw(g.pixels.back(), g.channels.back(), g.var.back())});
  return p;
}

struct Forward {
  std::vector<Mat> H;  // pre-activations layers 1..L-1, rows (mu, pixel), cols channels
  std::vector<Mat> A;  // activations
  Vec f;
};

Forward forward(const Geometry& g, const std::vector<ActivationKind>& act, const Mat& Xp, const Params& p) {
  Forward fw;
  fw.H.push_back(Xp * p.w[0][0].transpose());
  fw.A.push_back(phi(act[0], fw.H[0]));
  for (int l = 2; l <= g.L - 1; ++l) {
    const Mat& lower = fw.A.back();
    Mat H = Mat::Zero(static_cast<Eigen::Index>(g.n) * g.pixels[l - 1], g.channels[l - 1]);
    for (std::size_t i = 0; i < g.gather[l - 2].size(); ++i)
      H.noalias() += lower(g.gather[l - 2][i], Eigen::all) * p.w[l - 1][i].transpose();
    fw.A.push_back(phi(act[l - 1], H));
    fw.H.push_back(std::move(H));
  }
  const Mat& top = fw.A.back();
  const Mat& a = p.w.back()[0];
  const int P = g.pixels.back();
  fw.f = Vec::Zero(g.n);
  for (int mu = 0; mu < g.n; ++mu)
    for (int j = 0; j < P; ++j) fw.f(mu) += top.row(mu * P + j).dot(a.row(j));
  return fw;
}

// Gradient of sum (f - y)^2 / (2 s2) with respect to every weight.
Params data_gradient(const Geometry& g, const std::vector<ActivationKind>& act, const Mat& Xp, const Params& p,
                     const Forward& fw, const Vec& y, double s2) {
  Params grad;
  grad.w.resize(p.w.size());
  const Vec r = (fw.f - y) / s2;
  const int P = g.pixels.back();
  const Mat& a = p.w.back()[0];
  const Mat& top = fw.A.back();
  Mat ga = Mat::Zero(a.rows(), a.cols());
  Mat G(top.rows(), top.cols());
  for (int mu = 0; mu < g.n; ++mu)
    for (int j = 0; j < P; ++j) {
      ga.row(j) += r(mu) * top.row(mu * P + j);
      G.row(mu * P + j) = r(mu) * a.row(j);
    }
  grad.w.back() = {ga};
  G = G.cwiseProduct(dphi(act[g.L - 2], fw.H.back()));
  for (int l = g.L - 1; l >= 2; --l) {
    const Mat& lower = fw.A[l - 2];
    Mat dlower = Mat::Zero(lower.rows(), lower.cols());
    std::vector<Mat> gv;
    for (std::size_t i = 0; i < g.gather[l - 2].size(); ++i) {
      const auto& rows = g.gather[l - 2][i];
      gv.push_back(G.transpose() * lower(rows, Eigen::all));
      dlower(rows, Eigen::all) += G * p.w[l - 1][i];
    }
    grad.w[l - 1] = std::move(gv);
    G = dlower.cwiseProduct(dphi(act[l - 2], fw.H[l - 2]));
  }
  grad.w[0] = {G.transpose() * Xp};
  return grad;
}

double prior_energy(const Geometry& g, const Params& p) {
  double e = 0.0;
  for (std::size_t l = 0; l < p.w.size(); ++l)
    for (const Mat& m : p.w[l]) e += m.squaredNorm() / (2.0 * g.var[l]);
  return e;
}

struct SeedRun {
  SeedSummary summary;
  Mat sigma_sum;
  Vec f_sum;
  std::vector<double> mse;  // per snapshot
  std::vector<std::vector<double>> proj;  // per direction
  std::vector<double> overlap_sum;        // per first-layer channel
  std::vector<std::vector<double>> in_norm_sum, out_norm_sum;  // per layer 1..L-1, per channel
  std::vector<Mat> K_sum, Q_sum;
  std::vector<std::vector<Mat>> w2_sum;  // per-weight squared sums
  std::size_t snapshots = 0;
};

void write_log_header(std::ofstream& out, std::uint64_t seed, double lr) {
  io::json h = {{"format", "eoskit-trajectory"},
                {"version", 1},
                {"seed", seed},
                {"lr0", lr},
                {"fields", {"epoch", "lr", "potential", "train_mse"}},
                {"dtype", "f64"},
                {"endianness", "little"},
                {"record_bytes", 32}};
  std::string line = h.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
}

void write_record(std::ofstream& out, std::initializer_list<double> vals) {
  for (double v : vals) {
    std::uint64_t b = std::bit_cast<std::uint64_t>(v);
    if constexpr (std::endian::native == std::endian::big) b = __builtin_bswap64(b);
    out.write(reinterpret_cast<const char*>(&b), 8);
  }
}

SeedRun run_seed(const LangevinConfig& cfg, const data::Dataset& data, const Geometry& g, const Mat& Xp,
                 const std::vector<Vec>& dirs, std::uint64_t seed) {
  const auto& spec = cfg.spec;
  const auto& act = spec.activations;
  data::Rng init_rng(seed, 100), noise_rng(seed, 101);
  Params p = init_params(g, spec.patch_dim, init_rng);
  const bool has_data = g.n > 0;
  const int probe = std::min(cfg.probe_points, g.n);

  SeedRun run;
  run.summary.seed = seed;
  run.sigma_sum = Mat::Zero(spec.patch_dim, spec.patch_dim);
  run.f_sum = Vec::Zero(g.n);
  run.proj.resize(dirs.size());
  run.overlap_sum.assign(g.channels[0], 0.0);
  for (int l = 1; l <= g.L - 1; ++l) {
    run.in_norm_sum.emplace_back(g.channels[l - 1], 0.0);
    run.out_norm_sum.emplace_back(g.channels[l - 1], 0.0);
    if (probe > 0) {
      const Eigen::Index d = static_cast<Eigen::Index>(probe) * g.pixels[l - 1];
      run.K_sum.push_back(Mat::Zero(d, d));
      run.Q_sum.push_back(Mat::Zero(d, d));
    }
  }
  for (const auto& layer : p.w) {
    std::vector<Mat> z;
    for (const Mat& m : layer) z.push_back(Mat::Zero(m.rows(), m.cols()));
    run.w2_sum.push_back(std::move(z));
  }

  std::ofstream log;
  if (!cfg.log_dir.empty()) {
    std::filesystem::create_directories(cfg.log_dir);
    log.open(cfg.log_dir / ("seed_" + std::to_string(seed) + ".bin"), std::ios::binary | std::ios::trunc);
    if (!log) throw ConfigError("langevin: cannot open trajectory log in " + cfg.log_dir.string());
    write_log_header(log, seed, cfg.lr);
  }

  AdaptiveScheduler sched(cfg.lr, cfg.adaptive, cfg.warmup_epochs, cfg.warmup_factor);
  double lr = cfg.warmup_epochs > 0 ? cfg.lr * cfg.warmup_factor : cfg.lr;
  double U0 = -1.0, last_stable = lr;
  const long total = cfg.burn_in + cfg.epochs;
  const bool precond = cfg.preconditioning == Preconditioning::Prior;

  for (long epoch = 0; epoch < total; ++epoch) {
    Forward fw;
    Params grad;
    double data_loss = 0.0, mse = 0.0;
    if (has_data) {
      fw = forward(g, act, Xp, p);
      mse = (fw.f - data.y).squaredNorm() / g.n;
      data_loss = mse * g.n / (2.0 * spec.noise);
    }
    const double U = data_loss + prior_energy(g, p);
    if (U0 < 0.0) U0 = std::max(U, 1e-300);
    if (!std::isfinite(U) || U > cfg.divergence_factor * U0) {
      std::ostringstream msg;
      msg << "langevin: divergence at epoch " << epoch << " (seed " << seed << ", lr " << lr
          << "); last stable lr " << last_stable << ", retry with a smaller learning rate";
      throw NumericalError(msg.str());
    }
    last_stable = lr;

    const bool sampling = epoch >= cfg.burn_in && (epoch - cfg.burn_in) % cfg.sample_stride == 0;
    if (sampling) {
      ++run.snapshots;
      const Mat& W1 = p.w[0][0];
      run.sigma_sum += W1.transpose() * W1 / static_cast<double>(g.channels[0]);
      if (has_data) {
        run.f_sum += fw.f;
        run.mse.push_back(mse);
      }
      for (std::size_t k = 0; k < dirs.size(); ++k) {
        Vec pr = W1 * dirs[k];
        run.proj[k].insert(run.proj[k].end(), pr.data(), pr.data() + pr.size());
        if (k == 0)
          for (int c = 0; c < g.channels[0]; ++c) run.overlap_sum[c] += pr(c) * pr(c);
      }
      // Incoming / outgoing weight norms per channel of every hidden layer.
      for (int l = 1; l <= g.L - 1; ++l) {
        for (int c = 0; c < g.channels[l - 1]; ++c) {
          double in = 0.0, out = 0.0;
          for (const Mat& m : p.w[l - 1]) in += m.row(c).squaredNorm();
          for (const Mat& m : p.w[l]) out += m.col(c).squaredNorm();
          run.in_norm_sum[l - 1][c] += in;
          run.out_norm_sum[l - 1][c] += out;
        }
        if (probe > 0) {
          const Eigen::Index rows = static_cast<Eigen::Index>(probe) * g.pixels[l - 1];
          const Mat Ht = fw.H[l - 1].topRows(rows);
          const Mat At = fw.A[l - 1].topRows(rows);
          run.K_sum[l - 1].noalias() += Ht * Ht.transpose();
          run.Q_sum[l - 1].noalias() += At * At.transpose();
        }
      }
      for (std::size_t l = 0; l < p.w.size(); ++l)
        for (std::size_t i = 0; i < p.w[l].size(); ++i) run.w2_sum[l][i] += p.w[l][i].cwiseAbs2();
    }
    if (log.is_open() && epoch % cfg.log_stride == 0) write_record(log, {static_cast<double>(epoch), lr, U, mse});

    if (has_data) grad = data_gradient(g, act, Xp, p, fw, data.y, spec.noise);
    for (std::size_t l = 0; l < p.w.size(); ++l) {
      const double var = g.var[l];
      const double step = precond ? lr * var : lr;
      const double noise_sd = std::sqrt(2.0 * step);
      for (std::size_t i = 0; i < p.w[l].size(); ++i) {
        Mat& w = p.w[l][i];
        Mat drift = w / var;
        if (has_data) drift += grad.w[l][i];
        w -= step * drift;
        for (Eigen::Index c = 0; c < w.cols(); ++c)
          for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) += noise_sd * noise_rng.normal();
      }
    }
    if (cfg.scheduler == SchedulerKind::Adaptive) {
      lr = sched.observe(epoch, U);
    } else if (epoch + 1 == cfg.warmup_epochs) {
      lr = cfg.lr;
    }
  }
  run.summary.final_lr = lr;
  run.summary.schedule = sched.log();
  run.summary.snapshots = run.snapshots;
  return run;
}

double batch_mean_se(const std::vector<double>& x, int batches = 10) {
  if (x.size() < static_cast<std::size_t>(batches)) return 0.0;
  std::vector<double> means;
  std::size_t per = x.size() / batches;
  for (int b = 0; b < batches; ++b)
    means.push_back(std::accumulate(x.begin() + b * per, x.begin() + (b + 1) * per, 0.0) / static_cast<double>(per));
  return seed_mean(means).stderr_seeds;
}

double mean_of(const std::vector<double>& x) {
  return x.empty() ? 0.0 : std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

Mat input_rows(const eos::NetworkSpec& spec, const data::Dataset& data) {
  const int n = data.n();
  if (n > 0 && (data.patches != spec.patches || data.patch_dim != spec.patch_dim))
    throw ConfigError("langevin: dataset patch geometry does not match the network");
  return n > 0 ? kernel::patch_rows(data.X, spec.patch_dim, kernel::Stride{n, spec.patches, 1}, 0)
               : Mat(0, spec.patch_dim);
}

void check_finite_widths(const eos::NetworkSpec& spec) {
  spec.validate();
  for (double w : spec.widths)
    if (std::isinf(w) || w != std::floor(w) || w < 1) throw ConfigError("langevin: widths must be finite integers");
}

}  // namespace

std::vector<double> prior_variances(const eos::NetworkSpec& spec) {
  check_finite_widths(spec);
  return make_geometry(spec, 0).var;
}

Weights sample_prior(const eos::NetworkSpec& spec, std::uint64_t seed) {
  check_finite_widths(spec);
  data::Rng rng(seed, 100);
  return init_params(make_geometry(spec, 0), spec.patch_dim, rng).w;
}

Vec network_output(const eos::NetworkSpec& spec, const data::Dataset& data, const Weights& w) {
  check_finite_widths(spec);
  const Geometry g = make_geometry(spec, data.n());
  if (data.n() == 0) return Vec();
  return forward(g, spec.activations, input_rows(spec, data), Params{w}).f;
}

double potential(const eos::NetworkSpec& spec, const data::Dataset& data, const Weights& w, Weights* grad) {
  check_finite_widths(spec);
  const Geometry g = make_geometry(spec, data.n());
  Params p{w};
  double U = prior_energy(g, p);
  Params gd;
  if (data.n() > 0) {
    const Mat Xp = input_rows(spec, data);
    Forward fw = forward(g, spec.activations, Xp, p);
    U += (fw.f - data.y).squaredNorm() / (2.0 * spec.noise);
    if (grad) gd = data_gradient(g, spec.activations, Xp, p, fw, data.y, spec.noise);
  }
  if (grad) {
    grad->clear();
    for (std::size_t l = 0; l < w.size(); ++l) {
      std::vector<Mat> layer;
      for (std::size_t i = 0; i < w[l].size(); ++i) {
        Mat gl = w[l][i] / g.var[l];
        if (data.n() > 0) gl += gd.w[l][i];
        layer.push_back(std::move(gl));
      }
      grad->push_back(std::move(layer));
    }
  }
  return U;
}

// ---------------------------------------------------------------- sampler

EquilibriumStats sample_equilibrium(const LangevinConfig& cfg, const data::Dataset& data) {
  cfg.validate();
  const auto& spec = cfg.spec;
  const int n = data.n();
  const Mat Xp = input_rows(spec, data);
  const Geometry g = make_geometry(spec, n);

  std::vector<Vec> dirs;
  std::vector<std::string> labels;
  for (std::size_t k = 0; k < cfg.directions.size(); ++k) {
    dirs.push_back(cfg.directions[k].normalized());
    labels.push_back(k == 0 ? "teacher" : "direction_" + std::to_string(k));
  }
  data::Rng drng(cfg.direction_seed, 200);
  for (int k = 0; k < cfg.random_directions; ++k) {
    Vec v(spec.patch_dim);
    for (int i = 0; i < spec.patch_dim; ++i) v(i) = drng.normal();
    dirs.push_back(v.normalized());
    labels.push_back("random_" + std::to_string(k));
  }

  std::vector<std::uint64_t> seeds = cfg.seeds;
  std::sort(seeds.begin(), seeds.end());
  std::vector<SeedRun> runs(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) { runs[i] = run_seed(cfg, data, g, Xp, dirs, seeds[i]); });

  EquilibriumStats st;
  const double S = static_cast<double>(runs.size());
  st.Sigma_hat = Mat::Zero(spec.patch_dim, spec.patch_dim);
  std::vector<double> tops, alphas, mses;
  if (n > 0) st.f_bar = Vec::Zero(n);
  for (auto& r : runs) {
    Mat sig = r.sigma_sum / static_cast<double>(r.snapshots);
    st.Sigma_hat += sig / S;
    r.summary.top_sigma = eos::top_eigenvalue(sig);
    tops.push_back(r.summary.top_sigma);
    if (n > 0) {
      Vec fb = r.f_sum / static_cast<double>(r.snapshots);
      st.f_bar += fb / S;
      Vec delta = (data.y - fb) / spec.noise;
      r.summary.alpha = data.y.dot(delta) / data.y.squaredNorm();
      r.summary.mean_train_mse = mean_of(r.mse);
      r.summary.fbar_mse = (data.y - fb).squaredNorm() / n;
      alphas.push_back(r.summary.alpha);
      mses.push_back(r.summary.mean_train_mse);
    }
    st.seeds.push_back(r.summary);
  }
  st.Sigma_hat = symmetrize(st.Sigma_hat);
  st.top_sigma = eos::top_eigenvalue(st.Sigma_hat);
  st.top_sigma_stderr = seed_mean(tops).stderr_seeds;

  if (n > 0) {
    Vec delta = (data.y - st.f_bar) / spec.noise;
    st.alpha = data.y.dot(delta) / data.y.squaredNorm();
    st.alpha_stderr = seed_mean(alphas).stderr_seeds;
    st.train_mse = (data.y - st.f_bar).squaredNorm() / n;
    const std::size_t snaps = runs[0].mse.size();
    for (std::size_t t = 0; t < snaps; ++t) {
      double m = 0.0;
      for (const auto& r : runs) m += r.mse[t] / S;
      st.mse_trace.push_back(m);
    }
    // Stationarity: first-half vs second-half mean, differences taken per seed.
    std::vector<double> diffs;
    for (const auto& r : runs) {
      std::size_t h = r.mse.size() / 2;
      diffs.push_back(mean_of({r.mse.begin(), r.mse.begin() + h}) - mean_of({r.mse.begin() + h, r.mse.end()}));
    }
    SeedMean dm = seed_mean(diffs);
    st.stationary = std::abs(dm.mean) <= 3.0 * dm.stderr_seeds;
    double se0 = batch_mean_se(runs[0].mse), se1 = batch_mean_se(runs[1].mse);
    st.seeds_agree = std::abs(mses[0] - mses[1]) <= 3.0 * std::sqrt(se0 * se0 + se1 * se1);

    const int probe = std::min(cfg.probe_points, n);
    if (probe > 0) {
      for (int l = 1; l <= g.L - 1; ++l) {
        double count = 0.0;
        Mat K = Mat::Zero(runs[0].K_sum[l - 1].rows(), runs[0].K_sum[l - 1].cols()), Q = K;
        for (const auto& r : runs) {
          K += r.K_sum[l - 1];
          Q += r.Q_sum[l - 1];
          count += static_cast<double>(r.snapshots) * g.channels[l - 1];
        }
        const double s2_next = l == g.L - 1 ? spec.readout_variance() : spec.variances[l];
        st.K_hat.push_back(symmetrize(K / count));
        st.Q_hat.push_back(symmetrize(Q * (s2_next / count)));
      }
    }
  } else {
    st.stationary = true;
    st.seeds_agree = true;
  }

  // Gaussianity of first-layer projections, grouped by seed.
  std::vector<std::vector<std::vector<double>>> groups(dirs.size());
  for (std::size_t k = 0; k < dirs.size(); ++k)
    for (const auto& r : runs) groups[k].push_back(r.proj[k]);
  st.gaussianity = gaussianity_report(groups, labels);
  st.samples_per_direction = st.gaussianity.empty() ? 0 : st.gaussianity[0].samples;

  // Per-channel summaries, time-averaged.
  auto averaged = [&](auto member, int layer) {
    std::vector<std::vector<double>> out;
    for (const auto& r : runs) {
      std::vector<double> v = (r.*member)[layer];
      for (double& x : v) x /= static_cast<double>(r.snapshots);
      out.push_back(std::move(v));
    }
    return out;
  };
  {
    std::vector<std::vector<double>> overlap;
    for (const auto& r : runs) {
      std::vector<double> v = r.overlap_sum;
      for (double& x : v) x /= static_cast<double>(r.snapshots);
      overlap.push_back(std::move(v));
    }
    auto out1 = averaged(&SeedRun::out_norm_sum, 0);
    st.inter_layer.push_back(correlate(overlap, out1, "layer1_overlap_vs_outgoing_norm"));
    for (int l = 2; l <= g.L - 1; ++l)
      st.inter_layer.push_back(correlate(averaged(&SeedRun::in_norm_sum, l - 1), averaged(&SeedRun::out_norm_sum, l - 1),
                                         "layer" + std::to_string(l) + "_incoming_vs_outgoing_norm"));
    if (g.channels[0] >= 2) {
      std::vector<std::vector<double>> a, b;
      for (const auto& v : overlap) {
        std::vector<double> x, y;
        for (std::size_t c = 0; c + 1 < v.size(); c += 2) {
          x.push_back(v[c]);
          y.push_back(v[c + 1]);
        }
        a.push_back(std::move(x));
        b.push_back(std::move(y));
      }
      st.inter_channel.push_back(correlate(a, b, "layer1_overlap_channel_pairs"));
    }
  }

  // Per-weight stationary variance, pooled across seeds (weights are exchangeable within a layer).
  for (std::size_t l = 0; l < runs[0].w2_sum.size(); ++l) {
    std::vector<double> vals;
    for (const auto& r : runs)
      for (const Mat& m : r.w2_sum[l])
        for (Eigen::Index i = 0; i < m.size(); ++i) vals.push_back(m.data()[i] / static_cast<double>(r.snapshots));
    LayerVariance lv;
    lv.layer = static_cast<int>(l) + 1;
    lv.expected = g.var[l];
    SeedMean sm = seed_mean(vals);
    lv.empirical = sm.mean;
    lv.stderr_weights = sm.stderr_seeds;
    lv.within_3se = std::abs(lv.empirical - lv.expected) <= 3.0 * lv.stderr_weights;
    st.layer_variances.push_back(lv);
  }
  return st;
}

// ---------------------------------------------------------------- JSON

nlohmann::json to_json(const ScheduleEvent& e) {
  return {{"epoch", e.epoch}, {"old_lr", e.old_lr}, {"new_lr", e.new_lr}, {"reason", e.reason}};
}

nlohmann::json to_json(const EquilibriumStats& s) {
  using nlohmann::json;
  json seeds = json::array();
  for (const auto& r : s.seeds) {
    json ev = json::array();
    for (const auto& e : r.schedule) ev.push_back(to_json(e));
    seeds.push_back({{"seed", r.seed},
                     {"final_lr", r.final_lr},
                     {"mean_train_mse", r.mean_train_mse},
                     {"fbar_mse", r.fbar_mse},
                     {"alpha", r.alpha},
                     {"top_sigma", r.top_sigma},
                     {"snapshots", r.snapshots},
                     {"schedule", ev}});
  }
  json gauss = json::array(), inter = json::array(), chan = json::array(), lv = json::array();
  for (const auto& p : s.gaussianity) gauss.push_back(to_json(p));
  for (const auto& c : s.inter_layer) inter.push_back(to_json(c));
  for (const auto& c : s.inter_channel) chan.push_back(to_json(c));
  for (const auto& v : s.layer_variances)
    lv.push_back({{"layer", v.layer},
                  {"expected", v.expected},
                  {"empirical", v.empirical},
                  {"stderr", v.stderr_weights},
                  {"within_3se", v.within_3se}});
  return {{"Sigma_hat", io::to_json(s.Sigma_hat)},
          {"top_sigma", s.top_sigma},
          {"top_sigma_stderr", s.top_sigma_stderr},
          {"train_mse", s.train_mse},
          {"alpha", s.alpha},
          {"alpha_stderr", s.alpha_stderr},
          {"mse_trace", s.mse_trace},
          {"gaussianity", gauss},
          {"inter_layer", inter},
          {"inter_channel", chan},
          {"layer_variances", lv},
          {"stationary", s.stationary},
          {"seeds_agree", s.seeds_agree},
          {"samples_per_direction", s.samples_per_direction},
          {"seeds", seeds}};
}

LangevinConfig langevin_config_from_json(const nlohmann::json& j, const eos::NetworkSpec& spec) {
  io::reject_unknown_keys(j, {"lr", "burn_in", "epochs", "sample_stride", "seeds", "scheduler", "warmup_epochs",
                              "warmup_factor", "adaptive", "preconditioning", "probe_points", "random_directions",
                              "direction_seed", "divergence_factor", "log_stride", "teacher_direction", "write_logs"},
                          "oracle");
  LangevinConfig c;
  c.spec = spec;
  c.lr = j.value("lr", c.lr);
  c.burn_in = j.value("burn_in", c.burn_in);
  c.epochs = j.value("epochs", c.epochs);
  c.sample_stride = j.value("sample_stride", c.sample_stride);
  if (j.contains("seeds")) c.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
  std::string sch = j.value("scheduler", std::string("fixed"));
  if (sch == "fixed")
    c.scheduler = SchedulerKind::Fixed;
  else if (sch == "adaptive")
    c.scheduler = SchedulerKind::Adaptive;
  else
    throw ConfigError("oracle.scheduler: expected 'fixed' or 'adaptive'");
  c.warmup_epochs = j.value("warmup_epochs", c.warmup_epochs);
  c.warmup_factor = j.value("warmup_factor", c.warmup_factor);
  if (j.contains("adaptive")) {
    const auto& a = j["adaptive"];
    io::reject_unknown_keys(a, {"window", "spike_factor", "decay", "quiet_epochs", "final_factor"}, "oracle.adaptive");
    c.adaptive.window = a.value("window", c.adaptive.window);
    c.adaptive.spike_factor = a.value("spike_factor", c.adaptive.spike_factor);
    c.adaptive.decay = a.value("decay", c.adaptive.decay);
    c.adaptive.quiet_epochs = a.value("quiet_epochs", c.adaptive.quiet_epochs);
    c.adaptive.final_factor = a.value("final_factor", c.adaptive.final_factor);
  }
  std::string pre = j.value("preconditioning", std::string("prior"));
  if (pre == "prior")
    c.preconditioning = Preconditioning::Prior;
  else if (pre == "none")
    c.preconditioning = Preconditioning::None;
  else
    throw ConfigError("oracle.preconditioning: expected 'prior' or 'none'");
  c.probe_points = j.value("probe_points", c.probe_points);
  c.random_directions = j.value("random_directions", c.random_directions);
  c.direction_seed = j.value("direction_seed", c.direction_seed);
  c.divergence_factor = j.value("divergence_factor", c.divergence_factor);
  c.log_stride = j.value("log_stride", c.log_stride);
  return c;
}

}  // namespace eoskit::langevin
