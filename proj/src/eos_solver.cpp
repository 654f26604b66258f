#include "eoskit/eos_solver.hpp"

#include "eoskit/newton_krylov.hpp"
#include "eoskit/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace eoskit::eos {

using kernel::ActivationKind;
using kernel::SpdFactor;
using kernel::Stride;

namespace {

double width_ratio(double upper, double lower) {
  if (std::isinf(upper) && std::isinf(lower)) return 1.0;
  if (std::isinf(upper) || std::isinf(lower))
    throw ConfigError("widths of adjacent layers must be both finite or both infinite");
  return upper / lower;
}

double rel_diff(const Mat& a, const Mat& b) {
  double d = (a - b).norm();
  double s = a.norm();
  return s > 0.0 ? d / s : d;
}

// PD check; on failure clips eigenvalues at floor * max eigenvalue.
bool ensure_pd(Mat& m, double floor) {
  Eigen::LLT<Mat> llt(m);
  if (llt.info() == Eigen::Success) return false;
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  Vec ev = es.eigenvalues();
  double cut = floor * std::max(ev.maxCoeff(), 1e-300);
  ev = ev.cwiseMax(cut);
  m = symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
  return true;
}

bool is_pd(const Mat& m) {
  Eigen::LLT<Mat> llt(m);
  return llt.info() == Eigen::Success;
}

// (I + c Q M)^{-1} Q: the solution of K^{-1} = Q^{-1} + c M without inverting Q.
Mat coupled_update(const Mat& Q, double c, const Mat& M) {
  if (c == 0.0) return Q;
  Mat B = Mat::Identity(Q.rows(), Q.cols()) + c * Q * M;
  Eigen::PartialPivLU<Mat> lu(B);
  Mat K = lu.solve(Q);
  if (!K.allFinite()) throw NumericalError("EoS update: singular system (I + c Q M)");
  return symmetrize(K);
}

double chi_from_v(const Mat& V, double width) {
  if (std::isinf(width)) return 0.0;
  double tr = V.trace();
  if (!(tr > 0.0)) return 0.0;
  return V.squaredNorm() / (width * static_cast<double>(V.rows()) * tr);
}

Mat pixel_overlaps(const Vec& delta, const Mat& Q, int pixels) {
  const Eigen::Index n = delta.size();
  if (Q.rows() != n * pixels || Q.cols() != n * pixels) throw ConfigError("emergent_scale: kernel/delta shape mismatch");
  Mat D = Mat::Zero(n * pixels, pixels);
  for (Eigen::Index mu = 0; mu < n; ++mu)
    for (int i = 0; i < pixels; ++i) D(mu * pixels + i, i) = delta(mu);
  return D.transpose() * Q * D;
}

std::string arch_name(Architecture a) { return a == Architecture::Fcn ? "fcn" : "cnn"; }

}  // namespace

// ---------------------------------------------------------------- NetworkSpec

NetworkSpec NetworkSpec::fcn(int depth, int d, double width, std::vector<double> variances, double noise) {
  NetworkSpec s;
  s.arch = Architecture::Fcn;
  s.depth = depth;
  s.widths.assign(std::max(depth - 1, 0), width);
  s.variances = std::move(variances);
  s.activations.assign(std::max(depth - 1, 0), ActivationKind::Erf);
  s.patches = 1;
  s.patch_dim = d;
  s.strides.assign(std::max(depth - 2, 0), 1);
  s.noise = noise;
  return s;
}

NetworkSpec NetworkSpec::cnn(int depth, int patches, int patch_dim, std::vector<int> strides, double channels,
                             std::vector<double> variances, double noise) {
  NetworkSpec s;
  s.arch = Architecture::Cnn;
  s.depth = depth;
  s.widths.assign(std::max(depth - 1, 0), channels);
  s.variances = std::move(variances);
  s.activations.assign(std::max(depth - 1, 0), ActivationKind::Erf);
  s.patches = patches;
  s.patch_dim = patch_dim;
  s.strides = std::move(strides);
  s.noise = noise;
  return s;
}

void NetworkSpec::validate() const {
  const auto L = static_cast<std::size_t>(depth);
  if (depth < 2) throw ConfigError("network: depth must be >= 2");
  if (widths.size() != L - 1) throw ConfigError("network: need depth-1 widths");
  if (variances.size() != L) throw ConfigError("network: need one variance per layer");
  if (activations.size() != L - 1) throw ConfigError("network: need depth-1 activations");
  if (strides.size() != L - 2) throw ConfigError("network: need depth-2 hidden strides");
  if (patches < 1 || patch_dim < 1) throw ConfigError("network: patches and patch_dim must be >= 1");
  if (!(noise > 0.0)) throw ConfigError("network: noise variance must be positive");
  for (double w : widths)
    if (!(w > 0.0)) throw ConfigError("network: widths must be positive");
  for (double v : variances)
    if (!(v > 0.0) || std::isinf(v)) throw ConfigError("network: variances must be positive and finite");
  for (auto a : activations)
    if (a == ActivationKind::ReLU)
      throw ConfigError("network: ReLU layers are not supported by the equations of state (centered kernels only)");
  int p = patches;
  for (int s : strides) {
    if (s < 1 || p % s != 0) throw ConfigError("network: stride does not divide the pixel count");
    p /= s;
  }
  if (arch == Architecture::Fcn) {
    if (patches != 1) throw ConfigError("network: FCNs have a single patch");
    for (int s : strides)
      if (s != 1) throw ConfigError("network: FCN strides must be 1");
  }
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) width_ratio(widths[l + 1], widths[l]);
  if (scaling == Scaling::MeanField && std::isinf(widths.back()))
    throw ConfigError("network: mean-field scaling needs a finite readout width");
}

int NetworkSpec::pixels(int layer) const {
  int p = patches;
  for (int l = 2; l <= layer; ++l) p /= strides[l - 2];
  return p;
}

int NetworkSpec::stride(int layer) const { return layer == depth ? pixels(depth - 1) : strides[layer - 2]; }

double NetworkSpec::readout_variance() const {
  double v = variances.back();
  return scaling == Scaling::MeanField ? v / widths.back() : v;
}

void SolverOptions::validate() const {
  if (!(damping > 0.0 && damping <= 1.0)) throw ConfigError("solver: damping must lie in (0, 1]");
  if (max_iters < 1) throw ConfigError("solver: max_iters must be >= 1");
  if (!(residual_tol > 0.0)) throw ConfigError("solver: residual_tol must be positive");
  if (krylov_dim < 1 || !(fd_step > 0.0)) throw ConfigError("solver: invalid Newton-Krylov settings");
  if (stall_window < 2) throw ConfigError("solver: stall_window must be >= 2");
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] > 0.0)) throw ConfigError("solver: schedule widths must be positive");
    if (i > 0 && !(schedule[i] < schedule[i - 1])) throw ConfigError("solver: schedule must be strictly descending");
  }
}

// ---------------------------------------------------------------- free functions

Mat hidden_fluctuation(const Mat& K, const Mat& Q) {
  if (K.rows() != Q.rows() || K.cols() != Q.cols()) throw ConfigError("hidden_fluctuation: index-space mismatch");
  SpdFactor f(Q, 0.0);
  Mat B = f.solve(Mat(Q - K));
  Mat A = f.solve(Mat(B.transpose())).transpose();
  return symmetrize(A);
}

double kl_divergence(const Mat& K, const Mat& Q) {
  SpdFactor fq(Q, 0.0), fk(K, 0.0);
  return 0.5 * (fq.solve(K).trace() - static_cast<double>(K.rows()) + fq.log_det() - fk.log_det());
}

Mat strided_adjoint(ActivationKind kind, const Mat& K_lower, double s2, const Stride& g, const Mat& A) {
  if (A.rows() != g.block_size()) throw ConfigError("strided_adjoint: A does not match the upper index space");
  Mat out = Mat::Zero(K_lower.rows(), K_lower.cols());
  const double scale = s2 / g.stride;
  for (int i = 0; i < g.stride; ++i) {
    Mat block = kernel::strided_block(K_lower, g, i);
    kernel::scatter_block_add(out, g, i, kernel::activation_map_adjoint(kind, block, scale, A));
  }
  return out;
}

Mat kl_gradient(const Mat& K_upper, const Mat& K_lower, ActivationKind kind, double s2, const Stride& g) {
  std::vector<Mat> blocks;
  for (int i = 0; i < g.stride; ++i) blocks.push_back(kernel::strided_block(K_lower, g, i));
  Mat Q = kernel::strided_forward(kind, blocks, s2);
  if (Q.rows() != K_upper.rows()) throw ConfigError("kl_gradient: K_upper does not match the forward map");
  return strided_adjoint(kind, K_lower, s2, g, hidden_fluctuation(K_upper, Q));
}

Mat kl_gradient(const Mat& K_upper, const Mat& K_lower, ActivationKind kind, double s2) {
  return kl_gradient(K_upper, K_lower, kind, s2, Stride{static_cast<int>(K_lower.rows()), 1, 1});
}

double emergent_scale(const Vec& delta, const Mat& Q, int pixels, double width) {
  return chi_from_v(pixel_overlaps(delta, Q, pixels), width);
}

double width_at_chi_one(const Vec& delta, const Mat& Q, int pixels) {
  Mat V = pixel_overlaps(delta, Q, pixels);
  double tr = V.trace();
  return tr > 0.0 ? V.squaredNorm() / (pixels * tr) : 0.0;
}

double mf_diagnostic(const Mat& Qf, double s2, double width, int pixels) {
  if (std::isinf(width)) return 0.0;
  Mat Kf = Qf;
  Kf.diagonal().array() += s2;
  SpdFactor f(Kf, 0.0);
  return f.solve(Qf).trace() / (width * pixels);
}

double top_eigenvalue(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

// ---------------------------------------------------------------- Solver

Mat gp_output_kernel(const NetworkSpec& spec, const Mat& X) {
  NetworkSpec gp = spec;
  std::fill(gp.widths.begin(), gp.widths.end(), kInf);
  gp.validate();
  if (X.cols() != static_cast<Eigen::Index>(gp.patches) * gp.patch_dim)
    throw ConfigError("gp kernel: input width does not match the patch layout");
  const int n = static_cast<int>(X.rows());
  if (gp.depth == 2) {
    const double prior = gp.variances[0] / gp.patch_dim;
    const double scale = gp.readout_variance() / gp.patches;
    Mat Qf = Mat::Zero(n, n);
    for (int i = 0; i < gp.patches; ++i) {
      Mat P(n, gp.patch_dim);
      for (int mu = 0; mu < n; ++mu)
        P.row(mu) = X.row(mu).segment(static_cast<Eigen::Index>(i) * gp.patch_dim, gp.patch_dim);
      Mat K = prior * (P * P.transpose());
      Qf += kernel::activation_map(gp.activations[0], symmetrize(K), scale);
    }
    return symmetrize(Qf);
  }
  data::Dataset d;
  d.X = X;
  d.y = Vec::Zero(n);
  d.patches = gp.patches;
  d.patch_dim = gp.patch_dim;
  return Solver(gp, d).gp_state().Qf;
}

Solver::Solver(NetworkSpec spec, const data::Dataset& data, SolverOptions options)
    : spec_(std::move(spec)), X_(data.X), y_(data.y), opts_(std::move(options)) {
  spec_.validate();
  opts_.validate();
  if (data.patches != spec_.patches || data.patch_dim != spec_.patch_dim)
    throw ConfigError("solver: dataset patch geometry does not match the network");
  if (data.y.size() != data.X.rows()) throw ConfigError("solver: targets and inputs differ in length");
  if (!X_.allFinite() || !y_.allFinite()) throw ConfigError("solver: non-finite data");
  Stride g{static_cast<int>(X_.rows()), spec_.patches, spec_.stride(2)};
  for (int i = 0; i < g.stride; ++i) patches1_.push_back(kernel::patch_rows(X_, spec_.patch_dim, g, i));
}

void Solver::set_widths(double w) {
  std::fill(spec_.widths.begin(), spec_.widths.end(), w);
  spec_.validate();
}

Solver::Coupling Solver::coupling() const {
  Coupling c;
  const int L = spec_.depth;
  double top = spec_.widths[L - 2];
  c.out = std::isinf(top) ? 0.0 : -1.0 / top;
  c.hidden.assign(L, 0.0);
  for (int l = 1; l <= L - 2; ++l) c.hidden[l] = width_ratio(spec_.widths[l], spec_.widths[l - 1]);
  return c;
}

std::vector<Mat> Solver::layer1_blocks(const Mat& Sigma) const {
  std::vector<Mat> b;
  b.reserve(patches1_.size());
  for (const Mat& P : patches1_) b.push_back(symmetrize(P * Sigma * P.transpose()));
  return b;
}

std::vector<Mat> Solver::lower_blocks(const EoSState& s, int layer) const {
  if (layer == 1) return layer1_blocks(s.Sigma);
  Stride g{static_cast<int>(X_.rows()), spec_.pixels(layer), spec_.stride(layer + 1)};
  std::vector<Mat> b;
  for (int i = 0; i < g.stride; ++i) b.push_back(kernel::strided_block(s.K[layer - 2], g, i));
  return b;
}

Mat Solver::sigma_adjoint(const Mat& Sigma, const Mat& A, double s2) const {
  const double scale = s2 / static_cast<double>(patches1_.size());
  Mat out = Mat::Zero(Sigma.rows(), Sigma.cols());
  auto blocks = layer1_blocks(Sigma);
  for (std::size_t i = 0; i < patches1_.size(); ++i) {
    Mat Mi = kernel::activation_map_adjoint(spec_.activations[0], blocks[i], scale, A);
    out += patches1_[i].transpose() * Mi * patches1_[i];
  }
  return symmetrize(out);
}

EoSState Solver::gp_state() const {
  EoSState s;
  const int L = spec_.depth;
  s.width = spec_.widths.back();
  s.Sigma = (spec_.variances[0] / spec_.patch_dim) * Mat::Identity(spec_.patch_dim, spec_.patch_dim);
  s.K.resize(L - 2);
  for (int l = 2; l <= L - 1; ++l)
    s.K[l - 2] = kernel::strided_forward(spec_.activations[l - 2], lower_blocks(s, l - 1), spec_.variances[l - 1]);
  refresh(s);
  return s;
}

Mat Solver::readout_linearization(const EoSState& s) const {
  const int L = spec_.depth;
  const double sa2 = spec_.readout_variance();
  const ActivationKind act = spec_.activations[L - 2];
  Mat Kpen;
  if (L == 2) {
    Mat P = kernel::patch_rows(X_, spec_.patch_dim, Stride{static_cast<int>(X_.rows()), spec_.patches, 1}, 0);
    Kpen = P * s.Sigma * P.transpose();
  } else {
    Kpen = s.K[L - 3];
  }
  if (act == ActivationKind::Linear) return sa2 * Kpen;
  Vec inv = (1.0 + 2.0 * Kpen.diagonal().array()).rsqrt();
  return (sa2 * 4.0 / std::numbers::pi) * inv.asDiagonal() * Kpen * inv.asDiagonal();
}

void Solver::refresh(EoSState& s) const {
  const int L = spec_.depth;
  s.width = spec_.widths.back();
  s.Q.resize(L - 2);
  for (int l = 2; l <= L - 1; ++l)
    s.Q[l - 2] = kernel::strided_forward(spec_.activations[l - 2], lower_blocks(s, l - 1), spec_.variances[l - 1]);
  s.Qf = kernel::strided_forward(spec_.activations[L - 2], lower_blocks(s, L - 1), spec_.readout_variance());
  s.posterior = gp::posterior_mean(s.Qf, y_, spec_.noise);
  s.A.clear();
  for (int l = 2; l <= L - 1; ++l) s.A.push_back(hidden_fluctuation(s.K[l - 2], s.Q[l - 2]));
  Mat Aout = s.posterior.delta * s.posterior.delta.transpose();
  if (spec_.include_output_fluctuation) {
    Mat Kf = s.Qf;
    Kf.diagonal().array() += spec_.noise;
    Aout -= SpdFactor(Kf, 0.0).inverse();
  }
  s.A.push_back(symmetrize(Aout));
  const double top = spec_.widths.back();
  const int P = spec_.pixels(L - 1);
  if (std::isinf(top)) {
    s.chi = 0.0;
    s.mf = 0.0;
  } else if (L == 2) {
    // v_ik from per-pixel delta-weighted input sums; avoids the (nP)^2 kernel.
    const Vec& d = s.posterior.delta;
    const ActivationKind act = spec_.activations[0];
    Mat U(spec_.patch_dim, P);
    for (int i = 0; i < P; ++i) {
      Vec u = Vec::Zero(spec_.patch_dim);
      for (Eigen::Index mu = 0; mu < X_.rows(); ++mu) {
        auto x = X_.row(mu).segment(static_cast<Eigen::Index>(i) * spec_.patch_dim, spec_.patch_dim);
        double w = d(mu);
        if (act == ActivationKind::Erf) w /= std::sqrt(1.0 + 2.0 * x.dot(s.Sigma * x.transpose()));
        u += w * x.transpose();
      }
      U.col(i) = u;
    }
    double c = spec_.readout_variance() * (act == ActivationKind::Erf ? 4.0 / std::numbers::pi : 1.0);
    s.chi = chi_from_v(c * U.transpose() * s.Sigma * U, top);
    s.mf = mf_diagnostic(s.Qf, spec_.noise, top, P);
  } else {
    s.chi = emergent_scale(s.posterior.delta, readout_linearization(s), P, top);
    s.mf = mf_diagnostic(s.Qf, spec_.noise, top, P);
  }
}

Mat Solver::raw_update(const EoSState& s, int layer, const Mat& A_upper, double c) const {
  const int L = spec_.depth;
  const double s2_next = layer + 1 == L ? spec_.readout_variance() : spec_.variances[layer];
  if (layer == 1) {
    const double prior = spec_.variances[0] / spec_.patch_dim;
    Mat Sigma0 = prior * Mat::Identity(spec_.patch_dim, spec_.patch_dim);
    if (c == 0.0) return Sigma0;
    return coupled_update(Sigma0, c, sigma_adjoint(s.Sigma, A_upper, s2_next));
  }
  const Mat& Q = s.Q[layer - 2];
  if (c == 0.0) return Q;
  Stride g{static_cast<int>(X_.rows()), spec_.pixels(layer), spec_.stride(layer + 1)};
  return coupled_update(Q, c, strided_adjoint(spec_.activations[layer - 1], s.K[layer - 2], s2_next, g, A_upper));
}

double Solver::picard_step(EoSState& s, double damping) const {
  const int L = spec_.depth;
  const Coupling cp = coupling();
  const bool gs = opts_.order == UpdateOrder::GaussSeidel;
  double metric = 0.0;
  std::vector<Mat> fresh(L);
  for (int layer = L - 1; layer >= 1; --layer) {
    Mat A_up;
    double c;
    if (layer == L - 1) {
      A_up = s.A.back();
      c = cp.out;
    } else {
      A_up = gs ? hidden_fluctuation(s.K[layer - 1], s.Q[layer - 1]) : s.A[layer - 1];
      c = cp.hidden[layer];
    }
    Mat& old = layer == 1 ? s.Sigma : s.K[layer - 2];
    Mat target = raw_update(s, layer, A_up, c);
    metric = std::max(metric, rel_diff(old, target));
    double beta = damping;
    // Backtrack the damping while the candidate leaves the PD cone.
    Mat next = (1.0 - beta) * old + beta * target;
    for (int bt = 0; bt < 6 && !is_pd(next); ++bt) {
      beta *= 0.5;
      next = (1.0 - beta) * old + beta * target;
    }
    if (ensure_pd(next, opts_.psd_floor)) ++s.psd_clips;
    if (gs)
      old = next;
    else
      fresh[layer] = std::move(next);
  }
  if (!gs)
    for (int layer = 1; layer <= L - 1; ++layer) (layer == 1 ? s.Sigma : s.K[layer - 2]) = std::move(fresh[layer]);
  refresh(s);
  return metric;
}

EoSState Solver::picard_map(const EoSState& s) const {
  const int L = spec_.depth;
  const Coupling cp = coupling();
  EoSState t = s;
  for (int layer = L - 1; layer >= 1; --layer) {
    const Mat& A_up = layer == L - 1 ? s.A.back() : s.A[layer - 1];
    double c = layer == L - 1 ? cp.out : cp.hidden[layer];
    (layer == 1 ? t.Sigma : t.K[layer - 2]) = raw_update(s, layer, A_up, c);
  }
  return t;
}

double Solver::step_metric(const EoSState& a, const EoSState& b) const {
  double m = rel_diff(a.Sigma, b.Sigma);
  for (std::size_t l = 0; l < a.K.size(); ++l) m = std::max(m, rel_diff(a.K[l], b.K[l]));
  return m;
}

std::vector<double> Solver::block_scales(const EoSState& s) const {
  std::vector<double> sc;
  sc.push_back(1.0 / std::max(s.Sigma.norm(), 1e-300));
  for (const Mat& K : s.K) sc.push_back(1.0 / std::max(K.norm(), 1e-300));
  return sc;
}

Vec Solver::pack(const EoSState& s, const std::vector<double>& scales) const {
  std::size_t total = packed_size(s.Sigma.rows());
  for (const Mat& K : s.K) total += packed_size(K.rows());
  Vec v(static_cast<Eigen::Index>(total));
  std::size_t off = 0;
  pack_symmetric(s.Sigma * scales[0], v.data());
  off += packed_size(s.Sigma.rows());
  for (std::size_t l = 0; l < s.K.size(); ++l) {
    pack_symmetric(s.K[l] * scales[l + 1], v.data() + off);
    off += packed_size(s.K[l].rows());
  }
  return v;
}

void Solver::unpack(const Vec& v, const std::vector<double>& scales, EoSState& s) const {
  std::size_t off = 0;
  s.Sigma = unpack_symmetric(v.data(), s.Sigma.rows()) / scales[0];
  off += packed_size(s.Sigma.rows());
  for (std::size_t l = 0; l < s.K.size(); ++l) {
    s.K[l] = unpack_symmetric(v.data() + off, s.K[l].rows()) / scales[l + 1];
    off += packed_size(s.K[l].rows());
  }
}

bool Solver::newton_krylov(EoSState& s, std::vector<double>* trace) const {
  const std::vector<double> scales = block_scales(s);
  EoSState work = s;
  auto G = [&](const Vec& x) -> Vec {
    unpack(x, scales, work);
    refresh(work);
    return pack(picard_map(work), scales) - x;
  };
  nk::NewtonOptions no;
  no.max_iters = opts_.newton_max_iters;
  no.krylov_dim = opts_.krylov_dim;
  no.fd_step = opts_.fd_step;
  no.abs_tol = 0.0;
  auto done = [&](const Vec& x, const Vec&) {
    EoSState probe = s;
    unpack(x, scales, probe);
    refresh(probe);
    double m = step_metric(probe, picard_map(probe));
    if (trace) trace->push_back(m);
    return m <= opts_.residual_tol;
  };
  nk::NewtonResult r;
  try {
    r = nk::newton_krylov(G, pack(s, scales), no, done);
  } catch (const NumericalError&) {
    return false;
  }
  EoSState cand = s;
  unpack(r.x, scales, cand);
  try {
    refresh(cand);
  } catch (const NumericalError&) {
    return false;
  }
  double before = step_metric(s, picard_map(s));
  double after = step_metric(cand, picard_map(cand));
  if (!(after < before) || !is_pd(cand.Sigma)) return false;
  for (const Mat& K : cand.K)
    if (!is_pd(K)) return false;
  cand.newton_steps = s.newton_steps + r.iterations;
  s = std::move(cand);
  return r.converged;
}

EoSState Solver::solve_at(EoSState init, std::vector<double>* trace) {
  EoSState s = std::move(init);
  s.iterations = 0;
  s.newton_steps = 0;
  s.psd_clips = 0;
  s.converged = false;
  refresh(s);
  // Sigma = K = 0 is a spurious fixed point of the clipped map (A blows up as Q -> 0).
  const EoSState ref = gp_state();
  auto collapsed = [&](const EoSState& x) {
    if (!(x.Sigma.trace() > 1e-8 * ref.Sigma.trace())) return true;
    for (std::size_t l = 0; l < x.K.size(); ++l)
      if (!(x.K[l].trace() > 1e-8 * ref.K[l].trace())) return true;
    return false;
  };
  std::vector<double> hist;
  int last_nk = -opts_.stall_window;
  double metric = kInf;
  for (int it = 0; it < opts_.max_iters; ++it) {
    metric = picard_step(s, opts_.damping);
    ++s.iterations;
    hist.push_back(metric);
    if (trace) trace->push_back(metric);
    if (collapsed(s)) break;
    if (metric <= opts_.residual_tol) {
      s.converged = true;
      break;
    }
    const int w = opts_.stall_window;
    const int k = static_cast<int>(hist.size());
    if (opts_.newton_krylov && k >= w && k - last_nk >= w && hist[k - 1] > 0.5 * hist[k - w]) {
      last_nk = k;
      if (newton_krylov(s, trace)) {
        metric = step_metric(s, picard_map(s));
        if (collapsed(s)) break;
        s.converged = metric <= opts_.residual_tol;
        if (s.converged) break;
      }
    }
  }
  s.step_residual = metric;
  s.inverse_residual = relative_inverse_residual(s);
  return s;
}

SolveResult Solver::solve(const std::function<void(const StepRecord&, const EoSState&)>& on_step) {
  SolveResult out;
  std::vector<double> schedule = opts_.schedule;
  if (schedule.empty()) schedule.push_back(kInf);  // placeholder: keep spec widths
  const bool keep_widths = opts_.schedule.empty();
  std::optional<EoSState> prev;
  for (double w : schedule) {
    if (!keep_widths) set_widths(w);
    EoSState init = prev ? *prev : gp_state();
    EoSState s = solve_at(std::move(init), &out.trace);
    StepRecord r;
    r.width = spec_.widths.back();
    r.iterations = s.iterations;
    r.newton_steps = s.newton_steps;
    r.step_residual = s.step_residual;
    r.inverse_residual = s.inverse_residual;
    r.converged = s.converged;
    r.alpha = s.posterior.alpha;
    r.chi = s.chi;
    r.train_mse = s.posterior.train_mse;
    r.top_sigma = top_eigenvalue(s.Sigma);
    out.steps.push_back(r);
    if (on_step) on_step(r, s);
    prev = s;
  }
  out.state = std::move(*prev);
  return out;
}

Vec Solver::residual(const EoSState& s) const {
  const int L = spec_.depth;
  const Coupling cp = coupling();
  std::vector<Mat> blocks;
  for (int layer = 1; layer <= L - 1; ++layer) {
    const Mat& A_up = layer == L - 1 ? s.A.back() : s.A[layer - 1];
    double c = layer == L - 1 ? cp.out : cp.hidden[layer];
    const double s2_next = layer + 1 == L ? spec_.readout_variance() : spec_.variances[layer];
    Mat x = layer == 1 ? s.Sigma : s.K[layer - 2];
    Mat rhs;
    if (layer == 1) {
      rhs = (spec_.patch_dim / spec_.variances[0]) * Mat::Identity(x.rows(), x.cols());
      if (c != 0.0) rhs += c * sigma_adjoint(s.Sigma, A_up, s2_next);
    } else {
      rhs = SpdFactor(s.Q[layer - 2], 0.0).inverse();
      if (c != 0.0) {
        Stride g{static_cast<int>(X_.rows()), spec_.pixels(layer), spec_.stride(layer + 1)};
        rhs += c * strided_adjoint(spec_.activations[layer - 1], x, s2_next, g, A_up);
      }
    }
    blocks.push_back(SpdFactor(x, 0.0).inverse() - rhs);
  }
  std::size_t total = 0;
  for (const Mat& b : blocks) total += packed_size(b.rows());
  Vec r(static_cast<Eigen::Index>(total));
  std::size_t off = 0;
  for (const Mat& b : blocks) {
    pack_symmetric(b, r.data() + off);
    off += packed_size(b.rows());
  }
  return r;
}

double Solver::relative_inverse_residual(const EoSState& s) const {
  Vec r = residual(s);
  double worst = 0.0;
  std::size_t off = 0;
  auto block = [&](const Mat& x) {
    std::size_t len = packed_size(x.rows());
    double inv_norm = SpdFactor(x, 0.0).inverse().norm();
    worst = std::max(worst, r.segment(static_cast<Eigen::Index>(off), static_cast<Eigen::Index>(len)).norm() / inv_norm);
    off += len;
  };
  block(s.Sigma);
  for (const Mat& K : s.K) block(K);
  return worst;
}

Vec fcn_residual(const EoSState& s, const NetworkSpec& spec, const data::Dataset& data) {
  if (spec.arch != Architecture::Fcn) throw ConfigError("fcn_residual: network is not an FCN");
  Solver solver(spec, data);
  EoSState t = s;
  solver.refresh(t);
  return solver.residual(t);
}

Vec cnn_residual(const EoSState& s, const NetworkSpec& spec, const data::Dataset& data) {
  if (spec.arch != Architecture::Cnn) throw ConfigError("cnn_residual: network is not a CNN");
  Solver solver(spec, data);
  EoSState t = s;
  solver.refresh(t);
  return solver.residual(t);
}

// ---------------------------------------------------------------- JSON

nlohmann::json to_json(const NetworkSpec& s) {
  nlohmann::json widths = nlohmann::json::array(), acts = nlohmann::json::array();
  for (double w : s.widths) widths.push_back(io::number_or_inf(w));
  for (auto a : s.activations) acts.push_back(kernel::to_string(a));
  return {{"arch", arch_name(s.arch)},
          {"depth", s.depth},
          {"widths", widths},
          {"variances", s.variances},
          {"activations", acts},
          {"patches", s.patches},
          {"patch_dim", s.patch_dim},
          {"strides", s.strides},
          {"noise", s.noise},
          {"scaling", s.scaling == Scaling::MeanField ? "mean_field" : "standard"},
          {"include_output_fluctuation", s.include_output_fluctuation}};
}

NetworkSpec spec_from_json(const nlohmann::json& j) {
  io::reject_unknown_keys(j, {"arch", "depth", "widths", "width", "variances", "activations", "activation", "patches",
                              "patch_dim", "d", "strides", "noise", "scaling", "include_output_fluctuation"},
                          "model");
  NetworkSpec s;
  std::string arch = j.value("arch", std::string("fcn"));
  if (arch == "fcn")
    s.arch = Architecture::Fcn;
  else if (arch == "cnn")
    s.arch = Architecture::Cnn;
  else
    throw ConfigError("model.arch: expected 'fcn' or 'cnn', got '" + arch + "'");
  s.depth = j.at("depth").get<int>();
  if (s.depth < 2) throw ConfigError("model.depth must be >= 2");
  if (j.contains("widths")) {
    for (const auto& w : j["widths"]) s.widths.push_back(io::number_or_inf(w));
  } else if (j.contains("width")) {
    s.widths.assign(s.depth - 1, io::number_or_inf(j["width"]));
  } else {
    throw ConfigError("model: missing 'widths' (or 'width')");
  }
  s.variances = j.at("variances").get<std::vector<double>>();
  if (j.contains("activations")) {
    for (const auto& a : j["activations"]) s.activations.push_back(kernel::activation_from_string(a.get<std::string>()));
  } else {
    s.activations.assign(s.depth - 1, kernel::activation_from_string(j.value("activation", std::string("erf"))));
  }
  if (s.arch == Architecture::Fcn) {
    s.patches = 1;
    s.patch_dim = j.contains("d") ? j["d"].get<int>() : j.at("patch_dim").get<int>();
    s.strides.assign(s.depth - 2, 1);
  } else {
    s.patches = j.at("patches").get<int>();
    s.patch_dim = j.at("patch_dim").get<int>();
    s.strides = j.value("strides", std::vector<int>(s.depth - 2, 1));
  }
  s.noise = j.at("noise").get<double>();
  std::string scaling = j.value("scaling", std::string("standard"));
  if (scaling == "standard")
    s.scaling = Scaling::Standard;
  else if (scaling == "mean_field")
    s.scaling = Scaling::MeanField;
  else
    throw ConfigError("model.scaling: expected 'standard' or 'mean_field'");
  s.include_output_fluctuation = j.value("include_output_fluctuation", true);
  s.validate();
  return s;
}

nlohmann::json to_json(const SolverOptions& o) {
  nlohmann::json sched = nlohmann::json::array();
  for (double w : o.schedule) sched.push_back(io::number_or_inf(w));
  return {{"damping", o.damping},
          {"max_iters", o.max_iters},
          {"residual_tol", o.residual_tol},
          {"schedule", sched},
          {"order", o.order == UpdateOrder::Jacobi ? "jacobi" : "gauss_seidel"},
          {"newton_krylov", o.newton_krylov},
          {"krylov_dim", o.krylov_dim},
          {"fd_step", o.fd_step},
          {"newton_max_iters", o.newton_max_iters},
          {"stall_window", o.stall_window},
          {"psd_floor", o.psd_floor}};
}

SolverOptions options_from_json(const nlohmann::json& j) {
  io::reject_unknown_keys(j, {"damping", "max_iters", "residual_tol", "schedule", "order", "newton_krylov", "krylov_dim",
                              "fd_step", "newton_max_iters", "stall_window", "psd_floor"},
                          "solver");
  SolverOptions o;
  o.damping = j.value("damping", o.damping);
  o.max_iters = j.value("max_iters", o.max_iters);
  o.residual_tol = j.value("residual_tol", o.residual_tol);
  if (j.contains("schedule"))
    for (const auto& w : j["schedule"]) o.schedule.push_back(io::number_or_inf(w));
  std::string order = j.value("order", std::string("gauss_seidel"));
  if (order == "gauss_seidel")
    o.order = UpdateOrder::GaussSeidel;
  else if (order == "jacobi")
    o.order = UpdateOrder::Jacobi;
  else
    throw ConfigError("solver.order: expected 'gauss_seidel' or 'jacobi'");
  o.newton_krylov = j.value("newton_krylov", o.newton_krylov);
  o.krylov_dim = j.value("krylov_dim", o.krylov_dim);
  o.fd_step = j.value("fd_step", o.fd_step);
  o.newton_max_iters = j.value("newton_max_iters", o.newton_max_iters);
  o.stall_window = j.value("stall_window", o.stall_window);
  o.psd_floor = j.value("psd_floor", o.psd_floor);
  o.validate();
  return o;
}

nlohmann::json to_json(const StepRecord& r) {
  return {{"width", io::number_or_inf(r.width)},
          {"iterations", r.iterations},
          {"newton_steps", r.newton_steps},
          {"step_residual", r.step_residual},
          {"inverse_residual", r.inverse_residual},
          {"converged", r.converged},
          {"alpha", r.alpha},
          {"chi", r.chi},
          {"train_mse", r.train_mse},
          {"top_sigma", r.top_sigma}};
}

}  // namespace eoskit::eos
