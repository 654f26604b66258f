#include "eoskit/kernel_core.hpp"

#include "eoskit/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

namespace eoskit::kernel {

namespace {

constexpr double kAsinTol = 1e-12;
constexpr double kTwoOverPi = 2.0 / std::numbers::pi;

double checked_ratio(double z) {
  double a = std::abs(z);
  if (a <= 1.0) return z;
  if (a - 1.0 <= kAsinTol) return z > 0 ? 1.0 : -1.0;
  std::ostringstream msg;
  msg << "erf kernel: arcsine argument " << z << " outside [-1,1]; input kernel is not PSD";
  throw NumericalError(msg.str());
}

Vec erf_diag_scale(const Mat& K) {
  Vec u(K.rows());
  for (Eigen::Index a = 0; a < K.rows(); ++a) {
    u(a) = 1.0 + 2.0 * K(a, a);
    if (!(u(a) > 0.0)) throw NumericalError("erf kernel: 1 + 2K[a,a] must be positive");
  }
  return u;
}

void require_square(const Mat& m, const char* what) {
  if (m.rows() != m.cols()) throw ConfigError(std::string(what) + ": matrix must be square");
}

}  // namespace

KernelMatrix KernelMatrix::make(IndexSpace space, const Mat& m, double jitter) {
  if (space.n < 1 || space.pixels < 1) throw ConfigError("IndexSpace must have n >= 1 and pixels >= 1");
  if (m.rows() != space.total() || m.cols() != space.total())
    throw ConfigError("KernelMatrix: values shape does not match index space");
  if (!m.allFinite()) throw ConfigError("KernelMatrix: non-finite entries");
  return {space, symmetrize(m), jitter};
}

WeightCovariance WeightCovariance::isotropic(int dim, double variance) {
  if (dim < 1) throw ConfigError("WeightCovariance: dim must be >= 1");
  return {variance * Mat::Identity(dim, dim)};
}

WeightCovariance WeightCovariance::make(const Mat& m) {
  require_square(m, "WeightCovariance");
  if (m.rows() < 1) throw ConfigError("WeightCovariance: dim must be >= 1");
  return {symmetrize(m)};
}

std::string to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Erf: return "erf";
    case ActivationKind::ReLU: return "relu";
    case ActivationKind::Linear: return "linear";
  }
  return "unknown";
}

ActivationKind activation_from_string(const std::string& s) {
  if (s == "erf") return ActivationKind::Erf;
  if (s == "relu") return ActivationKind::ReLU;
  if (s == "linear") return ActivationKind::Linear;
  throw ConfigError("unknown activation '" + s + "'");
}

KernelMatrix input_kernel(const Mat& X, const WeightCovariance& sigma, std::optional<PatchShape> patch) {
  if (!X.allFinite()) throw ConfigError("input_kernel: non-finite input");
  const int n = static_cast<int>(X.rows());
  if (!patch) {
    if (X.cols() != sigma.dim()) throw ConfigError("input_kernel: Sigma dim must equal d");
    return KernelMatrix::make({n, 1}, X * sigma.values * X.transpose());
  }
  if (patch->patch_dim != sigma.dim() || X.cols() != static_cast<Eigen::Index>(patch->pixels) * patch->patch_dim)
    throw ConfigError("input_kernel: expected d = N*S with Sigma of dim S");
  Mat P = patch_rows(X, patch->patch_dim, {n, patch->pixels, 1}, 0);
  return KernelMatrix::make({n, patch->pixels}, P * sigma.values * P.transpose());
}

Mat erf_map(const Mat& K, double s2) {
  require_square(K, "erf kernel");
  const Eigen::Index m = K.rows();
  Vec u = erf_diag_scale(K);
  Vec inv_sqrt = u.cwiseSqrt().cwiseInverse();
  Mat Q(m, m);
  auto column = [&](std::size_t jj) {
    Eigen::Index b = static_cast<Eigen::Index>(jj);
    for (Eigen::Index a = 0; a <= b; ++a) {
      double z = checked_ratio(2.0 * K(a, b) * inv_sqrt(a) * inv_sqrt(b));
      double q = s2 * kTwoOverPi * std::asin(z);
      Q(a, b) = q;
      Q(b, a) = q;
    }
  };
  if (m >= 512)
    parallel_for(static_cast<std::size_t>(m), column);
  else
    for (Eigen::Index b = 0; b < m; ++b) column(static_cast<std::size_t>(b));
  return Q;
}

Mat erf_map_adjoint(const Mat& K, double s2, const Mat& A) {
  require_square(K, "erf adjoint");
  if (A.rows() != K.rows() || A.cols() != K.cols()) throw ConfigError("erf adjoint: A and K index spaces differ");
  const Eigen::Index m = K.rows();
  Vec u = erf_diag_scale(K);
  Vec inv_sqrt = u.cwiseSqrt().cwiseInverse();
  const double c = s2 * kTwoOverPi;
  Mat M = Mat::Zero(m, m);
  Vec diag = Vec::Zero(m);
  for (Eigen::Index b = 0; b < m; ++b) {
    for (Eigen::Index a = 0; a < b; ++a) {
      double z = checked_ratio(2.0 * K(a, b) * inv_sqrt(a) * inv_sqrt(b));
      double r = 1.0 / std::sqrt(std::max(1.0 - z * z, 1e-300));
      double g = c * r;  // dQ/dz
      double off = A(a, b) * g * 2.0 * inv_sqrt(a) * inv_sqrt(b);
      M(a, b) = off;
      M(b, a) = off;
      // dz/dK_aa = -z/u_a, and both (a,b) and (b,a) entries of A contribute.
      double w = 2.0 * A(a, b) * g * (-z);
      diag(a) += w / u(a);
      diag(b) += w / u(b);
    }
    double z = 2.0 * K(b, b) / u(b);
    double r = 1.0 / std::sqrt(1.0 - z * z);
    diag(b) += A(b, b) * c * r * 2.0 / (u(b) * u(b));
  }
  M.diagonal() = diag;
  return M;
}

Mat activation_map(ActivationKind kind, const Mat& K, double s2) {
  switch (kind) {
    case ActivationKind::Erf: return erf_map(K, s2);
    case ActivationKind::Linear: return s2 * K;
    case ActivationKind::ReLU: {
      KernelMatrix km{{static_cast<int>(K.rows()), 1}, K, 0.0};
      return relu_post_kernel(km, s2).values;
    }
  }
  throw ConfigError("unknown activation");
}

Mat activation_map_adjoint(ActivationKind kind, const Mat& K, double s2, const Mat& A) {
  switch (kind) {
    case ActivationKind::Erf: return erf_map_adjoint(K, s2, A);
    case ActivationKind::Linear: return s2 * A;
    case ActivationKind::ReLU: throw ConfigError("ReLU adjoint is not supported (non-centered mean tracking is out of scope)");
  }
  throw ConfigError("unknown activation");
}

KernelMatrix erf_post_kernel(const KernelMatrix& K, double s2) {
  return KernelMatrix::make(K.space, erf_map(K.values, s2), K.jitter);
}

KernelMatrix relu_post_kernel(const KernelMatrix& K, double s2, int* degenerate_pairs) {
  const Eigen::Index m = K.values.rows();
  Mat Q(m, m);
  int flagged = 0;
  for (Eigen::Index b = 0; b < m; ++b)
    for (Eigen::Index a = 0; a <= b; ++a) {
      double kaa = K.values(a, a), kbb = K.values(b, b);
      double q = 0.0;
      if (kaa > 0.0 && kbb > 0.0) {
        double norm = std::sqrt(kaa * kbb);
        double c = std::clamp(K.values(a, b) / norm, -1.0, 1.0);
        double theta = std::acos(c);
        q = s2 * norm / (2.0 * std::numbers::pi) * (std::sin(theta) + (std::numbers::pi - theta) * c);
      } else {
        ++flagged;
      }
      Q(a, b) = q;
      Q(b, a) = q;
    }
  if (degenerate_pairs) *degenerate_pairs = flagged;
  return KernelMatrix::make(K.space, Q, K.jitter);
}

KernelMatrix linear_post_kernel(const KernelMatrix& K, double s2) {
  return KernelMatrix::make(K.space, s2 * K.values, K.jitter);
}

KernelMatrix post_kernel(ActivationKind kind, const KernelMatrix& K, double s2) {
  switch (kind) {
    case ActivationKind::Erf: return erf_post_kernel(K, s2);
    case ActivationKind::ReLU: return relu_post_kernel(K, s2);
    case ActivationKind::Linear: return linear_post_kernel(K, s2);
  }
  throw ConfigError("unknown activation");
}

Mat erf_post_kernel_adjoint(const KernelMatrix& K, double s2, const Mat& A) {
  if (A.rows() != K.size() || A.cols() != K.size()) throw ConfigError("erf adjoint: index-space mismatch");
  return erf_map_adjoint(K.values, s2, A);
}

Mat post_kernel_adjoint(ActivationKind kind, const KernelMatrix& K, double s2, const Mat& A) {
  if (A.rows() != K.size() || A.cols() != K.size()) throw ConfigError("adjoint: index-space mismatch");
  return activation_map_adjoint(kind, K.values, s2, A);
}

KernelMatrix readout_average(const KernelMatrix& Q, double sa2) {
  const int n = Q.space.n, N = Q.space.pixels;
  Mat out = Mat::Zero(n, n);
  for (int j = 0; j < N; ++j)
    for (int nu = 0; nu < n; ++nu)
      for (int mu = 0; mu < n; ++mu) out(mu, nu) += Q.values(Q.space.flat(mu, j), Q.space.flat(nu, j));
  out *= sa2 / N;
  return KernelMatrix::make({n, 1}, out, Q.jitter);
}

Mat strided_block(const Mat& lower, const Stride& g, int i) {
  const int U = g.upper_pixels(), L = g.lower_pixels;
  Mat B(g.block_size(), g.block_size());
  for (int nu = 0; nu < g.n; ++nu)
    for (int jp = 0; jp < U; ++jp) {
      Eigen::Index col = static_cast<Eigen::Index>(nu) * L + i + jp * g.stride;
      for (int mu = 0; mu < g.n; ++mu)
        for (int j = 0; j < U; ++j)
          B(mu * U + j, nu * U + jp) = lower(static_cast<Eigen::Index>(mu) * L + i + j * g.stride, col);
    }
  return B;
}

void scatter_block_add(Mat& lower, const Stride& g, int i, const Mat& block) {
  const int U = g.upper_pixels(), L = g.lower_pixels;
  for (int nu = 0; nu < g.n; ++nu)
    for (int jp = 0; jp < U; ++jp) {
      Eigen::Index col = static_cast<Eigen::Index>(nu) * L + i + jp * g.stride;
      for (int mu = 0; mu < g.n; ++mu)
        for (int j = 0; j < U; ++j)
          lower(static_cast<Eigen::Index>(mu) * L + i + j * g.stride, col) += block(mu * U + j, nu * U + jp);
    }
}

Mat patch_rows(const Mat& X, int patch_dim, const Stride& g, int i) {
  const int U = g.upper_pixels();
  Mat P(g.block_size(), patch_dim);
  for (int mu = 0; mu < g.n; ++mu)
    for (int j = 0; j < U; ++j)
      P.row(mu * U + j) = X.row(mu).segment(static_cast<Eigen::Index>(i + j * g.stride) * patch_dim, patch_dim);
  return P;
}

Mat strided_forward(ActivationKind kind, const std::vector<Mat>& blocks, double s2) {
  if (blocks.empty()) throw ConfigError("strided_forward: no blocks");
  const double scale = s2 / static_cast<double>(blocks.size());
  Mat Q = activation_map(kind, blocks[0], scale);
  for (std::size_t i = 1; i < blocks.size(); ++i) Q += activation_map(kind, blocks[i], scale);
  return Q;
}

double default_jitter(const Mat& K) {
  double mean_diag = K.rows() ? K.diagonal().mean() : 0.0;
  return 1e-10 * (mean_diag > 0.0 ? mean_diag : 1.0);
}

SpdFactor::SpdFactor(const Mat& K, double eps) {
  require_square(K, "regularized_inverse");
  if (!K.allFinite()) throw NumericalError("regularized_inverse: non-finite matrix");
  const Eigen::Index m = K.rows();
  double e = eps;
  for (int attempt = 0; attempt < 3; ++attempt, e *= 10.0) {
    Mat shifted = K;
    shifted.diagonal().array() += e;
    llt_.compute(shifted);
    if (llt_.info() == Eigen::Success) {
      Vec d = llt_.matrixLLT().diagonal();
      if (d.allFinite() && (d.array() > 0.0).all()) {
        jitter_ = e;
        return;
      }
    }
    if (eps == 0.0) e = default_jitter(K) / 10.0;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(K), Eigen::EigenvaluesOnly);
  std::ostringstream msg;
  msg << "regularized_inverse: factorization failed after jitter escalation (m=" << m
      << ", eigenvalue range [" << es.eigenvalues().minCoeff() << ", " << es.eigenvalues().maxCoeff()
      << "], condition estimate " << es.eigenvalues().maxCoeff() / std::abs(es.eigenvalues().minCoeff()) << ")";
  throw NumericalError(msg.str());
}

Mat SpdFactor::solve(const Mat& B) const { return llt_.solve(B); }
Vec SpdFactor::solve(const Vec& b) const { return llt_.solve(b); }

Mat SpdFactor::inverse() const {
  Mat inv = llt_.solve(Mat::Identity(llt_.rows(), llt_.cols()));
  return symmetrize(inv);
}

double SpdFactor::log_det() const { return 2.0 * llt_.matrixLLT().diagonal().array().log().sum(); }

Mat regularized_inverse(const Mat& K, double eps) { return SpdFactor(K, eps).inverse(); }
Mat regularized_inverse(const KernelMatrix& K, double eps) { return regularized_inverse(K.values, eps); }

void write_kernel_file(const std::filesystem::path& path, const KernelMatrix& K) {
  io::json header = {{"n", K.space.n}, {"pixels", K.space.pixels}, {"dtype", "f64"}, {"layout", "row-major point-major"}};
  io::write_matrix(path, header, K.values);
}

KernelMatrix read_kernel_file(const std::filesystem::path& path) {
  io::json header;
  Mat m = io::read_matrix(path, &header);
  if (header.value("layout", std::string()) != "row-major point-major")
    throw ConfigError("kernel file " + path.string() + " has unexpected layout");
  return KernelMatrix::make({header.at("n").get<int>(), header.at("pixels").get<int>()}, m);
}

}  // namespace eoskit::kernel
