#pragma once

#include "eoskit/common.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace eoskit::kernel {

// Flat index is point-major: flat(mu, j) = mu * pixels + j.
struct IndexSpace {
  int n = 0;
  int pixels = 1;

  int total() const { return n * pixels; }
  int flat(int mu, int j) const { return mu * pixels + j; }
  bool operator==(const IndexSpace&) const = default;
};

struct KernelMatrix {
  IndexSpace space;
  Mat values;  // exactly symmetric
  double jitter = 0.0;

  // Symmetrizes `m` on construction; throws on shape mismatch.
  static KernelMatrix make(IndexSpace space, const Mat& m, double jitter = 0.0);
  int size() const { return space.total(); }
};

struct WeightCovariance {
  Mat values;

  static WeightCovariance isotropic(int dim, double variance);
  static WeightCovariance make(const Mat& m);
  int dim() const { return static_cast<int>(values.rows()); }
};

enum class ActivationKind { Erf, ReLU, Linear };

std::string to_string(ActivationKind k);
ActivationKind activation_from_string(const std::string& s);

struct PatchShape {
  int pixels = 1;
  int patch_dim = 1;
};

// FCN: K = X Sigma X^T over n points. CNN: K[(mu,i),(nu,j)] = x_{mu,i}^T Sigma x_{nu,j}.
KernelMatrix input_kernel(const Mat& X, const WeightCovariance& sigma, std::optional<PatchShape> patch = std::nullopt);

// Q = s2 * (2/pi) * asin(2K_ab / sqrt((1+2K_aa)(1+2K_bb))).
KernelMatrix erf_post_kernel(const KernelMatrix& K, double s2);
// Arc-cosine kernel of degree 1 for centered Gaussians. `degenerate_pairs`
// (optional) receives the number of pairs with a zero diagonal entry.
KernelMatrix relu_post_kernel(const KernelMatrix& K, double s2, int* degenerate_pairs = nullptr);
KernelMatrix linear_post_kernel(const KernelMatrix& K, double s2);
KernelMatrix post_kernel(ActivationKind kind, const KernelMatrix& K, double s2);

// M[mu,nu] = sum_{ab} A[a,b] dQ[a,b]/dK[mu,nu], entries of K treated as
// independent variables (diagonal entries pick up terms from every Q[a,b]
// sharing that index). A must be symmetric.
Mat erf_post_kernel_adjoint(const KernelMatrix& K, double s2, const Mat& A);
Mat post_kernel_adjoint(ActivationKind kind, const KernelMatrix& K, double s2, const Mat& A);

// Matrix-level versions used on hot paths (no KernelMatrix wrapping).
Mat erf_map(const Mat& K, double s2);
Mat erf_map_adjoint(const Mat& K, double s2, const Mat& A);
Mat activation_map(ActivationKind kind, const Mat& K, double s2);
Mat activation_map_adjoint(ActivationKind kind, const Mat& K, double s2, const Mat& A);

// Q_f[mu,nu] = (s2_a / N) * sum_j Q[(mu,j),(nu,j)] for an already-activated
// per-pixel kernel Q carrying unit output variance.
KernelMatrix readout_average(const KernelMatrix& Q, double sa2);

// Strided convolution geometry between consecutive layers: upper pixel j
// gathers lower pixels i + j*stride, i in [0, stride).
struct Stride {
  int n = 0;
  int lower_pixels = 1;
  int stride = 1;
  int upper_pixels() const { return lower_pixels / stride; }
  int block_size() const { return n * upper_pixels(); }
};

// block_i[(mu,j),(nu,j')] = lower[(mu, i+j*stride), (nu, i+j'*stride)].
Mat strided_block(const Mat& lower, const Stride& g, int i);
void scatter_block_add(Mat& lower, const Stride& g, int i, const Mat& block);
// Rows x_{mu, i + j*stride} of the flat input X (point-major over (mu, j)).
Mat patch_rows(const Mat& X, int patch_dim, const Stride& g, int i);
// Upper kernel (s2/stride) * sum_i phi-map(block_i).
Mat strided_forward(ActivationKind kind, const std::vector<Mat>& blocks, double s2);

double default_jitter(const Mat& K);

// Cholesky of (K + eps I) with escalation eps, 10 eps, 100 eps.
class SpdFactor {
 public:
  SpdFactor(const Mat& K, double eps);
  Mat solve(const Mat& B) const;
  Vec solve(const Vec& b) const;
  Mat inverse() const;
  double log_det() const;
  double jitter_used() const { return jitter_; }

 private:
  Eigen::LLT<Mat> llt_;
  double jitter_ = 0.0;
};

// (K + eps I)^{-1}; throws NumericalError with a condition estimate when
// factorization fails at eps, 10 eps and 100 eps.
Mat regularized_inverse(const KernelMatrix& K, double eps);
Mat regularized_inverse(const Mat& K, double eps);

void write_kernel_file(const std::filesystem::path& path, const KernelMatrix& K);
KernelMatrix read_kernel_file(const std::filesystem::path& path);

}  // namespace eoskit::kernel
