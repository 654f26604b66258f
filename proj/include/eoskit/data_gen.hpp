#pragma once

#include "eoskit/common.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace eoskit::data {

// Inputs are stored flat: row mu of X is the concatenation of `patches`
// contiguous blocks of length `patch_dim` (patch p = columns [p*patch_dim, (p+1)*patch_dim)).
// Fully connected data has patches = 1, patch_dim = d.
struct Dataset {
  Mat X;
  Vec y;
  int patches = 1;
  int patch_dim = 0;
  std::string generator;
  std::uint64_t seed = 0;

  int n() const { return static_cast<int>(X.rows()); }
  int d() const { return static_cast<int>(X.cols()); }
  // Patch p of point mu as a row vector view.
  auto patch(int mu, int p) const { return X.row(mu).segment(static_cast<Eigen::Index>(p) * patch_dim, patch_dim); }
};

enum class TeacherKind { LinearCnn, FcnTeacher, CnnTeacher };

struct TeacherSpec {
  TeacherKind kind = TeacherKind::LinearCnn;
  std::uint64_t seed = 0;
  // LinearCnn: a_star has N entries, w_star has S entries.
  Vec a_star;
  Vec w_star;
  // Network teachers (single neuron / channel per layer, erf hidden units):
  // first-layer filter, per-layer mixing vectors (length = stride of that layer;
  // 1 for FCN), readout over the final pixels.
  Vec first;
  std::vector<Vec> hidden;
  Vec readout;
  std::vector<int> strides;  // hidden conv strides, CnnTeacher only
};

// i.i.d. standard normal n x d matrix.
Mat gaussian_inputs(int n, int d, std::uint64_t seed);

Dataset gaussian_dataset(int n, int patches, int patch_dim, std::uint64_t seed);

// a*_i ~ N(0, 1/N), w*_s ~ N(0, 1/S).
TeacherSpec linear_cnn_teacher(int N, int S, std::uint64_t seed);
// Width-1 erf FCN with `depth` weight layers; weights drawn with variance
// variances[l]/fan_in (fan_in = d for the first layer, 1 above).
TeacherSpec fcn_teacher(int d, int depth, const std::vector<double>& variances, std::uint64_t seed);
// Single-channel erf CNN. strides lists the hidden-layer strides; the readout
// pixel count follows from patches / prod(strides).
TeacherSpec cnn_teacher(int patches, int patch_dim, const std::vector<int>& strides,
                        const std::vector<double>& variances, std::uint64_t seed);

Vec make_target(const Dataset& data, const TeacherSpec& teacher);

// FNV-1a 64-bit digest of X (row-major) followed by y, as 16 hex digits.
std::string digest(const Mat& X, const Vec& y);
std::string teacher_digest(const TeacherSpec& teacher);
std::string text_digest(const std::string& text);

// Binary matrix file: one JSON header line, then little-endian f64, row-major.
void write_dataset(const std::filesystem::path& stem, const Dataset& data, const TeacherSpec* teacher = nullptr);
Dataset read_dataset(const std::filesystem::path& stem);

}  // namespace eoskit::data
