#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>

namespace eoskit {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Invalid input shapes, configs or options. Maps to CLI exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Factorization failures, divergence, non-convergence. Maps to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Theory/oracle comparison outside tolerance. Maps to exit code 4.
class ComparisonError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thread cap from EOSKIT_THREADS (>=1); defaults to hardware concurrency.
unsigned thread_cap();

// Runs body(i) for i in [0, count) on up to thread_cap() threads.
// Each index is processed exactly once; callers write to disjoint slots.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body);

// Upper-triangle packing with sqrt(2) weights on off-diagonals so that the
// Euclidean norm of the packed vector equals the Frobenius norm.
std::size_t packed_size(Eigen::Index dim);
void pack_symmetric(const Mat& m, double* out);
Mat unpack_symmetric(const double* in, Eigen::Index dim);

Mat symmetrize(const Mat& m);

}  // namespace eoskit
