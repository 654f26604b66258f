#pragma once

#include "eoskit/common.hpp"
#include "eoskit/rng.hpp"

#include <doctest.h>

namespace eoskit::testing {

inline Mat random_matrix(int r, int c, std::uint64_t seed) {
  data::Rng rng(seed, 77);
  Mat m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = rng.normal();
  return m;
}

// Well-conditioned random SPD matrix: B B^T / dim + shift I.
inline Mat random_spd(int dim, std::uint64_t seed, double shift = 0.2) {
  Mat b = random_matrix(dim, dim, seed);
  Mat m = b * b.transpose() / dim;
  m.diagonal().array() += shift;
  return symmetrize(m);
}

inline Mat random_symmetric(int dim, std::uint64_t seed) {
  Mat b = random_matrix(dim, dim, seed);
  return symmetrize(b + b.transpose());
}

inline double rel_err(const Mat& a, const Mat& b) { return (a - b).norm() / std::max(b.norm(), 1e-300); }

}  // namespace eoskit::testing
