#include "eoskit/common.hpp"

#include "helpers.hpp"

#include <atomic>
#include <cstdlib>
#include <vector>

using namespace eoskit;

TEST_CASE("parallel_for visits every index exactly once") {
  std::vector<std::atomic<int>> hits(1000);
  parallel_for(hits.size(), [&](std::size_t i) { hits[i]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
}

TEST_CASE("parallel_for propagates exceptions") {
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 7) throw NumericalError("boom");
                  }),
                  NumericalError);
}

TEST_CASE("EOSKIT_THREADS caps the worker count") {
  setenv("EOSKIT_THREADS", "1", 1);
  CHECK(thread_cap() == 1u);
  unsetenv("EOSKIT_THREADS");
  CHECK(thread_cap() >= 1u);
}

TEST_CASE("symmetric packing preserves the Frobenius norm and round-trips") {
  Mat m = testing::random_symmetric(7, 3);
  std::vector<double> buf(packed_size(7));
  pack_symmetric(m, buf.data());
  double n2 = 0;
  for (double v : buf) n2 += v * v;
  CHECK(std::sqrt(n2) == doctest::Approx(m.norm()).epsilon(1e-13));
  CHECK((unpack_symmetric(buf.data(), 7) - m).norm() < 1e-13);
}

TEST_CASE("symmetrize returns the symmetric part") {
  Mat a = testing::random_matrix(5, 5, 1);
  Mat s = symmetrize(a);
  CHECK((s - s.transpose()).norm() == 0.0);
  CHECK((s - 0.5 * (a + a.transpose())).norm() < 1e-15);
}
