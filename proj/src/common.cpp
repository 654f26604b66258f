#include "eoskit/common.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace eoskit {

unsigned thread_cap() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("EOSKIT_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<unsigned>(std::min<long>(v, hw));
  }
  return hw;
}

void parallel_for(std::size_t count, const std::function<void(std::size_t)>& body) {
  unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_cap(), count));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::size_t packed_size(Eigen::Index dim) {
  return static_cast<std::size_t>(dim) * static_cast<std::size_t>(dim + 1) / 2;
}

void pack_symmetric(const Mat& m, double* out) {
  const double r2 = std::sqrt(2.0);
  std::size_t k = 0;
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i <= j; ++i) out[k++] = (i == j) ? m(i, j) : r2 * m(i, j);
}

Mat unpack_symmetric(const double* in, Eigen::Index dim) {
  const double r2 = std::sqrt(2.0);
  Mat m(dim, dim);
  std::size_t k = 0;
  for (Eigen::Index j = 0; j < dim; ++j)
    for (Eigen::Index i = 0; i <= j; ++i) {
      double v = in[k++];
      if (i != j) v /= r2;
      m(i, j) = v;
      m(j, i) = v;
    }
  return m;
}

Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

}  // namespace eoskit
