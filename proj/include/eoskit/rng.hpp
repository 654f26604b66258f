#pragma once

#include <array>
#include <cstdint>

namespace eoskit::data {

// Philox4x32-10 counter-based generator (Salmon et al., SC'11).
// The 64-bit seed is the key; a 64-bit stream id and a 64-bit block
// counter form the 128-bit counter. Integer output is bit-identical on
// every platform. Normal deviates use Box-Muller on top of libm log/sin/cos.
class Philox4x32 {
 public:
  using Block = std::array<std::uint32_t, 4>;
  static Block generate(Block counter, std::array<std::uint32_t, 2> key);
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double normal();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

 private:
  void refill();

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t block_ = 0;
  Philox4x32::Block buffer_{};
  int used_ = 4;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace eoskit::data
