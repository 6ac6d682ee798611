#pragma once

#include <array>
#include <cstdint>

namespace hmf {

// Philox4x32-10 block cipher (counter-based generator).
std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> counter,
                                   std::array<uint32_t, 2> key);

// Reserved stream tags. Distinct tags give statistically independent streams
// for the same (seed, type, particle); never mix normal() and uniform() calls
// on one tag.
enum : uint32_t {
  kStreamBrownian = 0,
  kStreamInitial = 1,
  kStreamAtlas = 2,
  kStreamBootstrap = 3,
  kStreamRival = 4,
};

// Gaussian / uniform draws addressed by (seed, type, particle, stream, index).
// Stateless: any index can be read without generating its predecessors, so
// particle counts and horizons can grow without reshuffling existing draws.
class RandomStream {
 public:
  RandomStream(uint64_t seed, uint32_t type_index, uint32_t particle, uint32_t stream);

  double normal(uint64_t index) const;   // N(0,1), Box-Muller pairs per block
  double uniform(uint64_t index) const;  // U(0,1), one 53-bit draw per block

 private:
  std::array<uint32_t, 4> counter(uint64_t block) const;
  std::array<uint32_t, 2> key_;
  uint32_t hi_;  // particle
  uint32_t lane_;  // type/stream mix
};

}  // namespace hmf
