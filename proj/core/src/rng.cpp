#include "hmf/rng.hpp"

#include <cmath>

namespace hmf {

namespace {

constexpr uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(uint32_t a, uint32_t b, uint32_t& hi, uint32_t& lo) {
  uint64_t p = static_cast<uint64_t>(a) * b;
  hi = static_cast<uint32_t>(p >> 32);
  lo = static_cast<uint32_t>(p);
}

// strictly inside (0,1); 53 significant bits from two lanes
inline double to_unit(uint32_t hi, uint32_t lo) {
  uint64_t bits = (static_cast<uint64_t>(hi) << 32) | lo;
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

std::array<uint32_t, 4> philox4x32(std::array<uint32_t, 4> ctr,
                                   std::array<uint32_t, 2> key) {
  for (int round = 0; round < 10; ++round) {
    uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kPhiloxW0;
    key[1] += kPhiloxW1;
  }
  return ctr;
}

RandomStream::RandomStream(uint64_t seed, uint32_t type_index, uint32_t particle,
                           uint32_t stream)
    : key_{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)},
      hi_(particle),
      lane_((stream << 28) | (type_index & 0x0FFFFFFFu)) {}

std::array<uint32_t, 4> RandomStream::counter(uint64_t block) const {
  return {static_cast<uint32_t>(block), static_cast<uint32_t>(block >> 32), hi_, lane_};
}

double RandomStream::normal(uint64_t index) const {
  auto out = philox4x32(counter(index >> 1), key_);
  double u1 = to_unit(out[0], out[1]);
  double u2 = to_unit(out[2], out[3]);
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  return (index & 1) ? r * std::sin(a) : r * std::cos(a);
}

double RandomStream::uniform(uint64_t index) const {
  auto out = philox4x32(counter(index), key_);
  return to_unit(out[0], out[1]);
}

}  // namespace hmf
