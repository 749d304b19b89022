#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

namespace dumbolab {

inline constexpr std::uint64_t kWordBytes = 8;

// 8-byte little-endian load/store into arbitrary byte buffers.
inline std::uint64_t load_word_le(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline void store_word_le(std::uint8_t* p, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    p[i] = static_cast<std::uint8_t>(v & 0xff);
    v >>= 8;
  }
}

// Misuse of the simulator API (out-of-range address, write in a RO
// transaction, ...). Distinct from HtmAbort, which models a hardware
// rollback and is handled by the retry machinery.
struct UsageError : std::logic_error {
  explicit UsageError(const std::string& what) : std::logic_error(what) {}
};

// Deterministic 64-bit generator, stable across platforms/library versions.
struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t seed) : state(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  // uniform in [0, n)
  std::uint64_t below(std::uint64_t n) { return n ? next() % n : 0; }
  double unit() { return (next() >> 11) * 0x1.0p-53; }
};

}  // namespace dumbolab
