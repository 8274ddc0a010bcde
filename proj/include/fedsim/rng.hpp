#pragma once

#include <cstdint>

namespace fedsim::rng {

// splitmix64 finalizer; bijective on 64-bit words.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ull;  // 2^64 / phi, odd
inline constexpr std::uint64_t kDeriveSalt = 0xd1b54a32d192ed03ull;

// Counter-based stream: draw i is mix64(key + i*gamma), so a stream is a pure
// function of (key, position) and never touches shared state. Child streams are
// keyed by hashing (key, id), which lets one master seed fan out over
// (run, machine, round, ...) paths deterministically, independent of thread
// scheduling.
class Stream {
 public:
  Stream() : Stream(0) {}
  explicit Stream(std::uint64_t key) : key_(key), ctr_(0) {}

  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return ctr_; }

  std::uint64_t next_u64() { return mix64(key_ + (++ctr_) * kGamma); }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased uniform draw from {0, ..., n-1} by rejection.
  std::uint64_t next_below(std::uint64_t n) {
    const std::uint64_t reject_below = (0 - n) % n;  // 2^64 mod n
    for (;;) {
      const std::uint64_t v = next_u64();
      if (v >= reject_below) return v % n;
    }
  }

  // Independent child stream; derivation depends only on (key, id), not on how
  // many draws this stream has produced.
  Stream derive(std::uint64_t id) const {
    return Stream(mix64(mix64(key_ ^ kDeriveSalt) + (id + 1) * kGamma));
  }

 private:
  std::uint64_t key_;
  std::uint64_t ctr_;
};

}  // namespace fedsim::rng
