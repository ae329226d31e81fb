#pragma once

#include <cmath>
#include <cstdint>

namespace auglab {

// Counter-based pseudo-random stream (splitmix64 over key + counter).
// State is two 64-bit words, so streams checkpoint exactly and child
// streams can be derived from a parent without sharing state.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(mix(seed + kPhi)), counter_(0) {}

  static RngStream restore(std::uint64_t key, std::uint64_t counter) {
    RngStream s(0);
    s.key_ = key;
    s.counter_ = counter;
    return s;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return mix(key_ + counter_ * kPhi);
  }

  // Uniform in [0, 1), 53 bits of mantissa. Avoids std::uniform_real_distribution,
  // whose output is implementation-defined.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

  // Box-Muller without a cached spare; two words per draw keeps the
  // counter advance independent of call history.
  double normal() {
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  long long uniform_index(long long n) {
    return static_cast<long long>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Derive an independent child stream; (parent, tag) pairs map to distinct keys.
  RngStream split(std::uint64_t tag) const {
    return RngStream(mix(key_ ^ mix(tag + kPhi)));
  }

 private:
  static constexpr std::uint64_t kPhi = 0x9E3779B97F4A7C15ULL;
  static constexpr double kPi = 3.14159265358979323846;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace auglab
