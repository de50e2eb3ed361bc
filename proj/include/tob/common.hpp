#pragma once

// Shared plumbing: error type, deterministic RNG, seed substreams,
// rounding and little-endian binary helpers.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tob {

enum class ErrorCode {
  config,
  invalid_argument,
  malformed_header,
  dimension_mismatch,
  truncated_payload,
  boundary,
  video_too_short,
  clip_too_short,
  degenerate_fit,
  degenerate_data,
  shape_mismatch,
  state,
  insufficient_data,
  path,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// splitmix64; deterministic across platforms, unlike std distributions.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // unbiased-enough bounded draw (multiply-shift)
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  // standard normal via Box-Muller; second value cached so draws pair up deterministically
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * uniform();
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::uint64_t state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

// Named substream derivation: every stage/video draws from its own stream of
// the single run seed.
inline std::uint64_t substream(std::uint64_t seed, std::string_view name) {
  std::uint64_t z = seed ^ fnv1a64(name);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t substream(std::uint64_t seed, std::string_view name, std::uint64_t index) {
  return substream(substream(seed, name), std::to_string(index));
}

// round-half-to-even, e.g. 0.5 -> 0, 1.5 -> 2, 50.4 -> 50
inline double round_half_even(double x) {
  const double f = std::floor(x);
  const double frac = x - f;
  if (frac < 0.5) return f;
  if (frac > 0.5) return f + 1.0;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

// ---- little-endian binary io (asserts LE host; all target platforms are) ----

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_le(std::istream& is, T& v) {
  static_assert(std::is_trivially_copyable_v<T>);
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<bool>(is);
}

}  // namespace tob
