#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace threadsumm {

inline constexpr const char* kVersion = "threadsumm 0.1.0";

// Shape or rank mismatch in a numeric op. Message carries both shapes.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Bad or inconsistent configuration (unknown keys, out-of-range values).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed input data (JSONL records, embedding files, id mismatches).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numeric error state (NaN/Inf produced, tape misuse).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// mt19937_64 with a fixed bits-to-double mapping so streams are stable
// across standard libraries (uniform_real_distribution is not pinned).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // [0, 1)
  double next_double() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
  }

  // [0, n)
  std::size_t next_index(std::size_t n) {
    return static_cast<std::size_t>(next_double() * static_cast<double>(n));
  }

  std::mt19937_64& engine() { return eng_; }
  const std::mt19937_64& engine() const { return eng_; }

 private:
  std::mt19937_64 eng_;
};

inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace threadsumm
