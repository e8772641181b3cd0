#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>

namespace srdl {

inline constexpr double kPi = 3.14159265358979323846;

// Process exit codes used by the command line tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitConfig = 2,
  kExitData = 3,
  kExitNumeric = 4,
};

class error : public std::runtime_error {
 public:
  explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/shape contract violations (dimension mismatches and friends).
class shape_error : public error {
 public:
  using error::error;
};

// Malformed external input; the message carries file, line and field.
class parse_error : public error {
 public:
  using error::error;
};

// NaN/Inf or other numeric breakdown. Never swallowed.
class numeric_error : public error {
 public:
  using error::error;
};

class config_error : public error {
 public:
  using error::error;
};

inline std::string str_printf(const char* fmt, ...) {
  va_list args;
  va_start(args, fmt);
  va_list copy;
  va_copy(copy, args);
  const int n = std::vsnprintf(nullptr, 0, fmt, copy);
  va_end(copy);
  std::string out(static_cast<std::size_t>(n), '\0');
  std::vsnprintf(out.data(), out.size() + 1, fmt, args);
  va_end(args);
  return out;
}

// Shortest decimal form that round-trips a double exactly.
inline std::string fmt_double(double v) { return str_printf("%.17g", v); }

// Deterministic random source. Distributions are hand-rolled on top of
// mt19937_64 so streams are bit-identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller; the spare is cached so the draw
  // sequence is a fixed function of the seed.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * kPi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Uniform integer in [0, n).
  std::uint64_t index(std::uint64_t n) {
    if (n == 0) throw error("Rng::index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = eng_();
    while (x >= limit) x = eng_();
    return x % n;
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Normalize an angle to [-pi, pi).
inline double normalize_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

// Distance between two angles measured on the unit circle.
inline double angle_distance(double a, double b) {
  const double d = normalize_angle(a - b);
  return std::fabs(d);
}

}  // namespace srdl
