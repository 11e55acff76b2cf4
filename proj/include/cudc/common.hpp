#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace cudc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Machine-readable failure categories, surfaced on stderr by the CLI.
enum class ErrorCategory {
  Config,    // bad run configuration / schema violation
  Io,        // file not found, corrupt header, truncation, version mismatch
  Shape,     // dimension or length mismatch between tensors/arrays
  Domain,    // out-of-range values: actions out of bounds, unknown task, bad k
  State,     // operation not valid in the current state (capacity, no anchors)
};

const char* error_category_name(ErrorCategory c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& message)
      : std::runtime_error(message), category_(category) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

[[noreturn]] inline void fail(ErrorCategory c, const std::string& msg) {
  throw Error(c, msg);
}

/// Deterministic PRNG used everywhere. Wraps a fixed 64-bit generator and
/// implements its own distributions so results do not depend on the
/// standard library's unspecified algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed == 0 ? 0x9e3779b97f4a7c15ULL : seed) {
    // warm up splitmix so nearby seeds decorrelate
    for (int i = 0; i < 4; ++i) next_u64();
  }

  std::uint64_t next_u64() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  /// Standard normal via Box-Muller (no cached spare, keeps the stream simple).
  double gaussian() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
  }

  double gaussian(double mean, double stddev) { return mean + stddev * gaussian(); }

  /// Derive an independent stream for a named purpose.
  Rng fork(std::uint64_t stream_id) {
    Rng r(state_ ^ (0xd1b54a32d192ed03ULL * (stream_id + 1)));
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace cudc
