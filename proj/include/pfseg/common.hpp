#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfseg {

// Bad user input: shapes, config keys, CLI flags. Exit code 1 at the CLI.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape contract violation between tensors; message names both shapes.
struct ShapeError : ValidationError {
  using ValidationError::ValidationError;
};

// File-level failures with a distinct kind per failure mode.
struct IoError : std::runtime_error {
  enum class Kind { BadMagic, Truncated, DimOverflow, BadHeader, OpenFailed };
  Kind kind;
  IoError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

// Failures mid-run (non-finite loss, missing checkpoint mid-pipeline). Exit code 2.
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string dims_str(const std::vector<std::int64_t>& d) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < d.size(); ++i) os << (i ? "," : "") << d[i];
  os << ']';
  return os.str();
}

// splitmix64; used to derive independent seed streams from (seed, tags).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = mix64(base ^ 0x853c49e6748fea9bull);
  s = mix64(s ^ mix64(a));
  s = mix64(s ^ mix64(b));
  s = mix64(s ^ mix64(c));
  return s;
}

// Deterministic PRNG with bit-stable value mappings. Distribution helpers use
// only arithmetic on the raw 64-bit stream, never std:: distributions, so a
// given seed yields identical draws on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x4d595df4d0f33173ull) {}

  std::uint64_t next_u64() {
    state_ = mix64(state_ + 0x9e3779b97f4a7c15ull);
    return state_;
  }

  // uniform in [0, 1), 53-bit mantissa
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // inclusive bounds
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Irwin-Hall sum of 12 uniforms: approximately N(0,1), tails clipped at 6.
  // Pure add/sub of bit-stable uniforms, so it is platform-exact.
  double gauss() {
    double acc = -6.0;
    for (int i = 0; i < 12; ++i) acc += uniform();
    return acc;
  }

 private:
  std::uint64_t state_;
};

// Caps module-internal parallelism; reads PFSEG_THREADS once.
int worker_threads();

}  // namespace pfseg
