#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace loco {

// Thrown for tensor/network shape mismatches. Messages name both shapes.
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for invalid configuration files, flags, or layer geometry.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown for faults at run time (NaN network output, env fault, bad file).
struct RuntimeFault : std::runtime_error {
  explicit RuntimeFault(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime toggle for NaN/Inf output checks on every tensor op. Defaults to
// on in debug builds, off in release; tests flip it explicitly.
bool debug_checks_enabled();
void set_debug_checks(bool enabled);

// splitmix64 step; used to derive independent seed streams.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t mix64(std::uint64_t a, std::uint64_t b);
std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c);

// mt19937_64 with implementation-independent uniform/normal draws so that
// trajectories replay bit-exactly anywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  void seed(std::uint64_t s) {
    engine_.seed(s);
    have_spare_ = false;
  }

  std::uint64_t next_u64() { return engine_(); }

  // uniform in [0, 1)
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // integer in [0, n)
  std::uint64_t uniform_index(std::uint64_t n);

  // standard normal via Box-Muller (second value cached)
  double normal();

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// Deterministic parallel loop: [begin, end) is split into contiguous chunks,
// one per worker, so each index is processed by exactly one thread in order.
// Runs inline when the pool has a single thread or the range is small.
void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& chunk_fn,
                  std::int64_t grain = 1);

int worker_count();
void set_worker_count(int n);

// FNV-1a over raw bytes; used for config hashes and bit-exactness checks.
std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t seed = 1469598103934665603ull);
std::uint64_t hash_doubles(std::span<const double> xs);

std::string shape_to_string(std::span<const int> shape);

}  // namespace loco
