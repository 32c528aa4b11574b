#include "loco/common.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

namespace loco {

namespace {
#ifdef NDEBUG
std::atomic<bool> g_debug_checks{false};
#else
std::atomic<bool> g_debug_checks{true};
#endif
std::atomic<int> g_workers{0};  // 0 = auto
}  // namespace

bool debug_checks_enabled() { return g_debug_checks.load(std::memory_order_relaxed); }
void set_debug_checks(bool enabled) { g_debug_checks.store(enabled, std::memory_order_relaxed); }

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t mix64(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

std::uint64_t mix64(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return mix64(mix64(a, b) ^ mix64(c));
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) return 0;
  // rejection sampling to avoid modulo bias
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  if (u1 < 0x1.0p-53) u1 = 0x1.0p-53;
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 6.283185307179586476925286766559 * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

int worker_count() {
  int n = g_workers.load(std::memory_order_relaxed);
  if (n > 0) return n;
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

void set_worker_count(int n) { g_workers.store(n, std::memory_order_relaxed); }

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t, std::int64_t)>& chunk_fn,
                  std::int64_t grain) {
  const std::int64_t n = end - begin;
  if (n <= 0) return;
  int workers = worker_count();
  if (workers > 1 && grain > 0) {
    const std::int64_t max_workers = (n + grain - 1) / grain;
    if (max_workers < workers) workers = static_cast<int>(max_workers);
  }
  if (workers <= 1) {
    chunk_fn(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers) - 1);
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    const std::int64_t b = begin + w * chunk;
    const std::int64_t e = std::min(end, b + chunk);
    if (b >= e) break;
    pool.emplace_back([&chunk_fn, b, e] { chunk_fn(b, e); });
  }
  chunk_fn(begin, std::min(end, begin + chunk));
  for (auto& t : pool) t.join();
}

std::uint64_t hash_bytes(const void* data, std::size_t n, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t hash_doubles(std::span<const double> xs) {
  return hash_bytes(xs.data(), xs.size() * sizeof(double));
}

std::string shape_to_string(std::span<const int> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

}  // namespace loco
