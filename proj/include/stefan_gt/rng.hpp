#pragma once

#include <cmath>
#include <algorithm>
#include <cstdint>
#include <exception>
#include <limits>
#include <numbers>
#include <random>
#include <thread>
#include <vector>

namespace stefan_gt {

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace detail

/// Stream identifiers; every random consumer draws from its own keyed stream.
enum class StreamKind : std::uint64_t {
  initial_particle = 1,
  injection = 2,
  emission = 3,
  particle_path = 4,
  mc_heat = 5,
  mc_hitting = 6,
  fk_path = 7,
  bootstrap = 8,
  horizon = 9,
  test = 10,
};

/// Counter-based generator: output i of stream key is mix(key, i).
/// Streams are addressed by (seed, kind, a, b), so the numbers a consumer sees
/// do not depend on how work is split across threads.
class CounterRng {
 public:
  using result_type = std::uint64_t;

  CounterRng(std::uint64_t seed, StreamKind kind, std::uint64_t a = 0, std::uint64_t b = 0) {
    std::uint64_t k = detail::mix64(seed + 0x9E3779B97F4A7C15ULL);
    k = detail::mix64(k ^ (static_cast<std::uint64_t>(kind) * 0xD1B54A32D192ED03ULL));
    k = detail::mix64(k ^ (a + 0x8CB92BA72F3D8DD7ULL));
    key_ = detail::mix64(k ^ (b * 0xABC98388FB8FAC03ULL + 0x2545F4914F6CDD1DULL));
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return detail::mix64(key_ ^ detail::mix64(++counter_ * 0x9E3779B97F4A7C15ULL)); }

  /// Uniform on (0, 1).
  double uniform() { return ((*this)() >> 11) * 0x1.0p-53 + 0x1.0p-54; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double r = std::sqrt(-2.0 * std::log(uniform()));
    const double th = 2.0 * std::numbers::pi * uniform();
    spare_ = r * std::sin(th);
    has_spare_ = true;
    return r * std::cos(th);
  }

  double exponential(double mean) { return -mean * std::log(uniform()); }

  std::uint64_t poisson(double mean) {
    if (!(mean > 0.0)) return 0;
    std::poisson_distribution<std::uint64_t> dist(mean);
    return dist(*this);
  }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Runs body(i) for i in [0, n) on `threads` workers with a static block split.
/// Results must be written to per-index slots so the outcome is thread-count independent.
template <class Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk, hi = std::min(n, lo + chunk);
    pool.emplace_back([lo, hi, w, &body, &errors] {
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace stefan_gt
