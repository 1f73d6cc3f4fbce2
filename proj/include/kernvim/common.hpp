#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <exception>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

namespace kernvim {

using vec = Eigen::VectorXd;
using mat = Eigen::MatrixXd;
using ivec = Eigen::VectorXi;

// Error taxonomy. `code` doubles as the process exit status: 2 rejects bad
// input, 3 flags data too degenerate to analyze, 4 flags numerical failure.
class error : public std::runtime_error {
 public:
  error(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const noexcept { return code_; }

 private:
  int code_;
};

struct input_error : error {
  explicit input_error(const std::string& w) : error(2, w) {}
};
struct degenerate_error : error {
  explicit degenerate_error(const std::string& w) : error(3, w) {}
};
struct numeric_error : error {
  explicit numeric_error(const std::string& w) : error(4, w) {}
};

// ---------------------------------------------------------------------------
// Subsets of variable indices as bit masks (canonical order = ascending index).

using subset_mask = std::uint64_t;

inline constexpr int max_subset_vars = 64;

inline subset_mask full_mask(int d) {
  if (d < 0 || d > max_subset_vars) throw input_error("subset dimension out of range");
  return d == 64 ? ~subset_mask{0} : (subset_mask{1} << d) - 1;
}

inline subset_mask mask_from(const std::vector<int>& idx) {
  subset_mask m = 0;
  for (int i : idx) {
    if (i < 0 || i >= max_subset_vars) throw input_error("variable index out of range");
    m |= subset_mask{1} << i;
  }
  return m;
}

inline std::vector<int> mask_indices(subset_mask m) {
  std::vector<int> out;
  for (int i = 0; i < max_subset_vars; ++i)
    if (m >> i & 1) out.push_back(i);
  return out;
}

inline int mask_size(subset_mask m) { return std::popcount(m); }

// ---------------------------------------------------------------------------
// Deterministic RNG streams. All draws go through explicit transforms of the
// mt19937_64 bit stream so a (seed, index) pair pins the sequence exactly,
// independent of standard-library distribution internals.

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t s = seed ^ 0x6a09e667f3bcc909ull;
  s ^= splitmix64(s) + a;
  s ^= splitmix64(s) + b;
  return splitmix64(s);
}

class rng_stream {
 public:
  explicit rng_stream(std::uint64_t seed) : gen_(seed) {}

  static rng_stream derive(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return rng_stream(mix_seed(seed, a, b));
  }

  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1p-53; }

  // uniform over {0, ..., n-1}
  std::int64_t uniform_below(std::int64_t n) {
    auto r = static_cast<std::int64_t>(uniform01() * static_cast<double>(n));
    return r < n ? r : n - 1;
  }

  // Marsaglia polar method; the spare variate is discarded so each draw
  // consumes a self-contained run of the stream.
  double normal() {
    for (;;) {
      double u = 2.0 * uniform01() - 1.0;
      double v = 2.0 * uniform01() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  bool bernoulli(double p) { return uniform01() < p; }

  void shuffle(std::vector<int>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      auto j = static_cast<std::size_t>(uniform_below(static_cast<std::int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
};

// ---------------------------------------------------------------------------
// Index-sharded parallel loop. Results must be written to per-index slots;
// the first exception thrown by any task is rethrown after the join.

template <typename Fn>
void parallel_for(std::size_t total, int threads, Fn&& fn) {
  if (threads <= 1 || total <= 1) {
    for (std::size_t i = 0; i < total; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr first_error;
  std::mutex guard;
  auto worker = [&] {
    std::size_t i;
    while (!failed.load(std::memory_order_relaxed) && (i = next.fetch_add(1)) < total) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(guard);
        if (!first_error) first_error = std::current_exception();
        failed.store(true, std::memory_order_relaxed);
      }
    }
  };
  std::size_t use = std::min<std::size_t>(static_cast<std::size_t>(threads), total);
  std::vector<std::thread> pool;
  pool.reserve(use);
  for (std::size_t t = 0; t < use; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace kernvim
