#pragma once

#include <algorithm>
#include <cstdlib>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "kernvim/common.hpp"

namespace kernvim {

// Exact rational bookkeeping for contrast weights; values only become
// floating point at the consumer boundary.
struct rational {
  long long num = 0;
  long long den = 1;

  rational() = default;
  rational(long long n, long long d) : num(n), den(d) {
    if (den == 0) throw numeric_error("rational with zero denominator");
    if (den < 0) {
      num = -num;
      den = -den;
    }
    long long g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) {
      num /= g;
      den /= g;
    }
  }

  rational operator+(const rational& o) const {
    return rational(num * o.den + o.num * den, den * o.den);
  }
  rational operator-(const rational& o) const {
    return rational(num * o.den - o.num * den, den * o.den);
  }
  rational operator-() const { return rational(-num, den); }
  bool operator==(const rational& o) const { return num == o.num && den == o.den; }
  bool is_zero() const { return num == 0; }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

// Signed weights over covariate subsets. Entries are kept in canonical
// ascending-mask order; exact zeros are dropped on insertion.
struct weight_vector {
  int players = 0;
  std::map<subset_mask, rational> entries;

  void add(subset_mask m, const rational& r) {
    auto it = entries.find(m);
    rational s = it == entries.end() ? r : it->second + r;
    if (s.is_zero()) {
      if (it != entries.end()) entries.erase(it);
    } else if (it == entries.end()) {
      entries.emplace(m, s);
    } else {
      it->second = s;
    }
  }

  double value(subset_mask m) const {
    auto it = entries.find(m);
    return it == entries.end() ? 0.0 : it->second.value();
  }

  rational exact_sum() const {
    rational s;
    for (const auto& [m, r] : entries) s = s + r;
    return s;
  }

  std::vector<subset_mask> masks() const {
    std::vector<subset_mask> out;
    out.reserve(entries.size());
    for (const auto& [m, r] : entries) out.push_back(m);
    return out;
  }
};

// ---------------------------------------------------------------------------
// LOCO family: +1 on V1, -1 on V2. V1 = V2 cancels to the zero measure.

inline weight_vector loco_weights(int d, subset_mask v1, subset_mask v2) {
  subset_mask full = full_mask(d);
  if ((v1 & ~full) || (v2 & ~full)) throw input_error("subset outside variable range");
  weight_vector w;
  w.players = d;
  w.add(v1, rational(1, 1));
  w.add(v2, rational(-1, 1));
  return w;
}

inline weight_vector koi_weights(int d, int target) {
  if (target < 0 || target >= d) throw input_error("target variable out of range");
  return loco_weights(d, subset_mask{1} << target, 0);
}

inline weight_vector loo_weights(int d, int target) {
  if (target < 0 || target >= d) throw input_error("target variable out of range");
  subset_mask full = full_mask(d);
  return loco_weights(d, full, full & ~(subset_mask{1} << target));
}

// ---------------------------------------------------------------------------
// Shapley weights for player i: for every V not containing i,
//   +1/(d C(d-1, |V|)) on V u {i} and the negation on V.
// Exact rational accumulation; enumeration cost 2^d is guarded.

namespace detail {

inline long long binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  long long r = 1;
  for (int j = 1; j <= k; ++j) r = r * (n - k + j) / j;
  return r;
}

}  // namespace detail

inline weight_vector shapley_exact_weights(int d, int i, int enumeration_limit = 12) {
  if (i < 0 || i >= d) throw input_error("target variable out of range");
  if (d > enumeration_limit)
    throw input_error("exact Shapley enumeration limited to " +
                      std::to_string(enumeration_limit) + " variables; use the sampled variant");
  weight_vector w;
  w.players = d;
  subset_mask bit = subset_mask{1} << i;
  subset_mask full = full_mask(d);
  for (subset_mask v = 0;; ++v) {
    if (!(v & bit)) {
      rational beta(1, static_cast<long long>(d) * detail::binomial(d - 1, mask_size(v)));
      w.add(v | bit, beta);
      w.add(v, -beta);
    }
    if (v == full) break;
  }
  return w;
}

// Permutation-form Shapley: averages marginal-contrast weights over
// permutations supplied by `next_perm` (each a permutation of 0..d-1).
// Counts accumulate over the common denominator m, so an enumerating stream
// reproduces the subset-form weights exactly.
template <typename PermSource>
weight_vector shapley_perm_weights(int d, int i, int m, PermSource&& next_perm) {
  if (i < 0 || i >= d) throw input_error("target variable out of range");
  if (m < 1) throw input_error("permutation count must be positive");
  std::map<subset_mask, long long> counts;
  for (int t = 0; t < m; ++t) {
    const std::vector<int>& perm = next_perm();
    subset_mask prefix = 0;
    for (int p : perm) {
      if (p == i) break;
      prefix |= subset_mask{1} << p;
    }
    counts[prefix | (subset_mask{1} << i)] += 1;
    counts[prefix] -= 1;
  }
  weight_vector w;
  w.players = d;
  for (const auto& [mask, c] : counts) w.add(mask, rational(c, m));
  return w;
}

inline weight_vector shapley_mc_weights(int d, int i, int m, std::uint64_t seed) {
  rng_stream g = rng_stream::derive(seed, 0x5A9Bull);
  std::vector<int> perm(static_cast<std::size_t>(d));
  std::iota(perm.begin(), perm.end(), 0);
  auto source = [&]() -> const std::vector<int>& {
    g.shuffle(perm);
    return perm;
  };
  return shapley_perm_weights(d, i, m, source);
}

// Full d! enumeration of the permutation form (test-scale d only).
inline weight_vector shapley_perm_enumeration(int d, int i) {
  if (d > 8) throw input_error("permutation enumeration limited to 8 variables");
  std::vector<int> perm(static_cast<std::size_t>(d));
  std::iota(perm.begin(), perm.end(), 0);
  long long count = 1;
  for (int j = 2; j <= d; ++j) count *= j;
  bool first = true;
  auto source = [&]() -> const std::vector<int>& {
    if (!first) std::next_permutation(perm.begin(), perm.end());
    first = false;
    return perm;
  };
  return shapley_perm_weights(d, i, static_cast<int>(count), source);
}

}  // namespace kernvim
