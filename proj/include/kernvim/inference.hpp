#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "kernvim/common.hpp"
#include "kernvim/estimator.hpp"

namespace kernvim {

// ---------------------------------------------------------------------------
// Empirical bootstrap. A replicate redraws multinomial multiplicities
// m ~ Mult(n; 1/n, ..., 1/n) and forms centered weights w_i = (m_i - 1)/n;
// the replicate coefficient vector is linear in w, c_tilde = G w, with
//   G = sum_V omega_V (diag(alpha_V) + W_V K_V diag(beta_V)),
// so each draw reduces to quadratic forms in precomputed matrices.

inline std::vector<int> multinomial_counts(std::int64_t n, rng_stream& g) {
  std::vector<int> m(static_cast<std::size_t>(n), 0);
  for (std::int64_t j = 0; j < n; ++j) ++m[static_cast<std::size_t>(g.uniform_below(n))];
  return m;
}

inline vec centered_weights(const std::vector<int>& counts) {
  const auto n = static_cast<Eigen::Index>(counts.size());
  vec w(n);
  for (Eigen::Index i = 0; i < n; ++i)
    w[i] = static_cast<double>(counts[static_cast<std::size_t>(i)] - 1) / static_cast<double>(n);
  return w;
}

// Resampling operator mapping centered weights to the replicate coefficient
// vector. Square n x n in the pooled design; rectangular when the estimate
// lives on more sections than the resampled sample (split estimation).
inline mat bootstrap_operator(const component_map& comp, const weight_vector& omega) {
  Eigen::Index n = -1;
  mat g;
  for (const auto& [mask, w] : omega.entries) {
    auto it = comp.find(mask);
    if (it == comp.end()) throw input_error("missing components for a weighted subset");
    const subset_components& sc = it->second;
    if (n < 0) {
      n = sc.n();
      g = mat::Zero(n, n);
    } else if (sc.n() != n) {
      throw input_error("component size mismatch");
    }
    mat term = sc.smooth_diag(sc.beta);
    term.diagonal() += sc.alpha;
    g += w.value() * term;
  }
  if (n < 0) g = mat::Zero(0, 0);
  return g;
}

struct bootstrap_summary {
  vec draws_norm_sq;  // n ||H#||^2 per replicate
  vec draws_inner;    // sqrt(n) |<gamma_hat, H#>| per replicate
  double xi_hat = 0.0;
  double varsigma_hat = 0.0;
  double alpha = 0.05;
  int reps = 0;
  std::uint64_t seed = 0;
};

// Order statistic at rank ceil(B (1 - alpha)), ascending, no interpolation.
inline double upper_order_statistic(vec draws, double alpha) {
  const auto b = static_cast<std::int64_t>(draws.size());
  if (b < 1) throw input_error("quantile of an empty draw set");
  if (!(alpha > 0.0 && alpha < 1.0)) throw input_error("alpha must lie in (0, 1)");
  auto rank = static_cast<std::int64_t>(
      std::ceil(static_cast<double>(b) * (1.0 - alpha) - 1e-9));
  rank = std::clamp<std::int64_t>(rank, 1, b);
  std::nth_element(draws.data(), draws.data() + (rank - 1), draws.data() + b);
  return draws[rank - 1];
}

// One replicate evaluated through the precomputed pieces: kg = K G and
// u = G^T K c. Returns {n c~^T K c~, sqrt(n) |c^T K c~|}.
inline std::array<double, 2> bootstrap_replicate(const mat& g_op, const mat& kg, const vec& u,
                                                 std::int64_t n_eff, const vec& w) {
  vec t = g_op * w;
  vec kt = kg * w;
  double norm_sq = clamp_norm_sq(static_cast<double>(n_eff) * t.dot(kt));
  double inner = std::sqrt(static_cast<double>(n_eff)) * std::abs(u.dot(w));
  return {norm_sq, inner};
}

// Core driver shared by the pooled and split designs. Replicate b draws from
// its own derived stream and writes into slot b, so results are identical for
// any thread count.
inline bootstrap_summary bootstrap_core(const mat& g_op, const mat& k, const vec& c,
                                        std::int64_t n_eff, int reps, double alpha,
                                        std::uint64_t seed, int threads = 1) {
  if (reps < 1) throw input_error("bootstrap needs at least one replicate");
  if (!(alpha > 0.0 && alpha < 1.0)) throw input_error("alpha must lie in (0, 1)");
  if (g_op.rows() != k.rows() || k.rows() != k.cols() || c.size() != k.rows())
    throw input_error("bootstrap dimension mismatch");
  if (g_op.cols() != n_eff) throw input_error("bootstrap weight dimension mismatch");

  bootstrap_summary s;
  s.alpha = alpha;
  s.reps = reps;
  s.seed = seed;
  s.draws_norm_sq.resize(reps);
  s.draws_inner.resize(reps);

  mat kg = k * g_op;
  vec u = g_op.transpose() * (k * c);

  parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t b) {
    rng_stream g = rng_stream::derive(seed, 0xB007ull, b);
    std::vector<int> counts = multinomial_counts(n_eff, g);
    vec w = centered_weights(counts);
    auto [norm_sq, inner] = bootstrap_replicate(g_op, kg, u, n_eff, w);
    s.draws_norm_sq[static_cast<Eigen::Index>(b)] = norm_sq;
    s.draws_inner[static_cast<Eigen::Index>(b)] = inner;
  });

  s.xi_hat = upper_order_statistic(s.draws_norm_sq, alpha);
  s.varsigma_hat = upper_order_statistic(s.draws_inner, alpha);
  return s;
}

inline bootstrap_summary bootstrap(const component_map& comp, const weight_vector& omega,
                                   const embedded_estimate& est, int reps, double alpha,
                                   std::uint64_t seed, int threads = 1) {
  mat g_op = bootstrap_operator(comp, omega);
  if (g_op.rows() == 0) g_op = mat::Zero(est.k->rows(), est.n_eff);
  return bootstrap_core(g_op, *est.k, est.c, est.n_eff, reps, alpha, seed, threads);
}

// ---------------------------------------------------------------------------
// Global test and confidence statements.

struct test_report {
  double norm_sq = 0.0, norm = 0.0;
  double statistic = 0.0;  // n * norm_sq
  double p_value = 1.0;
  bool reject = false;
  double xi_hat = 0.0, varsigma_hat = 0.0;
  double alpha = 0.05;
  std::int64_t n = 0;
  int reps = 0;
  std::uint64_t seed = 0;
  std::array<double, 2> ci_triangle{0.0, 0.0};
  std::array<double, 2> ci_delta{0.0, 0.0};
};

// Triangle-inequality interval: [max(0, norm - s), norm + s], s = sqrt(xi/n).
inline std::array<double, 2> norm_ci_triangle(double norm, double xi_hat, std::int64_t n) {
  double s = std::sqrt(xi_hat / static_cast<double>(n));
  return {std::max(0.0, norm - s), norm + s};
}

// Delta-method interval, reported as the convex hull of the positive branch
// { x > 0 : |norm^2 - x^2| <= 2 varsigma / sqrt(n) } and {0}; {0} belongs to
// the set exactly when the test fails to reject (norm^2 <= xi/n).
inline std::array<double, 2> norm_ci_delta(double norm_sq, double varsigma_hat, double xi_hat,
                                           std::int64_t n) {
  double half = 2.0 * varsigma_hat / std::sqrt(static_cast<double>(n));
  double hi = std::sqrt(std::max(0.0, norm_sq + half));
  bool zero_in = norm_sq <= xi_hat / static_cast<double>(n);
  double lo = zero_in ? 0.0 : std::sqrt(std::max(0.0, norm_sq - half));
  return {lo, hi};
}

// p-value with the add-one convention; rejection at p <= alpha coincides with
// the statistic exceeding xi_hat whenever (B+1) alpha is an integer.
inline test_report run_test(const embedded_estimate& est, const bootstrap_summary& bs) {
  test_report r;
  r.norm_sq = rkhs_norm_sq(est);
  r.norm = std::sqrt(r.norm_sq);
  r.n = est.n_eff;
  r.statistic = static_cast<double>(est.n_eff) * r.norm_sq;
  r.alpha = bs.alpha;
  r.reps = bs.reps;
  r.seed = bs.seed;
  r.xi_hat = bs.xi_hat;
  r.varsigma_hat = bs.varsigma_hat;
  std::int64_t count = 0;
  for (Eigen::Index b = 0; b < bs.draws_norm_sq.size(); ++b)
    if (bs.draws_norm_sq[b] >= r.statistic) ++count;
  r.p_value = static_cast<double>(1 + count) / static_cast<double>(bs.reps + 1);
  r.reject = r.p_value <= bs.alpha;
  r.ci_triangle = norm_ci_triangle(r.norm, bs.xi_hat, est.n_eff);
  r.ci_delta = norm_ci_delta(r.norm_sq, bs.varsigma_hat, bs.xi_hat, est.n_eff);
  return r;
}

// Sup-norm band: constant halfwidth sqrt(xi_hat sup_value / n) around the
// estimate.
struct band_result {
  vec estimate, lower, upper;
  double halfwidth = 0.0;
};

inline band_result confidence_band(const vec& values, double xi_hat, std::int64_t n,
                                   double sup_value) {
  band_result b;
  b.halfwidth = std::sqrt(xi_hat * sup_value / static_cast<double>(n));
  b.estimate = values;
  b.lower = values.array() - b.halfwidth;
  b.upper = values.array() + b.halfwidth;
  return b;
}

// ---------------------------------------------------------------------------
// Benjamini-Hochberg step-up adjusted p-values.

inline std::vector<double> bh_adjust(const std::vector<double>& p) {
  const std::size_t m = p.size();
  for (double v : p)
    if (!(v > 0.0 && v <= 1.0)) throw input_error("p-values must lie in (0, 1]");
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<double> adj(m);
  double running = 1.0;
  for (std::size_t r = m; r > 0; --r) {
    std::size_t idx = order[r - 1];
    double v = p[idx] * static_cast<double>(m) / static_cast<double>(r);
    running = std::min(running, v);
    adj[idx] = running;
  }
  return adj;
}

// ---------------------------------------------------------------------------
// Half-normal plug-in alternative for varsigma: sigma^2 estimates the second
// moment of <phi_hat(Z_i), gamma_hat> and the (1-alpha) quantile of
// |N(0, sigma^2)| is sigma z_{1 - alpha/2}.

// Acklam's rational approximation to the standard normal quantile.
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw input_error("normal quantile needs p in (0, 1)");
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425, phigh = 1.0 - plow;
  double q, r, x;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= phigh) {
    q = p - 0.5;
    r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  return x;
}

// Same quantity computed from the resampling operator: the per-observation
// inner products are u = G^T K c minus the plug-in mean.
inline double plugin_varsigma_core(const mat& g_op, const mat& k, const vec& c, double plug_mean,
                                   std::int64_t n_eff, double alpha) {
  vec u = g_op.transpose() * (k * c);
  u.array() -= plug_mean;
  double sigma = std::sqrt(u.squaredNorm() / static_cast<double>(n_eff));
  return sigma * normal_quantile(1.0 - alpha / 2.0);
}

inline double plugin_varsigma(const component_map& comp, const weight_vector& omega,
                              const embedded_estimate& est, double alpha) {
  const Eigen::Index n = est.c.size();
  vec kc = *est.k * est.c;
  vec u = vec::Zero(n);
  vec alpha_mix = vec::Zero(n);
  for (const auto& [mask, w] : omega.entries) {
    auto it = comp.find(mask);
    if (it == comp.end()) throw input_error("missing components for a weighted subset");
    const subset_components& sc = it->second;
    u += w.value() * (sc.beta.cwiseProduct(sc.smooth(kc)) + sc.alpha.cwiseProduct(kc));
    alpha_mix += w.value() * sc.alpha;
  }
  u.array() -= alpha_mix.dot(kc) / static_cast<double>(n);
  double sigma = std::sqrt(u.squaredNorm() / static_cast<double>(n));
  return sigma * normal_quantile(1.0 - alpha / 2.0);
}

}  // namespace kernvim
