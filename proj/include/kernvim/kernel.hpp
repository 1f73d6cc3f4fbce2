#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "kernvim/common.hpp"

namespace kernvim {

// Gaussian kernel family K(x, x') = exp(-|x - x'|^2 / (2 h^2)).
// sup_value = sup_x K(x, x) = 1 exactly for this family; it feeds the
// sup-norm band halfwidth.
struct kernel_config {
  double bandwidth = 1.0;
  double sup_value = 1.0;
};

inline double gaussian_kernel_sq(double sq_dist, double h) {
  return std::exp(-sq_dist / (2.0 * h * h));
}

inline double gaussian_kernel(const vec& x, const vec& y, double h) {
  return gaussian_kernel_sq((x - y).squaredNorm(), h);
}

// ---------------------------------------------------------------------------
// Columnwise affine map to zero mean, unit variance (population convention).
// Near-constant columns keep scale 1 so they map to an exact constant rather
// than dividing by ~0. The fitted transform is reapplied to query points.

struct standardizer {
  vec mean, scale;

  static standardizer fit(const mat& x) {
    if (x.rows() < 1 || x.cols() < 1) throw input_error("standardizer needs a nonempty matrix");
    standardizer s;
    s.mean = x.colwise().mean();
    mat centered = x.rowwise() - s.mean.transpose();
    vec var = centered.array().square().colwise().mean();
    s.scale = var.array().sqrt();
    for (Eigen::Index j = 0; j < s.scale.size(); ++j)
      if (!(s.scale[j] > 1e-12)) s.scale[j] = 1.0;
    return s;
  }

  mat apply(const mat& x) const {
    if (x.cols() != mean.size()) throw input_error("standardizer column mismatch");
    mat out = x.rowwise() - mean.transpose();
    out.array().rowwise() /= scale.transpose().array();
    return out;
  }
};

// ---------------------------------------------------------------------------
// Median heuristic bandwidth: median of the n(n-1)/2 pairwise Euclidean
// distances. A zero median means the points are too concentrated to set a
// scale.

inline double median_pairwise_distance(const mat& pts) {
  const Eigen::Index n = pts.rows();
  if (n < 2) throw degenerate_error("median heuristic needs at least two points");
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n) * static_cast<std::size_t>(n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      dist.push_back((pts.row(i) - pts.row(j)).norm());
  const std::size_t m = dist.size();
  const std::size_t k = m / 2;
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  double med = dist[k];
  if (m % 2 == 0) {
    double lower = *std::max_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k));
    med = 0.5 * (lower + med);
  }
  if (!(med > 0.0)) throw degenerate_error("median pairwise distance is zero");
  return med;
}

// ---------------------------------------------------------------------------
// Gram matrices. Only the upper triangle is computed and mirrored, so the
// result is exactly symmetric with an exact unit diagonal.

inline mat subset_columns(const mat& x, const std::vector<int>& cols) {
  mat out(x.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    if (cols[j] < 0 || cols[j] >= x.cols()) throw input_error("subset column index out of range");
    out.col(static_cast<Eigen::Index>(j)) = x.col(cols[j]);
  }
  return out;
}

inline mat gram(const mat& x, const kernel_config& k) {
  const Eigen::Index n = x.rows();
  if (n < 1) throw input_error("gram needs at least one row");
  if (!(k.bandwidth > 0.0)) throw input_error("bandwidth must be positive");
  mat g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    g(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double v = gaussian_kernel_sq((x.row(i) - x.row(j)).squaredNorm(), k.bandwidth);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

inline mat gram_subset(const mat& x, const std::vector<int>& cols, const kernel_config& k) {
  if (cols.empty()) throw input_error("gram_subset needs at least one column");
  mat sub = subset_columns(x, cols);
  return gram(sub, k);
}

// queries x training sections; entry (q, i) = K(q_row, train_row)
inline mat cross_gram(const mat& q, const mat& train, const kernel_config& k) {
  if (q.cols() != train.cols()) throw input_error("cross_gram column mismatch");
  if (!(k.bandwidth > 0.0)) throw input_error("bandwidth must be positive");
  mat g(q.rows(), train.rows());
  for (Eigen::Index i = 0; i < q.rows(); ++i)
    for (Eigen::Index j = 0; j < train.rows(); ++j)
      g(i, j) = gaussian_kernel_sq((q.row(i) - train.row(j)).squaredNorm(), k.bandwidth);
  return g;
}

// ---------------------------------------------------------------------------
// Cholesky of K + lambda I with a one-shot jitter retry of 1e-10 tr(K)/n.
// The factor is kept, never the explicit inverse; ridge solves are triangular
// solves against it.

struct ridge_factor {
  Eigen::LLT<mat> llt;
  double lambda = 0.0;
  double jitter = 0.0;

  vec solve(const vec& b) const { return llt.solve(b); }
  mat solve(const mat& b) const { return llt.solve(b); }
};

inline ridge_factor make_ridge_factor(const mat& k, double lambda) {
  if (k.rows() != k.cols() || k.rows() < 1) throw input_error("ridge factor needs a square matrix");
  if (!(lambda > 0.0)) throw input_error("ridge lambda must be positive");
  ridge_factor f;
  f.lambda = lambda;
  mat a = k;
  a.diagonal().array() += lambda;
  f.llt.compute(a);
  if (f.llt.info() != Eigen::Success) {
    f.jitter = 1e-10 * k.trace() / static_cast<double>(k.rows());
    a.diagonal().array() += f.jitter;
    f.llt.compute(a);
    if (f.llt.info() != Eigen::Success) throw numeric_error("ridge factorization failed");
  }
  return f;
}

// Explicit W = (K + lambda I)^{-1}, symmetrized; kept out of hot paths.
inline mat ridge_inverse(const mat& k, double lambda) {
  ridge_factor f = make_ridge_factor(k, lambda);
  mat w = f.llt.solve(mat::Identity(k.rows(), k.cols()));
  w = 0.5 * (w + w.transpose()).eval();
  return w;
}

}  // namespace kernvim
