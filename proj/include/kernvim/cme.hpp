#pragma once

#include <utility>
#include <vector>

#include "kernvim/common.hpp"
#include "kernvim/kernel.hpp"

namespace kernvim {

// Conditional mean embedding smoother for one covariate subset. For a
// nonempty subset V the embedding at a training point is
//   k_V(x_V)^T (K_V + lambda I)^{-1} k_X(.)
// and only the Cholesky factor of K_V + lambda I is kept. The empty subset is
// the marginal mean embedding with fixed uniform coefficients 1/n.
struct cme_model {
  std::vector<int> cols;  // empty = marginal mean embedding
  double lambda = 0.0;
  std::int64_t n = 0;
  mat train_cols;         // n x |V| training rows restricted to the subset
  mat k_v;                // Gram on the subset columns
  kernel_config kcfg;
  ridge_factor factor;    // of k_v + lambda I

  bool empty_subset() const { return cols.empty(); }

  // Embedding coefficients over the training sections for query rows
  // (already restricted to the subset columns); column q holds the
  // coefficients of the embedding at query q.
  mat coefficients(const mat& q_cols) const {
    if (empty_subset()) return mat::Constant(n, q_cols.rows(), 1.0 / static_cast<double>(n));
    return factor.solve(mat(cross_gram(q_cols, train_cols, kcfg).transpose()));
  }

  // Explicit (K_V + lambda I)^{-1}; diagnostic use only.
  mat ridge_inverse_matrix() const {
    if (empty_subset()) throw input_error("empty subset has no ridge inverse");
    return kernvim::ridge_inverse(k_v, lambda);
  }
};

inline cme_model fit_cme(const mat& x_std, std::vector<int> cols, const kernel_config& kcfg,
                         double lambda) {
  cme_model m;
  m.cols = std::move(cols);
  m.lambda = lambda;
  m.n = x_std.rows();
  m.kcfg = kcfg;
  if (m.n < 1) throw input_error("cme fit needs at least one row");
  if (!m.cols.empty()) {
    m.train_cols = subset_columns(x_std, m.cols);
    m.k_v = gram(m.train_cols, kcfg);
    m.factor = make_ridge_factor(m.k_v, lambda);
  }
  return m;
}

// Kernel ridge fit of the pseudo-outcomes on the subset covariates:
//   alpha = K_V (K_V + lambda I)^{-1} psi
// in sample, with dual weights for out-of-sample prediction. The empty
// subset collapses to the plain mean.
struct cate_fit {
  vec alpha;
  vec dual;          // empty for the empty subset
  double mean = 0.0;
};

inline cate_fit fit_cate(const cme_model& m, const vec& psi) {
  if (psi.size() != m.n) throw input_error("cate fit length mismatch");
  cate_fit f;
  if (m.empty_subset()) {
    f.mean = psi.mean();
    f.alpha = vec::Constant(m.n, f.mean);
    return f;
  }
  f.dual = m.factor.solve(psi);
  f.alpha = m.k_v * f.dual;
  return f;
}

// CATE prediction at query rows given in full covariate coordinates; the
// model slices out its own columns.
inline vec predict_cate(const cme_model& m, const cate_fit& f, const mat& q_full) {
  if (m.empty_subset()) return vec::Constant(q_full.rows(), f.mean);
  mat q_cols = subset_columns(q_full, m.cols);
  return cross_gram(q_cols, m.train_cols, m.kcfg) * f.dual;
}

}  // namespace kernvim
