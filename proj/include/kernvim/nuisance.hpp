#pragma once

#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "kernvim/common.hpp"
#include "kernvim/kernel.hpp"

namespace kernvim {

struct dataset {
  mat x;                            // n x d covariates
  vec y;                            // outcomes
  ivec a;                           // binary treatment
  std::vector<std::string> names;   // covariate names, size d
};

inline void validate(const dataset& d) {
  const Eigen::Index n = d.x.rows();
  if (n < 2) throw input_error("dataset needs at least two rows");
  if (d.x.cols() < 1) throw input_error("dataset needs at least one covariate");
  if (d.y.size() != n || d.a.size() != n) throw input_error("dataset column lengths differ");
  if (!d.names.empty() && static_cast<Eigen::Index>(d.names.size()) != d.x.cols())
    throw input_error("covariate name count mismatch");
  if (!d.x.allFinite() || !d.y.allFinite()) throw input_error("dataset contains non-finite values");
  for (Eigen::Index i = 0; i < n; ++i)
    if (d.a[i] != 0 && d.a[i] != 1) throw input_error("treatment must be 0/1");
}

enum class psi_mode { cate, prediction };

// Smoothing strength for kernel ridge fits: sqrt(log n / n) up to five
// covariates, log(n)^2 / sqrt(n) above.
inline double default_lambda(std::int64_t n, int d) {
  if (n < 2) throw degenerate_error("lambda rule needs n >= 2");
  double ln = std::log(static_cast<double>(n));
  return d <= 5 ? std::sqrt(ln / static_cast<double>(n))
                : ln * ln / std::sqrt(static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Ridge-penalized logistic regression, Newton iterations. The intercept is
// unpenalized; slopes carry `penalty`. Probabilities are returned unclipped.

struct logistic_model {
  vec coef;  // [intercept, slopes]

  vec predict(const mat& x) const {
    if (x.cols() + 1 != coef.size()) throw input_error("logistic predict dimension mismatch");
    vec eta = (x * coef.tail(coef.size() - 1)).array() + coef[0];
    return eta.unaryExpr([](double t) {
      t = std::clamp(t, -30.0, 30.0);
      return 1.0 / (1.0 + std::exp(-t));
    });
  }
};

inline logistic_model fit_logistic_ridge(const mat& x, const ivec& a, double penalty = 1e-3,
                                         double tol = 1e-8, int max_iter = 100) {
  const Eigen::Index n = x.rows(), d = x.cols();
  if (a.size() != n) throw input_error("logistic fit length mismatch");
  mat z(n, d + 1);
  z.col(0).setOnes();
  z.rightCols(d) = x;
  vec theta = vec::Zero(d + 1);
  vec ad = a.cast<double>();
  for (int it = 0; it < max_iter; ++it) {
    vec eta = (z * theta).array().min(30.0).max(-30.0);
    vec p = eta.unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
    vec grad = z.transpose() * (p - ad);
    grad.tail(d) += 2.0 * penalty * theta.tail(d);
    mat h = z.transpose() * (p.array() * (1.0 - p.array())).matrix().asDiagonal() * z;
    h.diagonal().tail(d).array() += 2.0 * penalty;
    h.diagonal().array() += 1e-12;
    vec step = h.ldlt().solve(grad);
    theta -= step;
    if (step.norm() <= tol * (1.0 + theta.norm())) break;
  }
  return logistic_model{theta};
}

// ---------------------------------------------------------------------------
// Kernel ridge regression on the rows handed in (already standardized).

struct krr_model {
  mat train;
  kernel_config kcfg;
  vec dual;

  vec predict(const mat& q) const { return cross_gram(q, train, kcfg) * dual; }
};

inline krr_model fit_krr(mat train, const vec& y, const kernel_config& kcfg, double lambda) {
  if (train.rows() != y.size() || train.rows() < 1) throw input_error("krr fit length mismatch");
  mat k = gram(train, kcfg);
  ridge_factor f = make_ridge_factor(k, lambda);
  return krr_model{std::move(train), kcfg, f.solve(y)};
}

// ---------------------------------------------------------------------------
// Twofold split: a seeded uniform permutation halved, fold labels in {1, 2},
// sizes differing by at most one.

inline ivec make_folds(std::int64_t n, std::uint64_t seed) {
  if (n < 2) throw degenerate_error("fold split needs n >= 2");
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  rng_stream g = rng_stream::derive(seed, 0xF01Dull);
  g.shuffle(perm);
  ivec fold(n);
  std::int64_t half = (n + 1) / 2;
  for (std::int64_t i = 0; i < n; ++i) fold[perm[static_cast<std::size_t>(i)]] = i < half ? 1 : 2;
  return fold;
}

struct nuisance_predictions {
  vec g1;   // P(A=1 | X)
  vec mu1;  // E[Y | A=1, X]
  vec mu0;  // E[Y | A=0, X]
};

namespace detail {

inline std::vector<int> rows_where(const ivec& v, int value, bool negate) {
  std::vector<int> idx;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if ((v[i] == value) != negate) idx.push_back(static_cast<int>(i));
  return idx;
}

inline mat take_rows(const mat& x, const std::vector<int>& idx) {
  mat out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

inline vec take(const vec& v, const std::vector<int>& idx) {
  vec out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

inline ivec take(const ivec& v, const std::vector<int>& idx) {
  ivec out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

}  // namespace detail

// Nuisance models trained on `train` row indices, predictions filled for
// `predict` row indices. Both arms must appear in the training slice.
inline void fit_predict_nuisances(const dataset& d, const mat& x_std,
                                  const std::vector<int>& train, const std::vector<int>& predict,
                                  const kernel_config& kcfg, double logistic_penalty,
                                  nuisance_predictions& out) {
  ivec a_tr = detail::take(d.a, train);
  int n1 = a_tr.sum();
  if (n1 == 0 || n1 == a_tr.size())
    throw degenerate_error("a nuisance training slice contains a single arm");

  mat x_tr = detail::take_rows(x_std, train);
  mat x_pr = detail::take_rows(x_std, predict);
  vec y_tr = detail::take(d.y, train);

  logistic_model prop = fit_logistic_ridge(x_tr, a_tr, logistic_penalty);
  vec g = prop.predict(x_pr);

  const int dim = static_cast<int>(d.x.cols());
  for (int arm = 0; arm <= 1; ++arm) {
    std::vector<int> arm_rows;
    for (Eigen::Index i = 0; i < a_tr.size(); ++i)
      if (a_tr[i] == arm) arm_rows.push_back(static_cast<int>(i));
    mat x_arm = detail::take_rows(x_tr, arm_rows);
    vec y_arm = detail::take(y_tr, arm_rows);
    double lambda = default_lambda(static_cast<std::int64_t>(arm_rows.size()), dim);
    krr_model reg = fit_krr(std::move(x_arm), y_arm, kcfg, lambda);
    vec mu = reg.predict(x_pr);
    for (std::size_t i = 0; i < predict.size(); ++i) {
      double v = mu[static_cast<Eigen::Index>(i)];
      (arm == 1 ? out.mu1 : out.mu0)[predict[i]] = v;
    }
  }
  for (std::size_t i = 0; i < predict.size(); ++i) out.g1[predict[i]] = g[static_cast<Eigen::Index>(i)];
}

// Cross-fitted nuisances: each fold is predicted by models trained on its
// complement.
inline nuisance_predictions crossfit_nuisances(const dataset& d, const mat& x_std, const ivec& fold,
                                               const kernel_config& kcfg,
                                               double logistic_penalty = 1e-3) {
  const Eigen::Index n = d.x.rows();
  nuisance_predictions out{vec::Zero(n), vec::Zero(n), vec::Zero(n)};
  for (int k = 1; k <= 2; ++k) {
    std::vector<int> train = detail::rows_where(fold, k, true);
    std::vector<int> pred = detail::rows_where(fold, k, false);
    if (train.empty() || pred.empty()) throw degenerate_error("empty fold");
    fit_predict_nuisances(d, x_std, train, pred, kcfg, logistic_penalty, out);
  }
  return out;
}

// AIPW pseudo-outcome with arm-specific inverse weighting:
//   psi = a/g1 (y - mu1) - (1-a)/(1-g1) (y - mu0) + mu1 - mu0.
// Propensities are clipped into [clip, 1-clip] first. Prediction mode
// substitutes the outcome itself.
inline vec pseudo_outcomes(const dataset& d, const nuisance_predictions& p, psi_mode mode,
                           double clip = 0.01) {
  if (mode == psi_mode::prediction) return d.y;
  const Eigen::Index n = d.x.rows();
  if (p.g1.size() != n || p.mu1.size() != n || p.mu0.size() != n)
    throw input_error("nuisance prediction length mismatch");
  if (!(clip > 0.0 && clip < 0.5)) throw input_error("clip must lie in (0, 0.5)");
  if (!p.g1.allFinite() || !p.mu1.allFinite() || !p.mu0.allFinite())
    throw input_error("nuisance predictions contain non-finite values");
  vec psi(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    double g = std::clamp(p.g1[i], clip, 1.0 - clip);
    double ai = static_cast<double>(d.a[i]);
    psi[i] = ai / g * (d.y[i] - p.mu1[i]) - (1.0 - ai) / (1.0 - g) * (d.y[i] - p.mu0[i]) +
             p.mu1[i] - p.mu0[i];
  }
  return psi;
}

struct crossfit_result {
  vec psi;
  ivec fold;
  nuisance_predictions preds;
};

// Fold split + nuisance cross-fit + pseudo-outcomes in one pass. External
// predictions (aligned row-for-row) bypass the built-in learners; prediction
// mode needs neither.
inline crossfit_result crossfit_pseudo(const dataset& d, const mat& x_std, psi_mode mode,
                                       const kernel_config& kcfg, std::uint64_t seed,
                                       double clip = 0.01,
                                       const std::optional<nuisance_predictions>& external = {}) {
  validate(d);
  crossfit_result r;
  r.fold = make_folds(d.x.rows(), seed);
  if (mode == psi_mode::prediction) {
    r.psi = d.y;
    return r;
  }
  if (external) {
    r.preds = *external;
  } else {
    r.preds = crossfit_nuisances(d, x_std, r.fold, kcfg);
  }
  r.psi = pseudo_outcomes(d, r.preds, mode, clip);
  return r;
}

}  // namespace kernvim
