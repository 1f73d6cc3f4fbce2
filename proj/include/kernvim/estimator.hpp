#pragma once

#include <map>
#include <memory>
#include <utility>

#include "kernvim/cme.hpp"
#include "kernvim/common.hpp"
#include "kernvim/measures.hpp"

namespace kernvim {

// One-step ingredients for a single subset V: in-sample CATE predictions
// alpha, residuals beta = psi - alpha, and the smoothing action
// W_V K_V applied through the cached Cholesky factor. The empty subset
// smooths to the mean.
struct subset_components {
  subset_mask players = 0;
  std::shared_ptr<const cme_model> model;
  vec alpha, beta;

  std::int64_t n() const { return alpha.size(); }

  vec smooth(const vec& b) const {
    if (!model || model->empty_subset()) return vec::Constant(b.size(), b.mean());
    return model->k_v * model->factor.solve(b);
  }

  // M_V diag(b) with M_V = W_V K_V, materialized for the resampling operator.
  mat smooth_diag(const vec& b) const {
    if (!model || model->empty_subset())
      return (vec::Constant(b.size(), 1.0 / static_cast<double>(b.size()))) * b.transpose();
    return model->k_v * model->factor.solve(mat(b.asDiagonal()));
  }
};

inline subset_components build_components(std::shared_ptr<const cme_model> model,
                                          const cate_fit& fit, const vec& psi,
                                          subset_mask players) {
  if (!model) throw input_error("build_components needs a model");
  if (psi.size() != model->n || fit.alpha.size() != model->n)
    throw input_error("component length mismatch");
  subset_components c;
  c.players = players;
  c.model = std::move(model);
  c.alpha = fit.alpha;
  c.beta = psi - fit.alpha;
  return c;
}

using component_map = std::map<subset_mask, subset_components>;

// Embedded estimate as a coefficient vector over the kernel sections at the
// n training points: gamma_hat = sum_l c_l K(., X_l).
struct embedded_estimate {
  vec c;
  std::shared_ptr<const mat> k;  // Gram over the training sections
  std::int64_t n_eff = 0;        // resampled sample size behind the estimate
};

// c = (1/n) sum_V omega_V (alpha_V + W_V K_V beta_V)
inline embedded_estimate combine(const component_map& comp, const weight_vector& omega,
                                 std::shared_ptr<const mat> k) {
  if (!k || k->rows() != k->cols() || k->rows() < 1) throw input_error("combine needs a square Gram");
  const Eigen::Index n = k->rows();
  embedded_estimate est;
  est.c = vec::Zero(n);
  est.k = std::move(k);
  est.n_eff = n;
  for (const auto& [mask, w] : omega.entries) {
    auto it = comp.find(mask);
    if (it == comp.end()) throw input_error("missing components for a weighted subset");
    const subset_components& sc = it->second;
    if (sc.n() != n) throw input_error("component size mismatch");
    est.c += w.value() * (sc.alpha + sc.smooth(sc.beta));
  }
  est.c /= static_cast<double>(n);
  return est;
}

// gamma_hat at query points given their kernel sections against the training
// rows (queries x n).
inline vec evaluate(const embedded_estimate& est, const mat& cross_sections) {
  if (cross_sections.cols() != est.c.size()) throw input_error("evaluate dimension mismatch");
  return cross_sections * est.c;
}

// Squared RKHS norm c^T K c; tiny negative values from rounding are clamped,
// anything below -1e-12 is a numerical failure.
inline double clamp_norm_sq(double v) {
  if (v < -1e-12) throw numeric_error("squared norm fell below the rounding tolerance");
  return v < 0.0 ? 0.0 : v;
}

inline double rkhs_norm_sq(const embedded_estimate& est) {
  return clamp_norm_sq(est.c.dot(*est.k * est.c));
}

}  // namespace kernvim
