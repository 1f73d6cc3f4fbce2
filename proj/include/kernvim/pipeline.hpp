#pragma once

#include <algorithm>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kernvim/cme.hpp"
#include "kernvim/common.hpp"
#include "kernvim/estimator.hpp"
#include "kernvim/inference.hpp"
#include "kernvim/measures.hpp"
#include "kernvim/nuisance.hpp"

namespace kernvim {

enum class measure_kind { koi, loo, loco, shapley, shapley_mc };

inline const char* measure_name(measure_kind k) {
  switch (k) {
    case measure_kind::koi: return "koi";
    case measure_kind::loo: return "loo";
    case measure_kind::loco: return "loco";
    case measure_kind::shapley: return "shapley";
    case measure_kind::shapley_mc: return "shapley-mc";
  }
  return "?";
}

// A tested "variable" is a group of covariate columns; one-hot blocks enter
// as one group, numeric columns as singletons. Groups partition the columns.
struct variable_group {
  std::string name;
  std::vector<int> cols;
};

inline std::vector<variable_group> singleton_groups(const std::vector<std::string>& names) {
  std::vector<variable_group> g;
  g.reserve(names.size());
  for (std::size_t j = 0; j < names.size(); ++j)
    g.push_back({names[j], {static_cast<int>(j)}});
  return g;
}

struct analysis_options {
  psi_mode mode = psi_mode::cate;
  double alpha = 0.05;
  int bootstrap_reps = 4999;
  std::uint64_t seed = 1;
  double lambda = 0.0;     // <= 0: default_lambda rule
  double bandwidth = 0.0;  // <= 0: median heuristic on the standardized rows
  double clip = 0.01;
  int shapley_permutations = 40;
  int exact_limit = 12;
  bool per_subset_bandwidth = false;
  bool strict_split = false;       // nuisances + smoothers on one half, inference on the other
  bool plugin_varsigma = false;    // half-normal plug-in instead of the bootstrap quantile
  int threads = 1;
  std::optional<nuisance_predictions> external;
};

struct analysis_request {
  measure_kind kind = measure_kind::koi;
  std::vector<int> targets;              // player indices; empty = every group
  subset_mask subset = 0, baseline = 0;  // loco contrast
};

struct variable_report {
  std::string label;
  test_report test;
  double p_bh = 1.0;
};

struct analysis_result {
  std::string measure;
  std::vector<variable_report> reports;
  double bandwidth = 0.0, lambda = 0.0;
  std::int64_t n = 0;
};

struct band_table {
  std::string variable;
  vec grid_value;  // raw covariate values along the varied axis
  band_result band;
  double xi_hat = 0.0;
};

namespace detail {

inline double column_median(vec v) {
  const Eigen::Index n = v.size();
  std::sort(v.data(), v.data() + n);
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// One dataset prepared once (standardization, bandwidth, pseudo-outcomes),
// then queried for tests and bands under different measures.
class analysis_session {
 public:
  analysis_session(dataset d, std::vector<variable_group> groups, analysis_options opts)
      : data_(std::move(d)), groups_(std::move(groups)), opts_(std::move(opts)) {
    prepare();
  }

  int player_count() const { return static_cast<int>(groups_.size()); }
  double bandwidth() const { return kcfg_.bandwidth; }
  double lambda() const { return lambda_; }
  std::int64_t n_eff() const { return opts_.strict_split ? static_cast<std::int64_t>(rows_b_.size())
                                                         : data_.x.rows(); }
  const ivec& fold() const { return fold_; }
  const vec& psi() const { return psi_; }

  int player_index(const std::string& name) const {
    for (std::size_t j = 0; j < groups_.size(); ++j)
      if (groups_[j].name == name) return static_cast<int>(j);
    return -1;
  }

  std::string subset_label(subset_mask m) const {
    std::string out = "{";
    bool first = true;
    for (int p : mask_indices(m)) {
      if (!first) out += ",";
      out += groups_[static_cast<std::size_t>(p)].name;
      first = false;
    }
    return out + "}";
  }

  analysis_result run(const analysis_request& req) {
    analysis_result res;
    res.measure = measure_name(req.kind);
    res.bandwidth = kcfg_.bandwidth;
    res.lambda = lambda_;
    res.n = n_eff();
    std::vector<int> targets = resolve_targets(req);
    std::vector<double> pvals;
    for (std::size_t t = 0; t < targets.size(); ++t) {
      weight_vector omega = weights_for(req, targets[t], t);
      estimate_bundle bundle = assemble(omega);
      std::uint64_t boot_seed = mix_seed(opts_.seed, 0x7E57ull, t);
      bootstrap_summary bs = bootstrap_core(bundle.g_op, *bundle.est.k, bundle.est.c,
                                            bundle.est.n_eff, opts_.bootstrap_reps, opts_.alpha,
                                            boot_seed, opts_.threads);
      if (opts_.plugin_varsigma)
        bs.varsigma_hat = plugin_varsigma_core(bundle.g_op, *bundle.est.k, bundle.est.c,
                                               bundle.plug_mean, bundle.est.n_eff, opts_.alpha);
      variable_report vr;
      vr.label = req.kind == measure_kind::loco
                     ? subset_label(req.subset) + "-" + subset_label(req.baseline)
                     : groups_[static_cast<std::size_t>(targets[t])].name;
      vr.test = run_test(bundle.est, bs);
      pvals.push_back(vr.test.p_value);
      res.reports.push_back(std::move(vr));
    }
    std::vector<double> adj = bh_adjust(pvals);
    for (std::size_t t = 0; t < adj.size(); ++t) res.reports[t].p_bh = adj[t];
    return res;
  }

  // Sup-norm band along one numeric variable, the others pinned at their raw
  // medians.
  band_table band(const analysis_request& req, int grid_points = 100) {
    int target;
    if (req.kind == measure_kind::loco) {
      if (req.targets.size() != 1) throw input_error("band needs exactly one target variable");
      target = req.targets[0];
      if (target < 0 || target >= player_count())
        throw input_error("target variable out of range");
    } else {
      std::vector<int> targets = resolve_targets(req);
      if (targets.size() != 1) throw input_error("band needs exactly one target variable");
      target = targets[0];
    }
    const variable_group& grp = groups_[static_cast<std::size_t>(target)];
    if (grp.cols.size() != 1)
      throw input_error("band target must be a single numeric column");
    if (grid_points < 2) throw input_error("band grid needs at least two points");

    weight_vector omega = weights_for(req, target, 0);
    estimate_bundle bundle = assemble(omega);
    bootstrap_summary bs =
        bootstrap_core(bundle.g_op, *bundle.est.k, bundle.est.c, bundle.est.n_eff,
                       opts_.bootstrap_reps, opts_.alpha, mix_seed(opts_.seed, 0x7E57ull, 0),
                       opts_.threads);

    int axis = grp.cols[0];
    mat q_raw(grid_points, data_.x.cols());
    for (Eigen::Index j = 0; j < data_.x.cols(); ++j)
      q_raw.col(j).setConstant(detail::column_median(data_.x.col(j)));
    double lo = data_.x.col(axis).minCoeff(), hi = data_.x.col(axis).maxCoeff();
    band_table out;
    out.variable = grp.name;
    out.grid_value.resize(grid_points);
    for (int i = 0; i < grid_points; ++i) {
      double v = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(grid_points - 1);
      out.grid_value[i] = v;
      q_raw(i, axis) = v;
    }
    mat cross = cross_gram(std_.apply(q_raw), train_rows(), kcfg_);
    vec values = evaluate(bundle.est, cross);
    out.band = confidence_band(values, bs.xi_hat, bundle.est.n_eff, kcfg_.sup_value);
    out.xi_hat = bs.xi_hat;
    return out;
  }

 private:
  struct estimate_bundle {
    embedded_estimate est;
    mat g_op;
    double plug_mean = 0.0;
  };

  void prepare() {
    validate(data_);
    validate_groups();
    if (!(opts_.alpha > 0.0 && opts_.alpha < 1.0)) throw input_error("alpha must lie in (0, 1)");
    if (opts_.bootstrap_reps < 1) throw input_error("bootstrap count must be positive");
    if (opts_.threads < 1) throw input_error("thread count must be positive");

    std_ = standardizer::fit(data_.x);
    x_std_ = std_.apply(data_.x);
    kcfg_.bandwidth =
        opts_.bandwidth > 0.0 ? opts_.bandwidth : median_pairwise_distance(x_std_);
    kcfg_.sup_value = 1.0;

    const int d = static_cast<int>(data_.x.cols());
    if (opts_.strict_split) {
      fold_ = make_folds(data_.x.rows(), opts_.seed);
      for (Eigen::Index i = 0; i < fold_.size(); ++i)
        (fold_[i] == 1 ? rows_a_ : rows_b_).push_back(static_cast<int>(i));
      x_std_a_ = detail::take_rows(x_std_, rows_a_);
      x_std_b_ = detail::take_rows(x_std_, rows_b_);
      x_union_.resize(x_std_.rows(), x_std_.cols());
      x_union_ << x_std_a_, x_std_b_;
      lambda_ = opts_.lambda > 0.0
                    ? opts_.lambda
                    : default_lambda(static_cast<std::int64_t>(rows_a_.size()), d);
      strict_pseudo();
      k_ = std::make_shared<const mat>(gram(x_union_, kcfg_));
    } else {
      lambda_ = opts_.lambda > 0.0 ? opts_.lambda : default_lambda(data_.x.rows(), d);
      crossfit_result cf = crossfit_pseudo(data_, x_std_, opts_.mode, kcfg_, opts_.seed,
                                           opts_.clip, opts_.external);
      psi_ = std::move(cf.psi);
      fold_ = std::move(cf.fold);
      k_ = std::make_shared<const mat>(gram(x_std_, kcfg_));
    }
  }

  void validate_groups() {
    if (groups_.empty()) throw input_error("no covariate groups");
    if (groups_.size() > static_cast<std::size_t>(max_subset_vars))
      throw input_error("too many covariate groups");
    std::vector<int> seen(static_cast<std::size_t>(data_.x.cols()), 0);
    for (const auto& g : groups_) {
      if (g.name.empty() || g.cols.empty()) throw input_error("malformed covariate group");
      for (int c : g.cols) {
        if (c < 0 || c >= data_.x.cols()) throw input_error("group column out of range");
        if (seen[static_cast<std::size_t>(c)]++) throw input_error("group columns overlap");
      }
    }
    for (int c : seen)
      if (!c) throw input_error("covariate column not covered by any group");
    for (std::size_t i = 0; i < groups_.size(); ++i)
      for (std::size_t j = i + 1; j < groups_.size(); ++j)
        if (groups_[i].name == groups_[j].name) throw input_error("duplicate group name");
  }

  // Strict split: nuisances, CATE and embedding smoothers come from half A;
  // the one-step average, Gram and bootstrap resampling live on half B.
  void strict_pseudo() {
    if (opts_.mode == psi_mode::prediction) {
      psi_a_ = detail::take(data_.y, rows_a_);
      psi_ = detail::take(data_.y, rows_b_);
      return;
    }
    nuisance_predictions preds;
    if (opts_.external) {
      preds = *opts_.external;
      if (preds.g1.size() != data_.x.rows())
        throw input_error("external nuisance prediction length mismatch");
    } else {
      const Eigen::Index n = data_.x.rows();
      preds = nuisance_predictions{vec::Zero(n), vec::Zero(n), vec::Zero(n)};
      std::vector<int> all(static_cast<std::size_t>(n));
      std::iota(all.begin(), all.end(), 0);
      fit_predict_nuisances(data_, x_std_, rows_a_, all, kcfg_, 1e-3, preds);
    }
    vec psi_full = pseudo_outcomes(data_, preds, opts_.mode, opts_.clip);
    psi_a_ = detail::take(psi_full, rows_a_);
    psi_ = detail::take(psi_full, rows_b_);
  }

  std::vector<int> mask_columns(subset_mask m) const {
    std::vector<int> cols;
    for (int p : mask_indices(m)) {
      const auto& gc = groups_[static_cast<std::size_t>(p)].cols;
      cols.insert(cols.end(), gc.begin(), gc.end());
    }
    std::sort(cols.begin(), cols.end());
    return cols;
  }

  kernel_config subset_kcfg(const std::vector<int>& cols, const mat& rows) const {
    if (!opts_.per_subset_bandwidth || cols.empty()) return kcfg_;
    kernel_config k = kcfg_;
    k.bandwidth = median_pairwise_distance(subset_columns(rows, cols));
    return k;
  }

  std::vector<int> resolve_targets(const analysis_request& req) const {
    if (req.kind == measure_kind::loco) return {0};
    std::vector<int> t = req.targets;
    if (t.empty()) {
      t.resize(groups_.size());
      std::iota(t.begin(), t.end(), 0);
    }
    for (int p : t)
      if (p < 0 || p >= player_count()) throw input_error("target variable out of range");
    return t;
  }

  weight_vector weights_for(const analysis_request& req, int target, std::size_t t_index) const {
    const int d = player_count();
    switch (req.kind) {
      case measure_kind::koi: return koi_weights(d, target);
      case measure_kind::loo: return loo_weights(d, target);
      case measure_kind::loco: return loco_weights(d, req.subset, req.baseline);
      case measure_kind::shapley: return shapley_exact_weights(d, target, opts_.exact_limit);
      case measure_kind::shapley_mc:
        return shapley_mc_weights(d, target, opts_.shapley_permutations,
                                  mix_seed(opts_.seed, 0x3C9Dull, t_index));
    }
    throw input_error("unknown measure");
  }

  const mat& train_rows() const { return opts_.strict_split ? x_union_ : x_std_; }

  const subset_components& pooled_components(subset_mask m) {
    auto it = pooled_cache_.find(m);
    if (it != pooled_cache_.end()) return it->second;
    std::vector<int> cols = mask_columns(m);
    auto model = std::make_shared<const cme_model>(
        fit_cme(x_std_, cols, subset_kcfg(cols, x_std_), lambda_));
    cate_fit fit = fit_cate(*model, psi_);
    return pooled_cache_.emplace(m, build_components(model, fit, psi_, m)).first->second;
  }

  struct strict_parts {
    vec alpha, beta;  // over half B
    mat coef;         // n_A x n_B embedding coefficients at B's points
  };

  const strict_parts& strict_components(subset_mask m) {
    auto it = strict_cache_.find(m);
    if (it != strict_cache_.end()) return it->second;
    std::vector<int> cols = mask_columns(m);
    cme_model model = fit_cme(x_std_a_, cols, subset_kcfg(cols, x_std_a_), lambda_);
    cate_fit fit = fit_cate(model, psi_a_);
    strict_parts p;
    p.alpha = predict_cate(model, fit, x_std_b_);
    p.beta = psi_ - p.alpha;
    p.coef = model.coefficients(model.empty_subset() ? x_std_b_
                                                     : subset_columns(x_std_b_, cols));
    return strict_cache_.emplace(m, std::move(p)).first->second;
  }

  estimate_bundle assemble(const weight_vector& omega) {
    estimate_bundle b;
    if (!opts_.strict_split) {
      const Eigen::Index n = x_std_.rows();
      component_map comp;
      for (subset_mask m : omega.masks()) comp.emplace(m, pooled_components(m));
      b.est = combine(comp, omega, k_);
      b.g_op = bootstrap_operator(comp, omega);
      if (b.g_op.rows() == 0) b.g_op = mat::Zero(n, n);
      vec alpha_mix = vec::Zero(n);
      for (const auto& [m, sc] : comp) alpha_mix += omega.value(m) * sc.alpha;
      b.plug_mean = alpha_mix.dot(*k_ * b.est.c) / static_cast<double>(n);
      return b;
    }
    const auto n_a = static_cast<Eigen::Index>(rows_a_.size());
    const auto n_b = static_cast<Eigen::Index>(rows_b_.size());
    b.g_op = mat::Zero(n_a + n_b, n_b);
    for (subset_mask m : omega.masks()) {
      const strict_parts& p = strict_components(m);
      double w = omega.value(m);
      b.g_op.topRows(n_a) += w * p.coef * mat(p.beta.asDiagonal());
      b.g_op.bottomRows(n_b).diagonal() += w * p.alpha;
    }
    b.est.c = b.g_op * vec::Ones(n_b) / static_cast<double>(n_b);
    b.est.k = k_;
    b.est.n_eff = n_b;
    vec alpha_mix = vec::Zero(n_b);
    for (subset_mask m : omega.masks()) alpha_mix += omega.value(m) * strict_components(m).alpha;
    b.plug_mean = alpha_mix.dot((*k_ * b.est.c).tail(n_b)) / static_cast<double>(n_b);
    return b;
  }

  dataset data_;
  std::vector<variable_group> groups_;
  analysis_options opts_;
  standardizer std_;
  mat x_std_;
  kernel_config kcfg_;
  double lambda_ = 0.0;
  vec psi_;    // pooled pseudo-outcomes, or half-B ones under strict split
  ivec fold_;
  std::shared_ptr<const mat> k_;
  std::vector<int> rows_a_, rows_b_;
  mat x_std_a_, x_std_b_, x_union_;
  vec psi_a_;
  std::map<subset_mask, subset_components> pooled_cache_;
  std::map<subset_mask, strict_parts> strict_cache_;
};

}  // namespace kernvim
