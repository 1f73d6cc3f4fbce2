#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "kernvim/common.hpp"
#include "kernvim/nuisance.hpp"
#include "kernvim/pipeline.hpp"

namespace kernvim {

// Synthetic designs. Covariates come from a Gaussian copula with
// equicorrelation sigma and uniform(0, 1) marginals; treatment follows a
// logistic rule; outcomes are Gaussian around a fixed baseline plus the
// treated effect.
enum class experiment_id { exp1_d5, exp2_d10, exp3_d3 };
enum class cate_shape { smooth, rough };

inline int experiment_dim(experiment_id e) {
  switch (e) {
    case experiment_id::exp1_d5: return 5;
    case experiment_id::exp2_d10: return 10;
    case experiment_id::exp3_d3: return 3;
  }
  return 0;
}

inline const char* experiment_name(experiment_id e) {
  switch (e) {
    case experiment_id::exp1_d5: return "exp1";
    case experiment_id::exp2_d10: return "exp2";
    case experiment_id::exp3_d3: return "exp3";
  }
  return "?";
}

inline const char* shape_name(cate_shape s) {
  return s == cate_shape::smooth ? "smooth" : "rough";
}

struct dgp_config {
  experiment_id experiment = experiment_id::exp3_d3;
  std::int64_t n = 500;
  double sigma = 0.0;  // copula equicorrelation, in [0, 1)
  double beta = 0.0;   // effect size on the target component
  cate_shape shape = cate_shape::smooth;
  std::uint64_t seed = 1;
};

inline double expit(double t) { return 1.0 / (1.0 + std::exp(-t)); }

inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

inline double cate_g(cate_shape s, double x1) {
  return s == cate_shape::smooth ? x1 : std::sin(5.0 * M_PI * x1);
}

// tau(x): beta g(x1), plus the fixed secondary term in the five- and
// ten-dimensional designs.
inline double true_cate(const dgp_config& cfg, const vec& x) {
  double tau = cfg.beta * cate_g(cfg.shape, x[0]);
  if (cfg.experiment != experiment_id::exp3_d3)
    tau += 0.2 * (x[1] * x[1] + x[2] - 2.0 * x[2] * x[3] + 4.0 * x[4]);
  return tau;
}

inline double true_propensity(const vec& x) { return expit(-0.4 * x[0] + 0.1 * x[0] * x[1]); }

inline double baseline_mean(const vec& x) {
  return x[0] * x[1] + 2.0 * x[1] * x[1] - x[0];
}

// Row i consumes its own derived sub-streams, so designs sharing a covariate
// prefix (exp1 vs exp2) produce identical leading columns under one seed.
inline dataset sample_dgp(const dgp_config& cfg) {
  if (cfg.n < 1) throw input_error("sample size must be positive");
  if (!(cfg.sigma >= 0.0 && cfg.sigma < 1.0)) throw input_error("sigma must lie in [0, 1)");
  const int d = experiment_dim(cfg.experiment);
  dataset out;
  out.x.resize(cfg.n, d);
  out.y.resize(cfg.n);
  out.a.resize(cfg.n);
  out.names.resize(static_cast<std::size_t>(d));
  for (int j = 0; j < d; ++j) out.names[static_cast<std::size_t>(j)] = "X" + std::to_string(j + 1);

  const double shared = std::sqrt(cfg.sigma), own = std::sqrt(1.0 - cfg.sigma);
  for (std::int64_t i = 0; i < cfg.n; ++i) {
    rng_stream gx = rng_stream::derive(cfg.seed, 0xD6ull, static_cast<std::uint64_t>(i));
    double z0 = gx.normal();
    for (int j = 0; j < d; ++j)
      out.x(i, j) = normal_cdf(own * gx.normal() + shared * z0);
    vec row = out.x.row(i).transpose();
    rng_stream ga = rng_stream::derive(cfg.seed, 0xA7ull, static_cast<std::uint64_t>(i));
    out.a[i] = ga.bernoulli(true_propensity(row)) ? 1 : 0;
    rng_stream gy = rng_stream::derive(cfg.seed, 0xE5ull, static_cast<std::uint64_t>(i));
    out.y[i] = baseline_mean(row) + static_cast<double>(out.a[i]) * true_cate(cfg, row) +
               gy.normal();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Monte Carlo study over a grid of designs: per cell, repeated draws are
// pushed through the full pipeline (crossfit psi, subset fits, combination,
// bootstrap, test) and summarized.

struct mc_config {
  experiment_id experiment = experiment_id::exp3_d3;
  std::vector<measure_kind> measures{measure_kind::koi};
  std::vector<std::int64_t> ns{500};
  std::vector<double> sigmas{0.0};
  std::vector<double> betas{0.0};
  cate_shape shape = cate_shape::smooth;
  int reps = 100;
  std::uint64_t seed = 1;
  std::optional<double> oracle_norm;  // triangle-CI coverage target when known
  analysis_options opts;              // alpha, bootstrap_reps, lambda, threads, ...
  int target = 0;                     // tested variable (player index)
  double max_failure_rate = 0.05;
};

struct mc_row {
  std::string measure;
  std::int64_t n = 0;
  double sigma = 0.0, beta = 0.0;
  std::string alternative;
  int reps = 0;
  double reject_rate = 0.0, mean_norm = 0.0;
  std::optional<double> coverage;
  int failures = 0;
};

struct mc_rep_outcome {
  bool ok = false;
  bool reject = false;
  double norm = 0.0;
  bool covered = false;
};

inline std::vector<mc_row> monte_carlo(const mc_config& cfg) {
  if (cfg.reps < 1) throw input_error("rep count must be positive");
  std::vector<mc_row> rows;
  std::size_t cell = 0;
  for (measure_kind mk : cfg.measures)
    for (std::int64_t n : cfg.ns)
      for (double sigma : cfg.sigmas)
        for (double beta : cfg.betas) {
          ++cell;
          std::vector<mc_rep_outcome> outcomes(static_cast<std::size_t>(cfg.reps));
          parallel_for(static_cast<std::size_t>(cfg.reps), cfg.opts.threads, [&](std::size_t r) {
            dgp_config dgp;
            dgp.experiment = cfg.experiment;
            dgp.n = n;
            dgp.sigma = sigma;
            dgp.beta = beta;
            dgp.shape = cfg.shape;
            dgp.seed = mix_seed(cfg.seed, cell, r);
            mc_rep_outcome& out = outcomes[r];
            try {
              dataset d = sample_dgp(dgp);
              std::vector<variable_group> groups = singleton_groups(d.names);
              analysis_options opts = cfg.opts;
              opts.threads = 1;
              opts.seed = mix_seed(dgp.seed, 0xA11Aull);
              analysis_session session(std::move(d), std::move(groups), opts);
              analysis_request req;
              req.kind = mk;
              req.targets = {cfg.target};
              analysis_result res = session.run(req);
              const test_report& t = res.reports.at(0).test;
              out.ok = true;
              out.reject = t.reject;
              out.norm = t.norm;
              if (cfg.oracle_norm)
                out.covered = t.ci_triangle[0] <= *cfg.oracle_norm &&
                              *cfg.oracle_norm <= t.ci_triangle[1];
            } catch (const error&) {
              out.ok = false;
            }
          });
          mc_row row;
          row.measure = measure_name(mk);
          row.n = n;
          row.sigma = sigma;
          row.beta = beta;
          row.alternative = shape_name(cfg.shape);
          row.reps = cfg.reps;
          int ok = 0, rejects = 0, covered = 0;
          double norm_sum = 0.0;
          for (const auto& o : outcomes) {
            if (!o.ok) {
              ++row.failures;
              continue;
            }
            ++ok;
            rejects += o.reject ? 1 : 0;
            covered += o.covered ? 1 : 0;
            norm_sum += o.norm;
          }
          if (static_cast<double>(row.failures) >
              cfg.max_failure_rate * static_cast<double>(cfg.reps))
            throw numeric_error("Monte Carlo cell exceeded the failure budget");
          row.reject_rate = ok ? static_cast<double>(rejects) / ok : 0.0;
          row.mean_norm = ok ? norm_sum / ok : 0.0;
          if (cfg.oracle_norm && ok) row.coverage = static_cast<double>(covered) / ok;
          rows.push_back(std::move(row));
        }
  return rows;
}

}  // namespace kernvim
