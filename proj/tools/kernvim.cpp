// kernvim: local variable-importance tests for treatment effect heterogeneity.
//
// Subcommands:
//   test      run a global no-importance test per target variable (JSON report)
//   band      sup-norm confidence band along one covariate axis (CSV)
//   simulate  Monte Carlo study on the built-in synthetic designs (CSV/JSON)

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "kernvim/kernvim.hpp"

namespace {

using ojson = nlohmann::ordered_json;

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::stringstream ss(s);
  while (std::getline(ss, cur, ',')) {
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

kernvim::measure_kind parse_measure(const std::string& s) {
  if (s == "koi") return kernvim::measure_kind::koi;
  if (s == "loo") return kernvim::measure_kind::loo;
  if (s == "loco") return kernvim::measure_kind::loco;
  if (s == "shapley") return kernvim::measure_kind::shapley;
  if (s == "shapley-mc") return kernvim::measure_kind::shapley_mc;
  throw kernvim::input_error("unknown measure '" + s + "'");
}

kernvim::psi_mode parse_mode(const std::string& s) {
  if (s == "cate") return kernvim::psi_mode::cate;
  if (s == "prediction") return kernvim::psi_mode::prediction;
  throw kernvim::input_error("unknown mode '" + s + "'");
}

std::int64_t parse_int(const std::string& s) {
  try {
    std::size_t pos = 0;
    auto v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw kernvim::input_error("not an integer: '" + s + "'");
  }
}

double parse_real(const std::string& s) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (...) {
    throw kernvim::input_error("not a number: '" + s + "'");
  }
}

std::uint64_t env_seed() {
  const char* env = std::getenv("KERNVIM_SEED");
  if (!env) return 1;
  char* end = nullptr;
  unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0') throw kernvim::input_error("KERNVIM_SEED is not an integer");
  return v;
}

struct run_flags {
  std::string input, outcome = "y", treatment, covariates, measure = "koi", targets;
  std::string subset, baseline, mode = "cate", out, nuisances;
  double alpha = 0.05, lambda = 0.0, bandwidth = 0.0, clip = 0.01;
  int bootstrap = 4999, permutations = 40, threads = 1, grid = 100;
  std::uint64_t seed = 0;
  bool strict_split = false, plugin_varsigma = false, per_subset_bandwidth = false;
};

void add_run_flags(CLI::App* cmd, run_flags& f, bool band) {
  cmd->add_option("--input", f.input, "input CSV with header row")->required();
  cmd->add_option("--outcome", f.outcome, "outcome column (default y)");
  cmd->add_option("--treatment", f.treatment, "binary treatment column");
  cmd->add_option("--covariates", f.covariates, "comma list of covariate columns (default: all others)");
  cmd->add_option("--measure", f.measure, "koi|loo|loco|shapley|shapley-mc");
  cmd->add_option("--targets", f.targets, band ? "variable whose axis is scanned"
                                               : "comma list of tested variables (default: all)");
  cmd->add_option("--subset", f.subset, "loco: comma list naming subset V1");
  cmd->add_option("--baseline-subset", f.baseline, "loco: comma list naming subset V2");
  cmd->add_option("--alpha", f.alpha, "test level (default 0.05)");
  cmd->add_option("--bootstrap", f.bootstrap, "bootstrap replicates (default 4999)");
  cmd->add_option("--seed", f.seed, "RNG seed (default: KERNVIM_SEED env, else 1)");
  cmd->add_option("--lambda", f.lambda, "ridge smoothing; <= 0 picks the sample-size rule");
  cmd->add_option("--bandwidth", f.bandwidth, "kernel bandwidth; <= 0 picks the median heuristic");
  cmd->add_option("--clip", f.clip, "propensity clipping bound (default 0.01)");
  cmd->add_option("--permutations", f.permutations, "sampled permutations for shapley-mc (default 40)");
  cmd->add_option("--mode", f.mode, "cate|prediction (default cate)");
  cmd->add_option("--threads", f.threads, "worker threads for the bootstrap (default 1)");
  cmd->add_option("--nuisances", f.nuisances, "CSV of external predictions with columns g1,mu1,mu0");
  cmd->add_option("--out", f.out, "output path (default: stdout)");
  cmd->add_flag("--strict-split", f.strict_split,
                "train nuisances and smoothers on one half, infer on the other");
  cmd->add_flag("--plugin-varsigma", f.plugin_varsigma,
                "half-normal plug-in scale for the norm CI instead of the bootstrap quantile");
  cmd->add_flag("--per-subset-bandwidth", f.per_subset_bandwidth,
                "median-heuristic bandwidth per subset instead of one global scale");
  if (band) cmd->add_option("--grid", f.grid, "grid points along the axis (default 100)");
}

struct prepared_run {
  kernvim::analysis_session session;
  kernvim::analysis_request request;
};

prepared_run prepare_run(const run_flags& f) {
  kernvim::analysis_options opts;
  opts.mode = parse_mode(f.mode);
  opts.alpha = f.alpha;
  opts.bootstrap_reps = f.bootstrap;
  opts.seed = f.seed ? f.seed : env_seed();
  opts.lambda = f.lambda;
  opts.bandwidth = f.bandwidth;
  opts.clip = f.clip;
  opts.shapley_permutations = f.permutations;
  opts.per_subset_bandwidth = f.per_subset_bandwidth;
  opts.strict_split = f.strict_split;
  opts.plugin_varsigma = f.plugin_varsigma;
  opts.threads = f.threads;

  bool need_treatment = opts.mode == kernvim::psi_mode::cate;
  kernvim::csv_table table = kernvim::read_csv_file(f.input);
  kernvim::loaded_dataset loaded = kernvim::load_dataset(
      table, f.outcome, f.treatment, split_list(f.covariates), need_treatment);
  if (!f.nuisances.empty())
    opts.external = kernvim::load_nuisance_csv(f.nuisances, loaded.data.x.rows());

  kernvim::analysis_request req;
  req.kind = parse_measure(f.measure);

  kernvim::analysis_session session(std::move(loaded.data), std::move(loaded.groups), opts);

  auto to_players = [&session](const std::string& list) {
    std::vector<int> players;
    for (const std::string& name : split_list(list)) {
      int p = session.player_index(name);
      if (p < 0) throw kernvim::input_error("unknown variable '" + name + "'");
      players.push_back(p);
    }
    return players;
  };
  if (req.kind == kernvim::measure_kind::loco) {
    if (f.subset.empty() && f.baseline.empty())
      throw kernvim::input_error("loco needs --subset and/or --baseline-subset");
    req.subset = kernvim::mask_from(to_players(f.subset));
    req.baseline = kernvim::mask_from(to_players(f.baseline));
    req.targets = to_players(f.targets);  // band axis, optional otherwise
  } else {
    req.targets = to_players(f.targets);
  }
  return prepared_run{std::move(session), std::move(req)};
}

void write_output(const std::string& path, const std::string& content) {
  if (path.empty()) {
    std::cout << content;
    return;
  }
  std::ofstream out(path);
  if (!out) throw kernvim::input_error("cannot write " + path);
  out << content;
}

int run_test_cmd(const run_flags& f) {
  prepared_run run = prepare_run(f);
  kernvim::analysis_result res = run.session.run(run.request);

  ojson rep;
  rep["command"] = "test";
  rep["input"] = f.input;
  rep["measure"] = res.measure;
  rep["mode"] = f.mode;
  rep["n"] = res.n;
  rep["alpha"] = f.alpha;
  rep["bootstrap"] = f.bootstrap;
  rep["seed"] = f.seed ? f.seed : env_seed();
  rep["bandwidth"] = res.bandwidth;
  rep["lambda"] = res.lambda;
  rep["clip"] = f.clip;
  rep["strict_split"] = f.strict_split;
  if (run.request.kind == kernvim::measure_kind::shapley_mc)
    rep["permutations"] = f.permutations;
  rep["variables"] = ojson::array();
  for (const kernvim::variable_report& vr : res.reports) {
    ojson v;
    v["variable"] = vr.label;
    v["norm"] = vr.test.norm;
    v["norm_sq"] = vr.test.norm_sq;
    v["statistic"] = vr.test.statistic;
    v["p_value"] = vr.test.p_value;
    v["p_value_bh"] = vr.p_bh;
    v["reject"] = vr.test.reject;
    v["xi_hat"] = vr.test.xi_hat;
    v["varsigma_hat"] = vr.test.varsigma_hat;
    v["ci_triangle"] = {vr.test.ci_triangle[0], vr.test.ci_triangle[1]};
    v["ci_delta"] = {vr.test.ci_delta[0], vr.test.ci_delta[1]};
    rep["variables"].push_back(std::move(v));
  }
  write_output(f.out, rep.dump(2) + "\n");
  return 0;
}

int run_band_cmd(const run_flags& f) {
  prepared_run run = prepare_run(f);
  kernvim::band_table bt = run.session.band(run.request, f.grid);
  std::ostringstream os;
  kernvim::write_band_csv(os, bt);
  write_output(f.out, os.str());
  return 0;
}

struct sim_flags {
  std::string experiment = "exp3", measures = "koi", ns = "500", sigmas = "0", betas = "0";
  std::string alternative = "smooth", out;
  int reps = 100, bootstrap = 999, permutations = 40, threads = 1;
  double alpha = 0.05, lambda = 0.0, bandwidth = 0.0, clip = 0.01;
  std::uint64_t seed = 0;
  double oracle_norm = std::numeric_limits<double>::quiet_NaN();
};

int run_simulate_cmd(const sim_flags& f) {
  kernvim::mc_config cfg;
  if (f.experiment == "exp1")
    cfg.experiment = kernvim::experiment_id::exp1_d5;
  else if (f.experiment == "exp2")
    cfg.experiment = kernvim::experiment_id::exp2_d10;
  else if (f.experiment == "exp3")
    cfg.experiment = kernvim::experiment_id::exp3_d3;
  else
    throw kernvim::input_error("unknown experiment '" + f.experiment + "'");

  cfg.measures.clear();
  for (const std::string& m : split_list(f.measures)) cfg.measures.push_back(parse_measure(m));
  if (cfg.measures.empty()) throw kernvim::input_error("no measures selected");
  cfg.ns.clear();
  for (const std::string& s : split_list(f.ns)) cfg.ns.push_back(parse_int(s));
  cfg.sigmas.clear();
  for (const std::string& s : split_list(f.sigmas)) cfg.sigmas.push_back(parse_real(s));
  cfg.betas.clear();
  for (const std::string& s : split_list(f.betas)) cfg.betas.push_back(parse_real(s));
  if (f.alternative == "smooth")
    cfg.shape = kernvim::cate_shape::smooth;
  else if (f.alternative == "rough")
    cfg.shape = kernvim::cate_shape::rough;
  else
    throw kernvim::input_error("unknown alternative '" + f.alternative + "'");
  cfg.reps = f.reps;
  cfg.seed = f.seed ? f.seed : env_seed();
  if (!std::isnan(f.oracle_norm)) cfg.oracle_norm = f.oracle_norm;
  cfg.opts.alpha = f.alpha;
  cfg.opts.bootstrap_reps = f.bootstrap;
  cfg.opts.lambda = f.lambda;
  cfg.opts.bandwidth = f.bandwidth;
  cfg.opts.clip = f.clip;
  cfg.opts.shapley_permutations = f.permutations;
  cfg.opts.threads = f.threads;

  std::vector<kernvim::mc_row> rows = kernvim::monte_carlo(cfg);

  bool as_json = f.out.size() > 5 && f.out.substr(f.out.size() - 5) == ".json";
  if (as_json) {
    ojson arr = ojson::array();
    for (const kernvim::mc_row& r : rows) {
      ojson o;
      o["measure"] = r.measure;
      o["n"] = r.n;
      o["sigma"] = r.sigma;
      o["beta"] = r.beta;
      o["alternative"] = r.alternative;
      o["reps"] = r.reps;
      o["reject_rate"] = r.reject_rate;
      o["mean_norm"] = r.mean_norm;
      if (r.coverage)
        o["coverage"] = *r.coverage;
      else
        o["coverage"] = nullptr;
      o["failures"] = r.failures;
      arr.push_back(std::move(o));
    }
    write_output(f.out, arr.dump(2) + "\n");
  } else {
    std::ostringstream os;
    kernvim::write_mc_csv(os, rows);
    write_output(f.out, os.str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    CLI::App app{"RKHS-embedded variable importance for treatment effect heterogeneity"};
    app.require_subcommand(1);

    run_flags test_f, band_f;
    sim_flags sim_f;

    CLI::App* test_cmd = app.add_subcommand("test", "global test of no variable importance");
    add_run_flags(test_cmd, test_f, false);
    test_cmd->callback([&] { run_test_cmd(test_f); });

    CLI::App* band_cmd = app.add_subcommand("band", "sup-norm confidence band along one axis");
    add_run_flags(band_cmd, band_f, true);
    band_cmd->callback([&] { run_band_cmd(band_f); });

    CLI::App* sim_cmd = app.add_subcommand("simulate", "Monte Carlo study on synthetic designs");
    sim_cmd->add_option("--experiment", sim_f.experiment, "exp1|exp2|exp3 (default exp3)");
    sim_cmd->add_option("--measure", sim_f.measures, "comma list of measures (default koi)");
    sim_cmd->add_option("--n", sim_f.ns, "comma list of sample sizes (default 500)");
    sim_cmd->add_option("--sigma", sim_f.sigmas, "comma list of copula correlations (default 0)");
    sim_cmd->add_option("--beta", sim_f.betas, "comma list of effect sizes (default 0)");
    sim_cmd->add_option("--alternative", sim_f.alternative, "smooth|rough (default smooth)");
    sim_cmd->add_option("--reps", sim_f.reps, "Monte Carlo repetitions per cell (default 100)");
    sim_cmd->add_option("--alpha", sim_f.alpha, "test level (default 0.05)");
    sim_cmd->add_option("--bootstrap", sim_f.bootstrap, "bootstrap replicates (default 999)");
    sim_cmd->add_option("--permutations", sim_f.permutations, "shapley-mc permutations (default 40)");
    sim_cmd->add_option("--lambda", sim_f.lambda, "ridge smoothing; <= 0 picks the rule");
    sim_cmd->add_option("--bandwidth", sim_f.bandwidth, "bandwidth; <= 0 picks the median heuristic");
    sim_cmd->add_option("--clip", sim_f.clip, "propensity clipping bound (default 0.01)");
    sim_cmd->add_option("--seed", sim_f.seed, "RNG seed (default: KERNVIM_SEED env, else 1)");
    sim_cmd->add_option("--threads", sim_f.threads, "worker threads across repetitions");
    sim_cmd->add_option("--oracle-norm", sim_f.oracle_norm,
                        "true norm for triangle-CI coverage accounting");
    sim_cmd->add_option("--out", sim_f.out, "output path; .json switches format (default: stdout CSV)");
    sim_cmd->callback([&] { run_simulate_cmd(sim_f); });

    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      int code = app.exit(e);
      return code == 0 ? 0 : 2;
    }
    return 0;
  } catch (const kernvim::error& e) {
    std::cerr << "kernvim: " << e.what() << std::endl;
    return e.code();
  } catch (const std::exception& e) {
    std::cerr << "kernvim: internal error: " << e.what() << std::endl;
    return 1;
  }
}
