#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "kernvim/common.hpp"
#include "kernvim/inference.hpp"
#include "kernvim/nuisance.hpp"
#include "kernvim/pipeline.hpp"

using namespace kernvim;

namespace {

dataset toy_design(std::int64_t n, int d, std::uint64_t seed) {
  rng_stream g(seed);
  dataset ds;
  ds.x.resize(n, d);
  ds.y.resize(n);
  ds.a.resize(n);
  ds.names.clear();
  for (int j = 0; j < d; ++j) ds.names.push_back("x" + std::to_string(j + 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) ds.x(i, j) = g.normal();
    ds.a[i] = g.bernoulli(0.5) ? 1 : 0;
    ds.y[i] = ds.x(i, 0) + ds.a[i] * (0.8 * ds.x(i, 0)) + g.normal();
  }
  return ds;
}

analysis_options fast_opts(std::uint64_t seed = 1) {
  analysis_options o;
  o.bootstrap_reps = 199;
  o.seed = seed;
  return o;
}

}  // namespace

TEST_CASE("session runs are deterministic and thread-count invariant") {
  dataset ds = toy_design(80, 3, 5);
  analysis_options o1 = fast_opts(11);
  analysis_session s1(ds, singleton_groups(ds.names), o1);
  analysis_request req;
  req.kind = measure_kind::koi;
  analysis_result a = s1.run(req);
  analysis_result b = s1.run(req);  // a second run from the same session
  analysis_options o3 = fast_opts(11);
  o3.threads = 3;
  analysis_session s3(ds, singleton_groups(ds.names), o3);
  analysis_result c = s3.run(req);

  REQUIRE(a.reports.size() == 3);
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(a.reports[j].test.p_value == b.reports[j].test.p_value);
    CHECK(a.reports[j].test.norm == b.reports[j].test.norm);
    CHECK(a.reports[j].test.p_value == c.reports[j].test.p_value);
    CHECK(a.reports[j].test.xi_hat == c.reports[j].test.xi_hat);
  }
}

TEST_CASE("adjusted p-values column is the benjamini-hochberg map") {
  dataset ds = toy_design(70, 3, 7);
  analysis_session s(ds, singleton_groups(ds.names), fast_opts());
  analysis_request req;
  req.kind = measure_kind::loo;
  analysis_result r = s.run(req);
  std::vector<double> p;
  for (const auto& vr : r.reports) p.push_back(vr.test.p_value);
  std::vector<double> adj = bh_adjust(p);
  for (std::size_t j = 0; j < p.size(); ++j) CHECK(r.reports[j].p_bh == adj[j]);
}

TEST_CASE("identical contrast subsets give the exact null report") {
  dataset ds = toy_design(60, 2, 9);
  analysis_session s(ds, singleton_groups(ds.names), fast_opts());
  analysis_request req;
  req.kind = measure_kind::loco;
  req.subset = 0b01;
  req.baseline = 0b01;
  analysis_result r = s.run(req);
  REQUIRE(r.reports.size() == 1);
  CHECK(r.reports[0].test.norm == 0.0);
  CHECK(r.reports[0].test.statistic == 0.0);
  CHECK(r.reports[0].test.p_value == 1.0);
  CHECK_FALSE(r.reports[0].test.reject);
  CHECK(r.reports[0].label == "{x1}-{x1}");
}

TEST_CASE("contrast labels name both subsets") {
  dataset ds = toy_design(60, 3, 11);
  analysis_session s(ds, singleton_groups(ds.names), fast_opts());
  analysis_request req;
  req.kind = measure_kind::loco;
  req.subset = 0b011;
  req.baseline = 0b100;
  analysis_result r = s.run(req);
  CHECK(r.reports.at(0).label == "{x1,x2}-{x3}");
  CHECK(r.measure == "loco");
}

TEST_CASE("requested targets restrict the report set") {
  dataset ds = toy_design(60, 3, 13);
  analysis_session s(ds, singleton_groups(ds.names), fast_opts());
  analysis_request req;
  req.kind = measure_kind::koi;
  req.targets = {2, 0};
  analysis_result r = s.run(req);
  REQUIRE(r.reports.size() == 2);
  CHECK(r.reports[0].label == "x3");
  CHECK(r.reports[1].label == "x1");
  req.targets = {3};
  CHECK_THROWS_AS(s.run(req), input_error);
}

TEST_CASE("strict split halves the effective sample") {
  dataset ds = toy_design(101, 2, 15);
  analysis_options o = fast_opts(21);
  o.strict_split = true;
  analysis_session s(ds, singleton_groups(ds.names), o);
  CHECK(s.n_eff() == 50);  // fold sizes 51 / 50, inference on the second
  analysis_request req;
  req.kind = measure_kind::koi;
  req.targets = {0};
  analysis_result r = s.run(req);
  CHECK(r.reports.at(0).test.n == 50);
  CHECK(r.n == 50);

  analysis_session again(ds, singleton_groups(ds.names), o);
  analysis_result r2 = again.run(req);
  CHECK(r.reports[0].test.p_value == r2.reports[0].test.p_value);
  CHECK(r.reports[0].test.norm == r2.reports[0].test.norm);
}

TEST_CASE("strict split detects heterogeneity like the pooled design") {
  dataset ds = toy_design(160, 2, 17);
  analysis_options o = fast_opts(23);
  o.strict_split = true;
  analysis_session s(ds, singleton_groups(ds.names), o);
  analysis_request req;
  req.kind = measure_kind::koi;
  analysis_result r = s.run(req);
  // x1 modulates the effect; its p-value should undercut the idle x2
  CHECK(r.reports[0].test.p_value < r.reports[1].test.p_value);
}

TEST_CASE("band has a constant halfwidth tied to the bootstrap scale") {
  dataset ds = toy_design(90, 2, 19);
  analysis_session s(ds, singleton_groups(ds.names), fast_opts(29));
  analysis_request req;
  req.kind = measure_kind::koi;
  req.targets = {0};
  band_table b = s.band(req, 50);
  REQUIRE(b.band.estimate.size() == 50);
  REQUIRE(b.grid_value.size() == 50);
  CHECK(b.variable == "x1");
  double expect = std::sqrt(b.xi_hat / 90.0);
  CHECK(b.band.halfwidth == Catch::Approx(expect).epsilon(1e-12));
  for (int i = 0; i < 50; ++i) {
    CHECK(b.band.upper[i] == Catch::Approx(b.band.estimate[i] + expect).epsilon(1e-10));
    CHECK(b.band.lower[i] == Catch::Approx(b.band.estimate[i] - expect).epsilon(1e-10));
  }
  // the grid spans the raw covariate range, evenly
  CHECK(b.grid_value[0] == ds.x.col(0).minCoeff());
  CHECK(b.grid_value[49] == ds.x.col(0).maxCoeff());
  double step = b.grid_value[1] - b.grid_value[0];
  for (int i = 2; i < 50; ++i)
    CHECK(b.grid_value[i] - b.grid_value[i - 1] == Catch::Approx(step).epsilon(1e-8));
}

TEST_CASE("band rejects multi-target and multi-column requests") {
  dataset ds = toy_design(60, 3, 31);
  analysis_session s(ds, singleton_groups(ds.names), fast_opts());
  analysis_request req;
  req.kind = measure_kind::koi;  // all three targets by default
  CHECK_THROWS_AS(s.band(req), input_error);
  req.targets = {1};
  CHECK_NOTHROW(s.band(req, 10));
  CHECK_THROWS_AS(s.band(req, 1), input_error);

  std::vector<variable_group> grouped{{"x1", {0}}, {"pair", {1, 2}}};
  analysis_session sg(ds, grouped, fast_opts());
  analysis_request on_pair;
  on_pair.kind = measure_kind::koi;
  on_pair.targets = {1};
  CHECK_THROWS_AS(sg.band(on_pair, 10), input_error);
}

TEST_CASE("variable groups act as joint players") {
  dataset ds = toy_design(80, 3, 33);
  std::vector<variable_group> grouped{{"x1", {0}}, {"rest", {1, 2}}};
  analysis_session s(ds, grouped, fast_opts(35));
  CHECK(s.player_count() == 2);
  CHECK(s.player_index("rest") == 1);
  CHECK(s.player_index("missing") == -1);
  analysis_request req;
  req.kind = measure_kind::shapley;
  analysis_result r = s.run(req);
  REQUIRE(r.reports.size() == 2);
  CHECK(r.reports[1].label == "rest");
}

TEST_CASE("group validation rejects overlap, gaps, and duplicates") {
  dataset ds = toy_design(40, 3, 37);
  auto build = [&](std::vector<variable_group> g) {
    return analysis_session(ds, std::move(g), fast_opts());
  };
  CHECK_THROWS_AS(build({{"a", {0, 1}}, {"b", {1, 2}}}), input_error);
  CHECK_THROWS_AS(build({{"a", {0}}, {"b", {2}}}), input_error);
  CHECK_THROWS_AS(build({{"a", {0}}, {"a", {1, 2}}}), input_error);
  CHECK_THROWS_AS(build({{"a", {0, 1, 2}}, {"b", {}}}), input_error);
  CHECK_THROWS_AS(build({}), input_error);
  CHECK_NOTHROW(build({{"a", {2, 0}}, {"b", {1}}}));
}

TEST_CASE("options are validated up front") {
  dataset ds = toy_design(40, 2, 39);
  analysis_options bad = fast_opts();
  bad.alpha = 0.0;
  CHECK_THROWS_AS(analysis_session(ds, singleton_groups(ds.names), bad), input_error);
  bad = fast_opts();
  bad.bootstrap_reps = 0;
  CHECK_THROWS_AS(analysis_session(ds, singleton_groups(ds.names), bad), input_error);
  bad = fast_opts();
  bad.threads = 0;
  CHECK_THROWS_AS(analysis_session(ds, singleton_groups(ds.names), bad), input_error);
}

TEST_CASE("external nuisance predictions flow into the pseudo-outcomes") {
  dataset ds = toy_design(50, 2, 41);
  nuisance_predictions p{vec::Constant(50, 0.5), vec::Zero(50), vec::Zero(50)};
  analysis_options o = fast_opts();
  o.external = p;
  analysis_session s(ds, singleton_groups(ds.names), o);
  // with g = 1/2 and zero outcome models, psi = 2 a y - 2 (1 - a) y
  for (Eigen::Index i = 0; i < 50; ++i) {
    double expect = ds.a[i] == 1 ? 2.0 * ds.y[i] : -2.0 * ds.y[i];
    CHECK(s.psi()[i] == Catch::Approx(expect).epsilon(1e-14));
  }
}

TEST_CASE("prediction mode passes outcomes straight through") {
  dataset ds = toy_design(45, 2, 43);
  analysis_options o = fast_opts();
  o.mode = psi_mode::prediction;
  analysis_session s(ds, singleton_groups(ds.names), o);
  CHECK(s.psi() == ds.y);
}

TEST_CASE("fixed bandwidth and smoothing are honored, defaults derived") {
  dataset ds = toy_design(64, 2, 45);
  analysis_options o = fast_opts();
  o.bandwidth = 2.5;
  o.lambda = 0.4;
  analysis_session s(ds, singleton_groups(ds.names), o);
  CHECK(s.bandwidth() == 2.5);
  CHECK(s.lambda() == 0.4);

  analysis_session auto_s(ds, singleton_groups(ds.names), fast_opts());
  CHECK(auto_s.bandwidth() > 0.0);
  CHECK(auto_s.lambda() == default_lambda(64, 2));
}

TEST_CASE("per-subset bandwidth changes the reported scale per subset") {
  dataset ds = toy_design(70, 2, 47);
  analysis_request req;
  req.kind = measure_kind::koi;
  req.targets = {0};
  analysis_options global = fast_opts(49);
  analysis_options local = fast_opts(49);
  local.per_subset_bandwidth = true;
  analysis_result rg = analysis_session(ds, singleton_groups(ds.names), global).run(req);
  analysis_result rl = analysis_session(ds, singleton_groups(ds.names), local).run(req);
  CHECK(rg.reports[0].test.norm != rl.reports[0].test.norm);
  analysis_result rl2 = analysis_session(ds, singleton_groups(ds.names), local).run(req);
  CHECK(rl.reports[0].test.norm == rl2.reports[0].test.norm);
}

TEST_CASE("plug-in scale option replaces the bootstrap quantile in the interval") {
  dataset ds = toy_design(75, 2, 51);
  analysis_request req;
  req.kind = measure_kind::koi;
  req.targets = {0};
  analysis_options boot = fast_opts(53);
  analysis_options plug = fast_opts(53);
  plug.plugin_varsigma = true;
  test_report rb = analysis_session(ds, singleton_groups(ds.names), boot).run(req).reports[0].test;
  test_report rp = analysis_session(ds, singleton_groups(ds.names), plug).run(req).reports[0].test;
  CHECK(rb.varsigma_hat != rp.varsigma_hat);
  CHECK(rb.xi_hat == rp.xi_hat);        // the test itself is untouched
  CHECK(rb.p_value == rp.p_value);
  CHECK(rb.ci_triangle[1] == rp.ci_triangle[1]);
  CHECK(rb.ci_delta[1] != rp.ci_delta[1]);
}

TEST_CASE("measure names round-trip") {
  CHECK(std::string(measure_name(measure_kind::koi)) == "koi");
  CHECK(std::string(measure_name(measure_kind::loo)) == "loo");
  CHECK(std::string(measure_name(measure_kind::loco)) == "loco");
  CHECK(std::string(measure_name(measure_kind::shapley)) == "shapley");
  CHECK(std::string(measure_name(measure_kind::shapley_mc)) == "shapley-mc");
}
