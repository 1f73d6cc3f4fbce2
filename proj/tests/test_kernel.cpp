#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kernvim/common.hpp"
#include "kernvim/kernel.hpp"

using namespace kernvim;

namespace {

mat random_points(std::int64_t n, int d, std::uint64_t seed) {
  rng_stream g(seed);
  mat x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = g.normal();
  return x;
}

// Independent median of all pairwise distances: full sort, textbook rule.
double median_by_sort(const mat& pts) {
  std::vector<double> dist;
  for (Eigen::Index i = 0; i < pts.rows(); ++i)
    for (Eigen::Index j = i + 1; j < pts.rows(); ++j)
      dist.push_back((pts.row(i) - pts.row(j)).norm());
  std::sort(dist.begin(), dist.end());
  std::size_t m = dist.size();
  return m % 2 == 1 ? dist[m / 2] : 0.5 * (dist[m / 2 - 1] + dist[m / 2]);
}

}  // namespace

TEST_CASE("gaussian kernel point values") {
  vec x(2), y(2);
  x << 0.0, 0.0;
  y << 3.0, 4.0;
  CHECK(gaussian_kernel(x, x, 1.7) == 1.0);
  // squared distance 25, bandwidth 5: exp(-25 / 50) = exp(-1/2)
  CHECK(gaussian_kernel(x, y, 5.0) == Catch::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(gaussian_kernel_sq(4.0, 2.0) == Catch::Approx(std::exp(-0.5)).epsilon(1e-14));
  CHECK(gaussian_kernel(x, y, 5.0) == gaussian_kernel(y, x, 5.0));
}

TEST_CASE("median pairwise distance on the line") {
  mat pts(3, 1);
  pts << 0.0, 1.0, 3.0;  // distances 1, 3, 2 -> median 2
  CHECK(median_pairwise_distance(pts) == Catch::Approx(2.0).epsilon(1e-14));

  mat two(2, 1);
  two << 0.0, 4.0;  // a single pair
  CHECK(median_pairwise_distance(two) == Catch::Approx(4.0).epsilon(1e-14));

  mat four(4, 1);
  four << 0.0, 1.0, 2.0, 4.0;  // distances {1,1,2,2,3,4} -> (2+2)/2
  CHECK(median_pairwise_distance(four) == Catch::Approx(2.0).epsilon(1e-14));
}

TEST_CASE("median heuristic matches a full sort") {
  for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
    for (std::int64_t n : {2, 5, 17, 40}) {
      mat pts = random_points(n, 3, seed * 100 + static_cast<std::uint64_t>(n));
      CHECK(median_pairwise_distance(pts) ==
            Catch::Approx(median_by_sort(pts)).epsilon(1e-12));
    }
  }
}

TEST_CASE("median heuristic rejects degenerate inputs") {
  mat one(1, 2);
  one << 0.0, 0.0;
  CHECK_THROWS_AS(median_pairwise_distance(one), degenerate_error);
  mat same(5, 2);
  same.setConstant(3.0);
  CHECK_THROWS_AS(median_pairwise_distance(same), degenerate_error);
}

TEST_CASE("gram is exactly symmetric with unit diagonal") {
  mat pts = random_points(23, 4, 7);
  kernel_config k{1.3, 1.0};
  mat g = gram(pts, k);
  REQUIRE(g.rows() == 23);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    CHECK(g(i, i) == 1.0);
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      CHECK(g(i, j) == g(j, i));  // bitwise, mirrored triangle
      CHECK(g(i, j) > 0.0);
      CHECK(g(i, j) <= 1.0);
    }
  }
}

TEST_CASE("gram entries match the scalar kernel") {
  mat pts = random_points(9, 2, 21);
  kernel_config k{0.8, 1.0};
  mat g = gram(pts, k);
  for (Eigen::Index i = 0; i < 9; ++i)
    for (Eigen::Index j = 0; j < 9; ++j) {
      vec xi = pts.row(i).transpose(), xj = pts.row(j).transpose();
      double direct = std::exp(-(xi - xj).squaredNorm() / (2.0 * 0.8 * 0.8));
      CHECK(g(i, j) == Catch::Approx(direct).epsilon(1e-13));
    }
}

TEST_CASE("gram is positive semidefinite") {
  mat pts = random_points(30, 3, 5);
  mat g = gram(pts, kernel_config{1.0, 1.0});
  Eigen::SelfAdjointEigenSolver<mat> es(g);
  CHECK(es.eigenvalues().minCoeff() > -1e-10);
}

TEST_CASE("gram is invariant under rotation of the points") {
  mat pts = random_points(15, 3, 31);
  // a random orthogonal matrix via QR
  mat q = Eigen::HouseholderQR<mat>(random_points(3, 3, 32)).householderQ();
  mat g0 = gram(pts, kernel_config{1.1, 1.0});
  mat g1 = gram(mat(pts * q.transpose()), kernel_config{1.1, 1.0});
  CHECK((g0 - g1).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("subset gram equals gram of the selected columns") {
  mat pts = random_points(12, 5, 9);
  std::vector<int> cols{0, 2, 4};
  kernel_config k{0.9, 1.0};
  mat a = gram_subset(pts, cols, k);
  mat b = gram(subset_columns(pts, cols), k);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cross gram against the training set itself reproduces the gram") {
  mat pts = random_points(10, 3, 17);
  kernel_config k{1.4, 1.0};
  mat g = gram(pts, k);
  mat c = cross_gram(pts, pts, k);
  CHECK((g - c).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("standardizer centers and scales by the population convention") {
  mat x(4, 2);
  x << 1.0, 5.0, 3.0, 5.0, 5.0, 5.0, 7.0, 5.0;
  standardizer s = standardizer::fit(x);
  CHECK(s.mean[0] == Catch::Approx(4.0).epsilon(1e-14));
  // population variance of {1,3,5,7} is 5
  CHECK(s.scale[0] == Catch::Approx(std::sqrt(5.0)).epsilon(1e-14));
  CHECK(s.scale[1] == 1.0);  // constant column keeps unit scale
  mat z = s.apply(x);
  CHECK(std::abs(z.col(0).mean()) < 1e-14);
  CHECK(z.col(0).array().square().mean() == Catch::Approx(1.0).epsilon(1e-12));
  CHECK(z.col(1).cwiseAbs().maxCoeff() == 0.0);

  mat q(1, 2);
  q << 4.0, 9.0;
  mat zq = s.apply(q);
  CHECK(zq(0, 0) == Catch::Approx(0.0).margin(1e-14));
  CHECK(zq(0, 1) == 4.0);  // shifted by the fitted mean only
}

TEST_CASE("ridge factor solves the shifted system") {
  mat pts = random_points(20, 3, 41);
  mat k = gram(pts, kernel_config{1.0, 1.0});
  double lambda = 0.05;
  ridge_factor f = make_ridge_factor(k, lambda);
  rng_stream g(77);
  vec b(20);
  for (int i = 0; i < 20; ++i) b[i] = g.normal();
  vec x = f.solve(b);
  mat shifted = k;
  shifted.diagonal().array() += lambda;
  CHECK((shifted * x - b).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("ridge factor validates its inputs") {
  mat k = mat::Identity(3, 3);
  CHECK_THROWS_AS(make_ridge_factor(k, 0.0), input_error);
  CHECK_THROWS_AS(make_ridge_factor(k, -1.0), input_error);
  CHECK_THROWS_AS(make_ridge_factor(mat(2, 3), 0.1), input_error);
}

TEST_CASE("explicit ridge inverse on a one-point problem") {
  mat k(1, 1);
  k << 1.0;
  mat w = ridge_inverse(k, 1.0);
  CHECK(w(0, 0) == Catch::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("explicit ridge inverse is symmetric and accurate") {
  mat pts = random_points(18, 2, 53);
  mat k = gram(pts, kernel_config{0.7, 1.0});
  double lambda = 0.2;
  mat w = ridge_inverse(k, lambda);
  CHECK((w - w.transpose()).cwiseAbs().maxCoeff() < 1e-10);
  mat shifted = k;
  shifted.diagonal().array() += lambda;
  CHECK((shifted * w - mat::Identity(18, 18)).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("subset mask helpers round-trip") {
  CHECK(full_mask(3) == 0b111u);
  CHECK(mask_size(full_mask(6)) == 6);
  std::vector<int> idx{0, 2, 5};
  CHECK(mask_indices(mask_from(idx)) == idx);
  CHECK(mask_from({}) == 0u);
}

TEST_CASE("rng stream is deterministic and splits independently") {
  rng_stream a(99), b(99);
  for (int i = 0; i < 50; ++i) CHECK(a.uniform01() == b.uniform01());
  // derived streams with different tags decouple
  rng_stream c(rng_stream::derive(99, 1, 0)), d(rng_stream::derive(99, 2, 0));
  int agree = 0;
  for (int i = 0; i < 64; ++i) agree += c.uniform_below(2) == d.uniform_below(2);
  CHECK(agree < 64);
}

TEST_CASE("uniform_below stays in range") {
  rng_stream g(3);
  for (int i = 0; i < 200; ++i) {
    std::int64_t v = g.uniform_below(7);
    CHECK(v >= 0);
    CHECK(v < 7);
  }
}
