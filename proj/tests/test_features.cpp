#include <doctest.h>

#include "ntklev/errors.hpp"
#include "ntklev/features.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace ntklev;

namespace {

struct Setup {
  MatrixXd X;
  KernelMatrix K;
  double lambda;
};

Setup make_setup(std::uint64_t seed, int n, int d, double lambda) {
  std::mt19937_64 rng(seed);
  MatrixXd X = oracle::unit_rows(rng, n, d);
  KernelMatrix K = ntk_gram(X);
  return {X, K, lambda};
}

}  // namespace

TEST_CASE("required_m closed form") {
  // 3 * 4 * 2 * ln(16 * 2 * 2 / 0.1) = 155.08...
  CHECK(required_m(0.5, 0.1, 2.0, 2.0) == 156);
  CHECK(required_m(0.25, 0.1, 0.0, 2.0) == 0);
  CHECK_THROWS_AS(required_m(0.6, 0.1, 2.0, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(required_m(0.0, 0.1, 2.0, 2.0), std::invalid_argument);
  CHECK(required_m(0.25, 0.1, 2.0, 2.0) > required_m(0.5, 0.1, 2.0, 2.0));
}

TEST_CASE("feature maps") {
  const VectorXd x = (VectorXd(3) << 1, 0, 0).finished();
  const VectorXd w = (VectorXd(3) << 0.3, 2, -1).finished();
  const FeatureFamily relu{FeatureFamilyName::relu_ntk, 1.0};
  CHECK(phi(relu, x, w) == x);
  CHECK(phi(relu, x, -w).isZero());
  const FeatureFamily rbf{FeatureFamilyName::fourier_rbf, 2.0};
  const VectorXd f = phi(rbf, x, w);
  CHECK(f.size() == 2);
  CHECK(f(0) == doctest::Approx(std::cos(0.6)));
  CHECK(f(1) == doctest::Approx(std::sin(0.6)));
}

TEST_CASE("ridge leverage ratio against a double-sum oracle") {
  const Setup s = make_setup(1, 6, 3, 0.05);
  const RegularizedKernel RK(s.K, s.lambda);
  const MatrixXd inv = (s.K.values + s.lambda * MatrixXd::Identity(6, 6)).inverse();
  const FeatureFamily fam{FeatureFamilyName::relu_ntk, 1.0};
  const LeverageScorer scorer(fam, s.X, RK);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g;
  for (int t = 0; t < 10; ++t) {
    VectorXd w(3);
    for (int k = 0; k < 3; ++k) w(k) = g(rng);
    double expected = 0;
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 6; ++j) {
        const double ai = s.X.row(i).dot(w) >= 0 ? 1.0 : 0.0;
        const double aj = s.X.row(j).dot(w) >= 0 ? 1.0 : 0.0;
        expected += inv(i, j) * ai * aj * s.X.row(i).dot(s.X.row(j));
      }
    CHECK(ridge_leverage_ratio(fam, w, s.X, RK) == doctest::Approx(expected).epsilon(1e-10));
    CHECK(scorer.ratio(w) == doctest::Approx(expected).epsilon(1e-10));
    CHECK(scorer.ratio(w) <= scorer.envelope());
  }
  CHECK(scorer.envelope() == doctest::Approx(6.0 / (min_eigenvalue(s.K) + s.lambda)));
}

TEST_CASE("leverage ratio integrates to the statistical dimension") {
  const Setup s = make_setup(4, 5, 3, 0.1);
  const RegularizedKernel RK(s.K, s.lambda);
  const LeverageScorer scorer({FeatureFamilyName::relu_ntk, 1.0}, s.X, RK);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  const int N = 200000;
  double sum = 0, sum_sq = 0;
  VectorXd w(3);
  for (int t = 0; t < N; ++t) {
    for (int k = 0; k < 3; ++k) w(k) = g(rng);
    const double r = scorer.ratio(w);
    sum += r;
    sum_sq += r * r;
  }
  const double mean = sum / N;
  const double se = std::sqrt((sum_sq / N - mean * mean) / N);
  const double s_lambda = ((s.K.values + s.lambda * MatrixXd::Identity(5, 5)).inverse() * s.K.values).trace();
  CHECK(std::abs(mean - s_lambda) < 5 * se);
}

TEST_CASE("leverage sampler weights and acceptance") {
  const Setup s = make_setup(6, 6, 3, 0.05);
  const RegularizedKernel RK(s.K, s.lambda);
  const LeverageScorer scorer({FeatureFamilyName::relu_ntk, 1.0}, s.X, RK);
  LeverageSamplerStats stats;
  const Index m = 4000;
  const auto samples = sample_leverage_features(scorer, m, SeedStream{3, 3}, &stats);
  REQUIRE(static_cast<Index>(samples.size()) == m);
  CHECK(stats.accepted == static_cast<std::size_t>(m));
  for (const auto& smp : samples) {
    REQUIRE(smp.lev_ratio.has_value());
    CHECK(*smp.lev_ratio > 0.0);
    CHECK(*smp.lev_ratio <= scorer.envelope());
    CHECK(smp.weight * smp.weight * *smp.lev_ratio == doctest::Approx(scorer.statistical_dimension()).epsilon(1e-12));
  }
  const double p = stats.expected_acceptance();
  const double rate = static_cast<double>(stats.accepted) / static_cast<double>(stats.proposals);
  const double se = std::sqrt(p * (1 - p) / static_cast<double>(stats.proposals));
  CHECK(std::abs(rate - p) < 5 * se);

  // Reweighted Gram is unbiased for K.
  const FeatureMatrix F = build_feature_matrix(s.X, samples, scorer.family());
  CHECK((F.gram().values - s.K.values).norm() < 0.1);

  // Same stream, same draws.
  const auto again = sample_leverage_features(scorer, 10, SeedStream{3, 3});
  for (int r = 0; r < 10; ++r) CHECK(again[r].w == samples[r].w);
}

TEST_CASE("sampling from a dominating upper bound") {
  const Setup s = make_setup(7, 5, 3, 0.1);
  const RegularizedKernel RK(s.K, s.lambda);
  const LeverageScorer scorer({FeatureFamilyName::relu_ntk, 1.0}, s.X, RK);
  // Constant dominating ratio: every proposal is accepted and weights are 1.
  const double env = scorer.envelope();
  LeverageUpperBound flat{[env](const VectorXd&) { return env; }, env, env};
  LeverageSamplerStats stats;
  const auto samples = sample_leverage_features(flat, 3, 50, SeedStream{1, 1}, &stats);
  CHECK(stats.proposals == 50);
  for (const auto& smp : samples) CHECK(smp.weight == doctest::Approx(1.0));
}

TEST_CASE("gaussian features approximate the exact kernels") {
  const Setup s = make_setup(8, 5, 3, 0.1);
  const FeatureFamily relu{FeatureFamilyName::relu_ntk, 1.0};
  const auto samples = sample_gaussian_features(relu, 20000, 3, SeedStream{2, 2});
  for (const auto& smp : samples) CHECK(smp.weight == 1.0);
  const FeatureMatrix F = build_feature_matrix(s.X, samples, relu);
  CHECK(F.psi_bar.rows() == 5);
  CHECK(F.psi_bar.cols() == 20000 * 3);
  CHECK((F.gram().values - s.K.values).cwiseAbs().maxCoeff() < 0.02);

  const FeatureFamily rbf{FeatureFamilyName::fourier_rbf, 1.3};
  const auto rs = sample_gaussian_features(rbf, 20000, 3, SeedStream{2, 3});
  const FeatureMatrix R = build_feature_matrix(s.X, rs, rbf);
  CHECK((R.gram().values - exact_kernel(rbf, s.X).values).cwiseAbs().maxCoeff() < 0.03);
  CHECK(exact_kernel(rbf, s.X).values == rbf_gram(s.X, 1.3).values);
}
