#include <doctest.h>

#include "ntklev/errors.hpp"
#include "ntklev/krr.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace ntklev;

namespace {

VectorXd labels(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(-1, 1);
  VectorXd Y(n);
  for (int i = 0; i < n; ++i) Y(i) = u(rng);
  return Y;
}

}  // namespace

TEST_CASE("dual solution against a dense inverse") {
  std::mt19937_64 rng(1);
  const MatrixXd X = oracle::unit_rows(rng, 7, 3);
  const VectorXd Y = labels(rng, 7);
  const VectorXd xt = oracle::unit(rng, 3);
  const KernelMatrix K = ntk_gram(X);
  const VectorXd k = ntk_kernel_vec(xt, X);
  for (double kappa : {1.0, 0.3}) {
    for (double lambda : {0.0, 0.02}) {
      const double k2 = kappa * kappa;
      const MatrixXd inv = (k2 * K.values + lambda * MatrixXd::Identity(7, 7)).inverse();
      const VectorXd ustar = k2 * K.values * inv * Y;
      const double utest = k2 * k.dot(inv * Y);
      const KrrSolution sol = solve_krr_dual(K, Y, lambda, kappa, k);
      CHECK((sol.u_star - ustar).cwiseAbs().maxCoeff() < 1e-10);
      CHECK(*sol.u_test_star == doctest::Approx(utest).epsilon(1e-10));
      CHECK(predict_test(k, sol) == doctest::Approx(utest).epsilon(1e-10));
    }
  }
  // lambda = 0 interpolates
  CHECK((solve_krr_dual(K, Y, 0.0, 1.0).u_star - Y).norm() < 1e-10);
}

TEST_CASE("singular systems are rejected") {
  KernelMatrix K{MatrixXd::Ones(3, 3), KernelKind::feature_gram};
  CHECK_THROWS_AS(solve_krr_dual(K, VectorXd::Ones(3), 0.0, 1.0), SingularSystemError);
  CHECK_NOTHROW(solve_krr_dual(K, VectorXd::Ones(3), 0.1, 1.0));
}

TEST_CASE("scalar flow matches the analytic solution") {
  // One point: H = 1/2; with lambda = 1/2 the flow is u' = 1/2 - u.
  KernelMatrix K{MatrixXd::Constant(1, 1, 0.5), KernelKind::ntk_exact};
  const VectorXd Y = VectorXd::Ones(1);
  const VectorXd k = VectorXd::Constant(1, 0.5);
  std::vector<double> times;
  for (int i = 0; i <= 40; ++i) times.push_back(0.25 * i);
  const KrrTrajectory tr = krr_flow_closed(K, Y, 0.5, 1.0, times, k);
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double expected = 0.5 * (1 - std::exp(-times[i]));
    CHECK(tr.u_ntk[i](0) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(tr.u_ntk_test[i] == doctest::Approx(expected).epsilon(1e-14));
  }
  const KrrTrajectory rk = krr_flow_integrated(K, Y, 0.5, 1.0, 0.01, 10.0, k);
  CHECK(rk.times.size() == 1001);
  CHECK(rk.u_ntk.back()(0) == doctest::Approx(0.5 * (1 - std::exp(-10.0))).epsilon(1e-10));
}

TEST_CASE("closed form and RK4 agree on random instances") {
  std::mt19937_64 rng(4);
  const MatrixXd X = oracle::unit_rows(rng, 6, 4);
  const VectorXd Y = labels(rng, 6);
  const VectorXd xt = oracle::unit(rng, 4);
  const KernelMatrix K = ntk_gram(X);
  const VectorXd k = ntk_kernel_vec(xt, X);
  const double kappa = 0.7, lambda = 0.03;
  const double dt = 0.02 / (kappa * kappa * spectral_norm(K.values) + lambda);
  const KrrTrajectory rk = krr_flow_integrated(K, Y, lambda, kappa, dt, 30.0, k);
  const KrrTrajectory cf = krr_flow_closed(K, Y, lambda, kappa, rk.times, k);
  double worst = 0;
  for (std::size_t i = 0; i < rk.times.size(); ++i) {
    worst = std::max(worst, (rk.u_ntk[i] - cf.u_ntk[i]).cwiseAbs().maxCoeff());
    worst = std::max(worst, std::abs(rk.u_ntk_test[i] - cf.u_ntk_test[i]));
  }
  CHECK(worst < 1e-9);
  CHECK_THROWS_AS(krr_flow_integrated(K, Y, lambda, kappa, 1.0, 30.0, k), ConfigError);

  // long-horizon limit
  const KrrSolution sol = solve_krr_dual(K, Y, lambda, kappa, k);
  const KrrTrajectory far = krr_flow_closed(K, Y, lambda, kappa, {0.0, 1e5}, k);
  CHECK((far.u_ntk.back() - sol.u_star).norm() < 1e-10);
  CHECK(far.u_ntk_test.back() == doctest::Approx(*sol.u_test_star).epsilon(1e-10));
}

TEST_CASE("primal ridge equals dual ridge") {
  std::mt19937_64 rng(10);
  const MatrixXd X = oracle::unit_rows(rng, 9, 3);
  const VectorXd Y = labels(rng, 9);
  const FeatureFamily fam{FeatureFamilyName::fourier_rbf, 1.0};
  const auto samples = sample_gaussian_features(fam, 25, 3, SeedStream{1, 0});
  const FeatureMatrix F = build_feature_matrix(X, samples, fam);
  const double lambda = 0.2;
  const MatrixXd& P = F.psi_bar;
  const VectorXd coef =
      (P.transpose() * P + lambda * MatrixXd::Identity(P.cols(), P.cols())).inverse() * P.transpose() * Y;
  const PrimalSolution primal = solve_krr_primal(F, Y, lambda);
  CHECK((primal.coef - coef).norm() < 1e-10);
  const KrrSolution dual = solve_krr_dual(F.gram(), Y, lambda, 1.0);
  CHECK((primal.u_hat - dual.u_star).norm() < 1e-10);
  CHECK(primal.predict(P.row(2).transpose()) == doctest::Approx(primal.u_hat(2)));
  CHECK_THROWS_AS(solve_krr_primal(F, Y, 0.0), std::invalid_argument);
}
