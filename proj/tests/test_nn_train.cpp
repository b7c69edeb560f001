#include <doctest.h>

#include "ntklev/errors.hpp"
#include "ntklev/krr.hpp"
#include "ntklev/nn_train.hpp"
#include "oracles.hpp"

#include <cmath>

using namespace ntklev;

namespace {

struct Problem {
  MatrixXd X;
  VectorXd Y;
};

Problem problem(std::uint64_t seed, int n, int d) {
  std::mt19937_64 rng(seed);
  Problem p{oracle::unit_rows(rng, n, d), VectorXd(n)};
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < n; ++i) p.Y(i) = u(rng);
  return p;
}

}  // namespace

TEST_CASE("gaussian initialization") {
  const TwoLayerNet a = init_gaussian(64, 3, SeedStream{1, 0}, 1.0, 0.1);
  const TwoLayerNet b = init_gaussian(64, 3, SeedStream{1, 0}, 1.0, 0.1);
  CHECK(a.W() == b.W());
  CHECK(a.a() == b.a());
  CHECK(a.W() == a.W0());
  CHECK(a.rho() == VectorXd::Ones(64));
  int pos = 0;
  for (Index r = 0; r < 64; ++r) {
    CHECK(std::abs(a.a()(r)) == 1.0);
    pos += a.a()(r) > 0;
  }
  CHECK(pos > 10);
  CHECK(pos < 54);
  CHECK(a.lev_ratio.size() == 0);
  CHECK_THROWS_AS(TwoLayerNet(MatrixXd::Ones(2, 2), VectorXd::Constant(2, 0.5), VectorXd::Ones(2), 1, 0),
                  std::invalid_argument);
}

TEST_CASE("forward pass against an explicit loop") {
  const Problem p = problem(2, 5, 4);
  const TwoLayerNet net = init_gaussian(50, 4, SeedStream{2, 0}, 0.6, 0.0);
  const VectorXd u = forward(net, p.X);
  for (Index i = 0; i < 5; ++i)
    CHECK(u(i) == doctest::Approx(oracle::net_output(net.W(), net.a(), net.rho(), 0.6, p.X.row(i))).epsilon(1e-13));
  CHECK(forward_test(net, p.X.row(0).transpose()) == doctest::Approx(u(0)).epsilon(1e-14));
  CHECK_THROWS_AS(forward_test(net, 2 * p.X.row(0).transpose()), std::domain_error);
  CHECK(loss(net, p.X, p.Y) ==
        doctest::Approx(oracle::net_loss(net.W(), net.a(), net.rho(), 0.6, 0.0, p.X, p.Y)));
}

TEST_CASE("gradient against central differences") {
  const Problem p = problem(3, 4, 3);
  const TwoLayerNet net = init_gaussian(12, 3, SeedStream{3, 0}, 0.8, 0.05);
  const MatrixXd G = gradient(net, p.X, p.Y);
  const double h = 1e-5;
  for (Index k = 0; k < 3; ++k)
    for (Index r = 0; r < 12; ++r) {
      // skip columns within h of an activation boundary
      bool near = false;
      for (Index i = 0; i < 4; ++i) near = near || std::abs(net.W().col(r).dot(p.X.row(i))) < 10 * h;
      if (near) continue;
      MatrixXd Wp = net.W(), Wm = net.W();
      Wp(k, r) += h;
      Wm(k, r) -= h;
      const double fd = (oracle::net_loss(Wp, net.a(), net.rho(), 0.8, 0.05, p.X, p.Y) -
                         oracle::net_loss(Wm, net.a(), net.rho(), 0.8, 0.05, p.X, p.Y)) /
                        (2 * h);
      CHECK(std::abs(G(k, r) - fd) <= 1e-6 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("relu homogeneity") {
  std::mt19937_64 rng(4);
  const TwoLayerNet net = init_gaussian(30, 5, SeedStream{4, 0}, 1.0, 0.0);
  for (int t = 0; t < 10; ++t) {
    const HomogeneityCheck hc = homogeneity_check(net, oracle::unit(rng, 5));
    CHECK(hc.lhs == doctest::Approx(hc.rhs).epsilon(1e-12));
  }
}

TEST_CASE("dynamic kernel") {
  const Problem p = problem(5, 5, 3);
  const TwoLayerNet net = init_gaussian(40, 3, SeedStream{5, 0}, 1.0, 0.0);
  const KernelMatrix H = dynamic_kernel(net, p.X);
  CHECK(H.kind == KernelKind::ntk_empirical);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 5; ++j) {
      double s = 0;
      for (Index r = 0; r < 40; ++r)
        if (net.W().col(r).dot(p.X.row(i)) >= 0 && net.W().col(r).dot(p.X.row(j)) >= 0)
          s += p.X.row(i).dot(p.X.row(j));
      CHECK(H.values(i, j) == doctest::Approx(s / 40).epsilon(1e-13));
    }
  const VectorXd kv = dynamic_kernel_test_vec(net, p.X.row(2).transpose(), p.X);
  CHECK((kv - H.values.col(2)).norm() < 1e-14);

  const TwoLayerNet wide = init_gaussian(100000, 3, SeedStream{5, 1}, 1.0, 0.0);
  CHECK((dynamic_kernel(wide, p.X).values - ntk_gram(p.X).values).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("leverage initialization") {
  const Problem p = problem(6, 6, 3);
  const KernelMatrix K = ntk_gram(p.X);
  const double lambda = 0.02;
  const RegularizedKernel RK(K, lambda);
  LeverageSamplerStats stats;
  const TwoLayerNet net = init_leverage(3000, p.X, RK, SeedStream{6, 0}, 1.0, lambda, &stats);
  const double s = statistical_dimension(K, lambda);
  CHECK(net.s_lambda == doctest::Approx(s).epsilon(1e-12));
  REQUIRE(net.lev_ratio.size() == 3000);
  for (Index r = 0; r < 3000; ++r) {
    CHECK(net.lev_ratio(r) > 0);
    CHECK(net.rho()(r) * net.rho()(r) * net.lev_ratio(r) == doctest::Approx(s).epsilon(1e-12));
  }
  // the reweighted dynamic kernel is unbiased for H^cts
  CHECK((dynamic_kernel(net, p.X).values - K.values).norm() < 0.1);
}

TEST_CASE("training with lambda = 0 interpolates at large width") {
  const Problem p = problem(7, 4, 3);
  TwoLayerNet net = init_gaussian(2048, 3, SeedStream{7, 0}, 1.0, 0.0);
  TrainOptions opts;
  opts.eta = stable_step_size(net, p.X);
  opts.steps = 3000;
  opts.diag_every = 100;
  opts.u_star = p.Y;
  const auto recs = train(net, p.X, p.Y, opts);
  CHECK(recs.front().step == 0);
  CHECK(recs.back().step == 3000);
  CHECK(*recs.back().train_gap < 1e-3);
  CHECK(recs.back().loss < 1e-3 * recs.front().loss);
}

TEST_CASE("step-size and divergence guards") {
  const Problem p = problem(8, 4, 3);
  TwoLayerNet net = init_gaussian(64, 3, SeedStream{8, 0}, 1.0, 0.0);
  const double eta = stable_step_size(net, p.X, 1.0);
  const double stiffness = spectral_norm(dynamic_kernel(net, p.X).values);
  CHECK(eta == doctest::Approx(0.5 / stiffness));
  TrainOptions opts;
  opts.eta = 1.01 * eta;
  opts.steps = 5;
  CHECK_THROWS_AS(train(net, p.X, p.Y, opts), ConfigError);
  opts.eta = 0.5 * eta;
  opts.divergence_factor = 1e-6;
  CHECK_THROWS_AS(train(net, p.X, p.Y, opts), DivergenceError);
}

TEST_CASE("weight drift bound formula") {
  DriftBoundInputs in{8, 1024, 1.0, 0.01, 0.1, 0.7, 0.3, 0.05, 50.0, 5.0};
  const double r = std::sqrt(8.0 / 1024.0);
  const double expected =
      r * std::max(4 * 0.7 / (0.1 + 0.01), 0.05 * 50.0) + (r * 0.3 + 0.01 * 5.0) * 50.0;
  CHECK(weight_drift_bound(in) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(gaussian_init_norm_bound(4, 100, 0.1) ==
        doctest::Approx(2 * 2 + 2 * std::sqrt(std::log(1000.0))).epsilon(1e-14));
}
