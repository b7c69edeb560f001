#include <doctest.h>

#include "ntklev/errors.hpp"
#include "ntklev/harness.hpp"

#include <atomic>
#include <cstdlib>

using namespace ntklev;

TEST_CASE("gates") {
  CHECK(make_gate("a", 1.0, "<=", 1.0).pass);
  CHECK_FALSE(make_gate("a", 1.0, "<", 1.0).pass);
  CHECK(make_gate("a", 2.0, ">", 1.0).pass);
  CHECK_FALSE(make_gate("a", 0.5, ">=", 1.0).pass);
  CHECK_FALSE(make_gate("a", std::nan(""), "<=", 1.0).pass);
  CHECK_THROWS_AS(make_gate("a", 1.0, "==", 1.0), std::invalid_argument);
}

TEST_CASE("report json is self-contained") {
  ExperimentReport rep;
  rep.experiment = "woodbury";
  rep.trials = 3;
  rep.metrics["x"] = {1.0, 2.0};
  rep.add_gate("x_max", 2.0, "<=", 2.5);
  CHECK(rep.pass());
  json j = rep.to_json();
  CHECK(j["schema"] == 1);
  CHECK(j["pass"] == true);
  CHECK(j["gates"][0]["threshold"] == 2.5);
  CHECK(j["gates"][0]["op"] == "<=");
  CHECK(j["config"]["n"] == rep.config.n);
  rep.add_gate("x_min", 1.0, ">", 1.0);
  CHECK_FALSE(rep.pass());
  CHECK(rep.to_json()["pass"] == false);
}

TEST_CASE("parallel_for visits every index once and propagates errors") {
  std::vector<std::atomic<int>> hits(100);
  parallel_for(100, [&](Index i) { hits[static_cast<std::size_t>(i)]++; });
  for (auto& h : hits) CHECK(h.load() == 1);
  CHECK_THROWS_AS(parallel_for(10, [](Index i) {
                    if (i == 7) throw std::runtime_error("boom");
                  }),
                  std::runtime_error);
}

TEST_CASE("results do not depend on the worker count") {
  ExperimentConfig cfg;
  cfg.n = 6;
  cfg.trials = 6;
  setenv("NTKLEV_THREADS", "1", 1);
  const auto serial = run_woodbury(cfg).metrics;
  const auto serial_sandwich = run_spectral_rate([] {
    ExperimentConfig c;
    c.n = 8;
    c.trials = 2;
    c.m_sweep = {16, 64};
    return c;
  }()).metrics;
  setenv("NTKLEV_THREADS", "4", 1);
  CHECK(run_woodbury(cfg).metrics == serial);
  ExperimentConfig c;
  c.n = 8;
  c.trials = 2;
  c.m_sweep = {16, 64};
  CHECK(run_spectral_rate(c).metrics == serial_sandwich);
  unsetenv("NTKLEV_THREADS");
}

TEST_CASE("experiment preconditions") {
  ExperimentConfig cfg;
  cfg.eps = 0.5;
  CHECK_THROWS_AS(run_spectral_sandwich(cfg), ConfigError);
  cfg = ExperimentConfig{};
  cfg.kappa = 0.5;
  CHECK_THROWS_AS(run_train_equiv(cfg), ConfigError);
  CHECK_THROWS_AS(run_leverage_equiv(cfg), ConfigError);
  cfg = ExperimentConfig{};
  cfg.c_lambda = 100.0;
  CHECK_THROWS_AS(run_leverage_equiv(cfg), ConfigError);
}

TEST_CASE("exact eigen-factor arm certifies trivially") {
  ExperimentConfig cfg;
  cfg.n = 10;
  cfg.d = 3;
  cfg.eps = 0.3;
  cfg.delta = 0.1;
  cfg.trials = 2;
  const ExperimentReport rep = run_spectral_sandwich(cfg);
  CHECK(rep.metrics.at("exact_arm_deviation")[0] < 1e-10);
  const double s = rep.metrics.at("s_lambda")[0];
  CHECK(rep.metrics.at("m")[0] == static_cast<double>(required_m(0.3, 0.1, s, s)));
}

TEST_CASE("envelope check on synthetic records") {
  // A trajectory that never moves satisfies every envelope.
  std::vector<TrainRecord> recs(3);
  VectorXd Y = VectorXd::Ones(4);
  for (int k = 0; k < 3; ++k) {
    recs[k].t = k;
    recs[k].u_nn = Y;
  }
  EnvelopeCheck ok = check_envelopes(recs, Y, Y, 3, 100, 1.0, 0.1, 0.2, 0.05, 0.01);
  CHECK(ok.weights_ok);
  CHECK(ok.kernel_ok);
  CHECK(ok.gap_ok);
  // A weight jump beyond eps_w is caught.
  recs[2].max_weight_drift = ok.eps_w * 2 + 1;
  recs[1].u_nn = Y * 3;
  EnvelopeCheck bad = check_envelopes(recs, Y, Y, 3, 100, 1.0, 0.1, 0.2, 0.05, 0.01);
  CHECK_FALSE(bad.weights_ok);
  CHECK_FALSE(bad.gap_ok);
}

TEST_CASE("krr flow suite on a scaled-down config") {
  ExperimentConfig cfg;
  cfg.n = 5;
  cfg.eps = 1e-6;
  cfg.trials = 2;
  const ExperimentReport rep = run_krr_flow(cfg);
  CHECK(rep.pass());
  CHECK(rep.metrics.at("closed_vs_rk4").size() == 2);
}
