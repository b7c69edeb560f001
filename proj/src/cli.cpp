#include "ntklev/harness.hpp"

#include "ntklev/errors.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>

namespace ntklev {

namespace fs = std::filesystem;

namespace {

struct CliArgs {
  std::string config;
  std::string out;
  std::optional<Index> trials;
  std::optional<std::uint64_t> seed;
  std::string experiment;
};

ExperimentConfig resolve_config(const CliArgs& args) {
  ExperimentConfig cfg = load_config(args.config);
  if (args.trials) cfg.trials = *args.trials;
  if (args.seed) cfg.seed = *args.seed;
  cfg.validate();
  return cfg;
}

ExperimentReport run_gen_data(const ExperimentConfig& cfg, const fs::path& out) {
  ExperimentReport rep;
  rep.experiment = "dataset";
  rep.config = cfg;
  rep.trials = 1;
  const Dataset ds = experiment_dataset(cfg);
  const auto violations = validate_dataset(ds, cfg.delta_sep);
  double min_dist = std::numeric_limits<double>::infinity();
  for (Index i = 0; i < ds.n(); ++i)
    for (Index j = i + 1; j < ds.n(); ++j)
      min_dist = std::min(min_dist, (ds.X.row(i) - ds.X.row(j)).norm());
  rep.metrics["min_pair_distance"] = {min_dist};
  rep.add_gate("violations", static_cast<double>(violations.size()), "<=", 0.0);
  fs::create_directories(out);
  write_dataset_csv(out / "dataset.csv", ds);
  write_test_point_csv(out / "test_point.csv", *ds.x_test);
  return rep;
}

// One run with the configured eta, steps, kappa, lambda and initialization.
ExperimentReport run_single_train(const ExperimentConfig& cfg, const fs::path& out) {
  ExperimentReport rep;
  rep.experiment = "train";
  rep.config = cfg;
  rep.trials = 1;
  const Dataset ds = experiment_dataset(cfg);
  const KernelMatrix K = ntk_gram(ds.X);
  const double lambda0 = min_eigenvalue(K);
  const VectorXd k_ntk = ntk_kernel_vec(*ds.x_test, ds.X);
  const KrrSolution sol = solve_krr_dual(K, ds.Y, cfg.lambda, cfg.kappa, k_ntk);
  const SeedStream seed = SeedStream{cfg.seed, 2};

  TwoLayerNet net = [&] {
    if (cfg.init == InitKind::gaussian) return init_gaussian(cfg.m, cfg.d, seed, cfg.kappa, cfg.lambda);
    if (!(cfg.lambda > 0.0)) throw ConfigError("lambda", "leverage initialization needs lambda > 0");
    const RegularizedKernel RK(K, cfg.lambda);
    return init_leverage(cfg.m, ds.X, RK, seed, cfg.kappa, cfg.lambda);
  }();

  TrainOptions opts;
  opts.eta = cfg.eta;
  opts.steps = cfg.steps;
  opts.diag_every = cfg.diag_every;
  opts.u_star = sol.u_star;
  opts.x_test = *ds.x_test;
  const auto records = train(net, ds.X, ds.Y, opts);
  const TrainRecord& last = records.back();

  rep.metrics["lambda0"] = {lambda0};
  rep.metrics["final_train_gap"] = {*last.train_gap};
  rep.metrics["final_test_gap"] = {std::abs(*last.u_test - *sol.u_test_star)};
  rep.metrics["final_loss"] = {last.loss};
  rep.metrics["max_weight_drift"] = {last.max_weight_drift};
  rep.add_gate("final_loss_finite", std::isfinite(last.loss) ? 1.0 : 0.0, ">=", 1.0);
  if (cfg.init == InitKind::gaussian) {
    const EnvelopeCheck env = check_envelopes(records, ds.Y, sol.u_star, cfg.d, cfg.m, cfg.kappa,
                                              cfg.lambda, lambda0, cfg.delta, cfg.eps);
    rep.metrics["envelope_eps_w"] = {env.eps_w};
    rep.add_gate("envelope_weight_drift_margin", env.worst_weight_margin, "<=", 0.0);
    rep.add_gate("envelope_kernel_drift_margin", env.worst_kernel_margin, "<=", 0.0);
    rep.add_gate("envelope_training_gap_margin", env.worst_gap_margin, "<=", 1e-12);
  } else {
    const double envelope = static_cast<double>(cfg.n) / (lambda0 + cfg.lambda);
    rep.add_gate("lev_ratio_min", net.lev_ratio.minCoeff(), ">", 0.0);
    rep.add_gate("lev_ratio_max_over_envelope", net.lev_ratio.maxCoeff() / envelope, "<=",
                 1.0 + 1e-10);
  }

  fs::create_directories(out);
  write_train_records_csv(out / "train_records.csv", records);
  write_checkpoint(out / "weights.csv", out / "signs.csv", net);
  return rep;
}

int finish(const std::vector<ExperimentReport>& reports, const fs::path& out, bool nested) {
  bool pass = true;
  json summary;
  summary["schema"] = ExperimentReport::kSchema;
  summary["experiments"] = json::array();
  for (const auto& rep : reports) {
    emit_report(rep, nested ? out / rep.experiment : out);
    summary["experiments"].push_back({{"experiment", rep.experiment}, {"pass", rep.pass()}});
    pass = pass && rep.pass();
  }
  if (nested) {
    summary["pass"] = pass;
    std::ofstream(out / "report.json") << summary.dump(2) << '\n';
  }
  std::cout << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? 0 : 1;
}

int dispatch(const std::string& cmd, const CliArgs& args) {
  const ExperimentConfig cfg = resolve_config(args);
  const fs::path out = args.out;
  const std::string& exp = args.experiment;
  auto unknown = [&]() -> int {
    throw ConfigError("experiment", "unknown experiment '" + exp + "' for " + cmd);
  };

  if (cmd == "gen-data") return finish({run_gen_data(cfg, out)}, out, false);
  if (cmd == "kernel") {
    if (exp.empty() || exp == "gram") return finish({run_kernel(cfg, out)}, out, false);
    if (exp == "closed_form") return finish({run_ntk_closed_form(cfg, out)}, out, false);
    if (exp == "concentration") return finish({run_concentration(cfg, out)}, out, false);
    return unknown();
  }
  if (cmd == "features") {
    if (exp.empty() || exp == "sandwich") return finish({run_spectral_sandwich(cfg, out)}, out, false);
    if (exp == "rate") return finish({run_spectral_rate(cfg, out)}, out, false);
    return unknown();
  }
  if (cmd == "krr") {
    if (exp.empty() || exp == "flow") return finish({run_krr_flow(cfg, out)}, out, false);
    if (exp == "woodbury") return finish({run_woodbury(cfg, out)}, out, false);
    return unknown();
  }
  if (cmd == "train") return finish({run_single_train(cfg, out)}, out, false);
  if (cmd == "equiv") {
    if (exp.empty() || exp == "all") {
      std::vector<ExperimentReport> reps;
      reps.push_back(run_train_equiv(cfg, out / "train_equiv"));
      reps.push_back(run_test_equiv(cfg, out / "test_equiv"));
      reps.push_back(run_leverage_equiv(cfg, out / "leverage_equiv"));
      return finish(reps, out, true);
    }
    if (exp == "train") return finish({run_train_equiv(cfg, out)}, out, false);
    if (exp == "test") return finish({run_test_equiv(cfg, out)}, out, false);
    if (exp == "leverage") return finish({run_leverage_equiv(cfg, out)}, out, false);
    return unknown();
  }
  throw ConfigError("subcommand", "unknown subcommand " + cmd);
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"ntklev: kernel / wide-network equivalence experiments"};
  app.require_subcommand(1);
  CliArgs args;
  const char* names[] = {"gen-data", "kernel", "features", "krr", "train", "equiv"};
  for (const char* name : names) {
    auto* sub = app.add_subcommand(name);
    sub->add_option("--config", args.config, "experiment config JSON")->required();
    sub->add_option("--out", args.out, "output directory")->required();
    sub->add_option("--trials", args.trials, "trial count override")->check(CLI::PositiveNumber);
    sub->add_option("--seed", args.seed, "master seed override");
    sub->add_option("--experiment", args.experiment, "experiment within the subcommand");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    return dispatch(cmd, args);
  } catch (const ConfigError& e) {
    std::cerr << "config error [" << e.field() << "]: " << e.what() << '\n';
    return 2;
  } catch (const InfeasibleError& e) {
    std::cerr << "config error [infeasible]: " << e.what() << '\n';
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "FAIL divergence: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "FAIL error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace ntklev
