#pragma once

#include "ntklev/data_model.hpp"
#include "ntklev/io.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <map>
#include <string>
#include <vector>

namespace ntklev {

/// One pass/fail decision: `value op threshold`.
struct Gate {
  std::string name;
  double value = 0.0;
  std::string op;  // "<=", ">=", "<" or ">"
  double threshold = 0.0;
  bool pass = false;
};

Gate make_gate(std::string name, double value, std::string op, double threshold);

struct ExperimentReport {
  static constexpr int kSchema = 1;

  std::string experiment;
  ExperimentConfig config;  // effective configuration, after experiment defaults
  Index trials = 0;
  std::map<std::string, std::vector<double>> metrics;
  std::vector<Gate> gates;
  std::vector<std::string> relaxations;
  double elapsed = 0.0;

  bool pass() const;
  void add_gate(std::string name, double value, std::string op, double threshold);
  json to_json() const;
};

/// Worker count from NTKLEV_THREADS, else hardware concurrency.
unsigned worker_count();

/// Runs body(i) for i in [0, count) on the worker pool. Each index writes to
/// its own slot, so results do not depend on scheduling.
void parallel_for(Index count, const std::function<void(Index)>& body);

Dataset experiment_dataset(const ExperimentConfig& cfg);

/// Default trial counts per experiment.
Index resolved_trials(const ExperimentConfig& cfg, Index fallback);

/// Leverage-sampled feature builds at m = required_m(eps, delta, s, s),
/// certified with the whitened sandwich check; Gaussian arm at equal m.
ExperimentReport run_spectral_sandwich(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// Log-log slope of the median whitened deviation against m for both samplers.
ExperimentReport run_spectral_rate(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// Closed-form NTK versus Monte-Carlo over random unit pairs.
ExperimentReport run_ntk_closed_form(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// Gram artifacts plus PSD and spectrum diagnostics.
ExperimentReport run_kernel(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// Initialization concentration bounds across the width sweep.
ExperimentReport run_concentration(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// Closed-form versus RK4 KRR flow, linear decay, and horizon accuracy.
ExperimentReport run_krr_flow(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// Gaussian-initialized training against u* across the width sweep, with the
/// drift envelopes checked on the widest runs.
ExperimentReport run_train_equiv(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// Small-kappa training against u*_test at the widest m.
ExperimentReport run_test_equiv(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// Reweighed network under leverage-score initialization.
ExperimentReport run_leverage_equiv(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// Dual / primal ridge agreement on random feature matrices.
ExperimentReport run_woodbury(const ExperimentConfig& cfg,
                                const std::optional<std::filesystem::path>& artifacts = std::nullopt);

/// Writes report.json into `dir` and prints one PASS/FAIL line per gate.
void emit_report(const ExperimentReport& report, const std::filesystem::path& dir);

/// Checks the kernel-perturbation induction envelopes on one trajectory.
struct EnvelopeCheck {
  double eps_w = 0.0;
  double worst_weight_margin = 0.0;  // max over records of drift - eps_w
  double worst_kernel_margin = 0.0;  // max of ||H(t)-H(0)||_F - 2 n eps_w
  double worst_gap_margin = 0.0;     // max of gap^2 - envelope(t)
  bool weights_ok = false;
  bool kernel_ok = false;
  bool gap_ok = false;
};

EnvelopeCheck check_envelopes(const std::vector<TrainRecord>& records, const VectorXd& Y,
                              const VectorXd& u_star, Index d, Index m, double kappa,
                              double lambda, double lambda0, double delta, double eps_train);

/// Command-line entry point. Exit codes: 0 all gates pass, 1 a gate failed,
/// 2 configuration error.
int cli_main(int argc, char** argv);

}  // namespace ntklev
