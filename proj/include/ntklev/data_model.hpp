#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace ntklev {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kUnitNormTol = 1e-12;

/// Identifies an independent random substream. Identical (master_seed,
/// stream_id) pairs reproduce identical draws bit-for-bit.
struct SeedStream {
  std::uint64_t master_seed = 0;
  std::uint64_t stream_id = 0;

  std::mt19937_64 engine() const;
  /// Deterministic child stream; distinct k give distinct streams.
  SeedStream substream(std::uint64_t k) const;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Unit-norm inputs X (n x d, one sample per row), labels Y, optional test point.
struct Dataset {
  MatrixXd X;
  VectorXd Y;
  std::optional<VectorXd> x_test;

  Index n() const { return X.rows(); }
  Index d() const { return X.cols(); }
};

enum class ViolationKind { norm, label, separation, shape, non_finite };

struct Violation {
  ViolationKind kind;
  std::vector<Index> rows;  // row indices involved; x_test is reported as -1
  double value;             // measured quantity (norm, |y|, distance)
  std::string message;
};

/// Rows drawn uniformly on the unit sphere; points closer than delta_sep to an
/// earlier row are redrawn. Throws InfeasibleError after 1000*n redraws.
Dataset generate_dataset(Index n, Index d, const SeedStream& seed, double delta_sep);

/// Empty iff every Dataset invariant holds. Never throws.
std::vector<Violation> validate_dataset(const Dataset& ds, double delta_sep, double y_max = 1.0);

/// Uniform draw on the unit sphere S^{d-1}.
VectorXd sample_unit_sphere(Index d, std::mt19937_64& rng);

VectorXd sample_standard_normal(Index d, std::mt19937_64& rng);

/// Throws std::domain_error unless every row of X has unit Euclidean norm.
void require_unit_rows(const MatrixXd& X, const char* what);
void require_unit_vector(const VectorXd& x, const char* what);

enum class FeatureFamilyName { relu_ntk, fourier_rbf };
enum class InitKind { gaussian, leverage };

std::string to_string(FeatureFamilyName f);
std::string to_string(InitKind k);

/// Experiment parameters. JSON keys are the snake_case field names.
///
/// `lambda` is an absolute ridge used by the kernel/krr/train pipelines. The
/// equivalence suites derive their ridge from `c_lambda / sqrt(m)` and the
/// spectral suite from `lambda_rel * ||K||_2`.
struct ExperimentConfig {
  Index n = 8;
  Index d = 4;
  Index m = 4096;
  double kappa = 1.0;
  double lambda = 0.01;
  double eps = 0.05;
  /// Accuracy used by the test-prediction suite to set kappa = c_kappa eps_test Lambda0 / n.
  double eps_test = 0.5;
  double delta = 0.05;
  double eta = 0.1;
  Index steps = 1000;
  std::uint64_t seed = 42;
  FeatureFamilyName feature_family = FeatureFamilyName::relu_ntk;
  InitKind init = InitKind::gaussian;

  // Constants in the horizon, ridge and multiplier scalings.
  double c = 4.0;
  double c_kappa = 1.0;
  double c_lambda = 0.01;
  double lambda_rel = 0.1;
  double sigma_w = 1.0;
  double delta_sep = 0.01;
  Index trials = 0;  // 0 selects the experiment's default trial count
  Index diag_every = 10;
  std::vector<Index> m_sweep = {64, 256, 1024, 4096};

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

}  // namespace ntklev
