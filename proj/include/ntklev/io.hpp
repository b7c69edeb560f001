#pragma once

#include "ntklev/data_model.hpp"
#include "ntklev/features.hpp"
#include "ntklev/kernels.hpp"
#include "ntklev/krr.hpp"
#include "ntklev/nn_train.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <vector>

namespace ntklev {

using json = nlohmann::json;

/// Unknown keys and ill-typed values raise ConfigError naming the key.
ExperimentConfig config_from_json(const json& j);
json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Header `x_0,...,x_{d-1},y`; the test point goes to a sidecar with header
/// `x_0,...,x_{d-1}`.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds);
void write_test_point_csv(const std::filesystem::path& path, const VectorXd& x_test);
Dataset read_dataset_csv(const std::filesystem::path& path,
                         const std::optional<std::filesystem::path>& test_path = std::nullopt);

/// n rows of n comma-separated values plus a one-line JSON sidecar
/// {"kind", "n", "lambda"?}.
void write_kernel_csv(const std::filesystem::path& csv, const std::filesystem::path& sidecar,
                      const KernelMatrix& K, std::optional<double> lambda = std::nullopt);
KernelMatrix read_kernel_csv(const std::filesystem::path& csv,
                             const std::filesystem::path& sidecar);

/// Columns w_0..w_{d-1},weight,lev_ratio (lev_ratio empty when not leverage-sampled).
void write_feature_samples_csv(const std::filesystem::path& path,
                               const std::vector<FeatureSample>& samples);
std::vector<FeatureSample> read_feature_samples_csv(const std::filesystem::path& path);

/// Columns t,u_0..u_{n-1},u_test.
void write_trajectory_csv(const std::filesystem::path& path, const KrrTrajectory& traj);

/// Columns step,t,loss,max_weight_drift,kernel_drift,train_gap,u_test.
void write_train_records_csv(const std::filesystem::path& path,
                             const std::vector<TrainRecord>& records);

/// W as a d x m CSV and a two-column a,rho CSV.
void write_checkpoint(const std::filesystem::path& weights, const std::filesystem::path& signs,
                      const TwoLayerNet& net);

MatrixXd read_matrix_csv(const std::filesystem::path& path, bool has_header);

}  // namespace ntklev
