#pragma once

#include "ntklev/data_model.hpp"
#include "ntklev/features.hpp"
#include "ntklev/kernels.hpp"

#include <memory>
#include <optional>
#include <vector>

namespace ntklev {

/// Optimal KRR predictor u* = kappa^2 K (kappa^2 K + lambda I)^{-1} Y.
/// alpha solves (kappa^2 K + lambda I) alpha = kappa Y, so u* = kappa K alpha.
struct KrrSolution {
  VectorXd alpha;
  VectorXd u_star;
  std::optional<double> u_test_star;
  double kappa = 1.0;
  double lambda = 0.0;
  std::shared_ptr<const Eigen::LLT<MatrixXd>> factor;  // of kappa^2 K + lambda I
};

/// Throws SingularSystemError when lambda = 0 and K is numerically singular.
KrrSolution solve_krr_dual(const KernelMatrix& K, const VectorXd& Y, double lambda, double kappa,
                           const std::optional<VectorXd>& k_test = std::nullopt);

/// kappa^2 k^T (kappa^2 K + lambda I)^{-1} Y.
double predict_test(const VectorXd& k_vec, const KrrSolution& sol);

/// Feature-space ridge solve (Psi^T Psi + lambda I) w = Psi^T Y.
struct PrimalSolution {
  VectorXd coef;   // length m * d2
  VectorXd u_hat;  // Psi coef
  double predict(const VectorXd& feature_row) const { return feature_row.dot(coef); }
};

PrimalSolution solve_krr_primal(const FeatureMatrix& F, const VectorXd& Y, double lambda);

struct KrrTrajectory {
  std::vector<double> times;
  std::vector<VectorXd> u_ntk;
  std::vector<double> u_ntk_test;  // empty when no test kernel vector was supplied
};

/// u(t) = u* - exp(-(kappa^2 K + lambda I) t) u* for the flow
/// du/dt = kappa^2 K (Y - u) - lambda u, u(0) = 0. The test prediction follows
/// du_test/dt = kappa^2 k^T (Y - u) - lambda u_test, u_test(0) = 0.
KrrTrajectory krr_flow_closed(const KernelMatrix& K, const VectorXd& Y, double lambda,
                              double kappa, const std::vector<double>& times,
                              const std::optional<VectorXd>& k_test = std::nullopt);

/// Classical RK4 on the joint (u, u_test) system with N = ceil(T/dt) equal
/// steps; every step is recorded. Requires dt (kappa^2 ||K|| + lambda) < 0.1.
KrrTrajectory krr_flow_integrated(const KernelMatrix& K, const VectorXd& Y, double lambda,
                                  double kappa, double dt, double T,
                                  const std::optional<VectorXd>& k_test = std::nullopt);

}  // namespace ntklev
