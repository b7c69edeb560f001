#pragma once

#include "ntklev/data_model.hpp"
#include "ntklev/features.hpp"
#include "ntklev/kernels.hpp"

#include <optional>
#include <vector>

namespace ntklev {

/// Two-layer ReLU network f(W, x) = (1/sqrt(m)) sum_r a_r rho_r relu(w_r . x),
/// prediction u = kappa f. Only W trains; a and rho are frozen at
/// initialization.
class TwoLayerNet {
 public:
  TwoLayerNet(MatrixXd W0, VectorXd a, VectorXd rho, double kappa, double lambda);

  const MatrixXd& W() const { return W_; }
  MatrixXd& W() { return W_; }
  const MatrixXd& W0() const { return W0_; }
  const VectorXd& a() const { return a_; }
  const VectorXd& rho() const { return rho_; }
  double kappa() const { return kappa_; }
  double lambda() const { return lambda_; }
  Index width() const { return W_.cols(); }
  Index input_dim() const { return W_.rows(); }

  /// q/p ratio of each first-layer column and the statistical dimension they
  /// were normalized by; empty / 0 for Gaussian initialization.
  VectorXd lev_ratio;
  double s_lambda = 0.0;

 private:
  MatrixXd W_;
  MatrixXd W0_;
  VectorXd a_;
  VectorXd rho_;
  double kappa_;
  double lambda_;
};

/// w_r(0) ~ N(0, I_d), a_r uniform on {-1, +1}, rho = 1.
TwoLayerNet init_gaussian(Index m, Index d, const SeedStream& seed, double kappa, double lambda);

/// w_r(0) drawn from the ridge-leverage density of the relu_ntk features,
/// rho_r = sqrt(p/q)(w_r(0)).
TwoLayerNet init_leverage(Index m, const MatrixXd& X, const RegularizedKernel& RK,
                          const SeedStream& seed, double kappa, double lambda,
                          LeverageSamplerStats* stats = nullptr);

VectorXd forward(const TwoLayerNet& net, const MatrixXd& X);
/// Throws std::domain_error unless x_test has unit norm.
double forward_test(const TwoLayerNet& net, const VectorXd& x_test);

/// 1/2 ||Y - u||^2 + 1/2 lambda ||W||_F^2.
double loss(const TwoLayerNet& net, const MatrixXd& X, const VectorXd& Y);

/// d x m gradient of `loss` with respect to W.
MatrixXd gradient(const TwoLayerNet& net, const MatrixXd& X, const VectorXd& Y);

/// H_ij = (1/m) sum_r rho_r^2 x_i.x_j 1{w_r.x_i >= 0} 1{w_r.x_j >= 0}.
KernelMatrix dynamic_kernel(const TwoLayerNet& net, const MatrixXd& X);
VectorXd dynamic_kernel_test_vec(const TwoLayerNet& net, const VectorXd& x_test,
                                 const MatrixXd& X);

struct HomogeneityCheck {
  double lhs;  // <df/dW, W>
  double rhs;  // f(W, x)
};

/// Evaluates both sides of <df/dW, W> = f(W, x) for the unscaled network f.
/// Inputs sitting exactly on an activation boundary are nudged by 1e-9.
HomogeneityCheck homogeneity_check(const TwoLayerNet& net, VectorXd x);

struct TrainOptions {
  double eta = 0.1;
  Index steps = 1000;
  Index diag_every = 10;
  std::optional<VectorXd> u_star;
  std::optional<VectorXd> x_test;
  /// Reference kernel (e.g. H^cts) and test kernel vector for drift logging.
  std::optional<MatrixXd> reference_kernel;
  std::optional<VectorXd> reference_kernel_vec;
  double divergence_factor = 1e3;
};

struct TrainRecord {
  Index step = 0;
  double t = 0.0;
  VectorXd u_nn;
  double loss = 0.0;
  double max_weight_drift = 0.0;  // max_r ||w_r - w_r(0)||
  double kernel_drift = 0.0;      // ||H(t) - H(0)||_F
  std::optional<double> train_gap;            // ||u_nn - u*||
  std::optional<double> u_test;
  std::optional<VectorXd> k_test;             // k_t(x_test, X)
  std::optional<double> kernel_vec_drift;     // ||k_t - k_0||
  std::optional<double> reference_gap;        // ||H(t) - reference||_F
  std::optional<double> reference_vec_gap;    // ||k_t - reference_vec||
};

/// Largest step size the stability rule eta (kappa^2 ||H(0)|| + lambda) < 0.5
/// admits, scaled by `fraction`.
double stable_step_size(const TwoLayerNet& net, const MatrixXd& X, double fraction = 0.8);

/// Full-batch gradient descent W <- W - eta grad. Records state every
/// diag_every steps and after the final step. Throws ConfigError when the step
/// size violates the stability rule and DivergenceError when the loss exceeds
/// divergence_factor times its initial value.
std::vector<TrainRecord> train(TwoLayerNet& net, const MatrixXd& X, const VectorXd& Y,
                               const TrainOptions& opts);

/// Weight-drift radius from the kernel-perturbation induction:
///   sqrt(n/m) max{4 ||u(0)-u*|| / (kappa^2 Lambda0 + lambda), eps_train T}
///   + (sqrt(n/m) ||Y - u*|| + lambda * init_norm_bound) T
/// with init_norm_bound = 2 sqrt(d) + 2 sqrt(log(m/delta)) for Gaussian
/// initialization.
struct DriftBoundInputs {
  Index n;
  Index m;
  double kappa;
  double lambda;
  double lambda0;
  double init_gap;       // ||u_nn(0) - u*||
  double label_gap;      // ||Y - u*||
  double eps_train;
  double horizon;        // T
  double init_norm_bound;
};

double weight_drift_bound(const DriftBoundInputs& in);
double gaussian_init_norm_bound(Index d, Index m, double delta);

}  // namespace ntklev
