#pragma once

#include "ntklev/data_model.hpp"
#include "ntklev/kernels.hpp"

#include <cstddef>
#include <functional>
#include <optional>
#include <vector>

namespace ntklev {

/// Feature map phi(x, w) with base density p = N(0, I_d).
///   relu_ntk:    phi(x, w) = x * 1{w.x >= 0}                (d2 = d)
///   fourier_rbf: phi(x, w) = [cos(s w.x), sin(s w.x)], s = sigma_w   (d2 = 2)
struct FeatureFamily {
  FeatureFamilyName name = FeatureFamilyName::relu_ntk;
  double sigma_w = 1.0;

  Index output_dim(Index d) const { return name == FeatureFamilyName::relu_ntk ? d : 2; }
};

/// Exact kernel E_p[phi(x,w)^T phi(z,w)] of the family.
KernelMatrix exact_kernel(const FeatureFamily& family, const MatrixXd& X);
VectorXd exact_kernel_vec(const FeatureFamily& family, const VectorXd& x, const MatrixXd& X);

struct FeatureSample {
  VectorXd w;
  double weight = 1.0;                // sqrt(p(w)/q(w)); exactly 1 when drawn from p
  std::optional<double> lev_ratio;    // q_lambda(w)/p(w), set by the leverage sampler
};

struct FeatureMatrix {
  MatrixXd psi_bar;  // n x (m * d2); block r of row i is weight_r * phi(x_i, w_r) / sqrt(m)
  std::vector<FeatureSample> samples;
  FeatureFamily family;

  KernelMatrix gram() const;
};

VectorXd phi(const FeatureFamily& family, const VectorXd& x, const VectorXd& w);

/// Phi(w): row i is phi(x_i, w)^T (n x d2).
MatrixXd phi_stack(const FeatureFamily& family, const MatrixXd& X, const VectorXd& w);

std::vector<FeatureSample> sample_gaussian_features(const FeatureFamily& family, Index m, Index d,
                                                    const SeedStream& seed);

/// Tr[Phi(w)^T (K + lambda I)^{-1} Phi(w)] = q_lambda(w) / p(w).
double ridge_leverage_ratio(const FeatureFamily& family, const VectorXd& w, const MatrixXd& X,
                            const RegularizedKernel& RK);

/// Precomputes the whitening so repeated ratio evaluations cost O(n^2 d2).
class LeverageScorer {
 public:
  LeverageScorer(FeatureFamily family, const MatrixXd& X, const RegularizedKernel& RK);

  double ratio(const VectorXd& w) const;
  /// n / (Lambda_0 + lambda): upper bound on ratio(w) for features with
  /// ||Phi(w)||_F^2 <= n.
  double envelope() const { return envelope_; }
  double statistical_dimension() const { return s_lambda_; }
  const FeatureFamily& family() const { return family_; }
  Index input_dim() const { return X_.cols(); }

 private:
  FeatureFamily family_;
  MatrixXd X_;
  MatrixXd whitener_;  // diag(sigma)^{-1} U^T
  double envelope_;
  double s_lambda_;
};

/// Any density ratio q~(w)/p(w) that dominates the exact ridge leverage ratio,
/// together with an upper bound on it and its integral s_q~ = E_p[q~/p].
struct LeverageUpperBound {
  std::function<double(const VectorXd&)> ratio;
  double envelope;
  double integral;
};

struct LeverageSamplerStats {
  std::size_t proposals = 0;
  std::size_t accepted = 0;
  double envelope = 0.0;
  double s_lambda = 0.0;
  /// Mean acceptance probability s_lambda / envelope.
  double expected_acceptance() const { return s_lambda / envelope; }
};

/// Rejection sampler for q(w) = q_lambda(w) / s_lambda: propose w ~ N(0, I),
/// accept with probability ratio(w)/envelope. Accepted samples carry
/// weight sqrt(s_lambda / ratio(w)). Throws InfeasibleError after 10^6 * m
/// proposals.
std::vector<FeatureSample> sample_leverage_features(const LeverageScorer& scorer, Index m,
                                                    const SeedStream& seed,
                                                    LeverageSamplerStats* stats = nullptr);

std::vector<FeatureSample> sample_leverage_features(const FeatureFamily& family, Index m,
                                                    const MatrixXd& X, const RegularizedKernel& RK,
                                                    const SeedStream& seed,
                                                    LeverageSamplerStats* stats = nullptr);

/// Sampling from a user-supplied dominating density q~ / s_q~.
std::vector<FeatureSample> sample_leverage_features(const LeverageUpperBound& bound, Index d,
                                                    Index m, const SeedStream& seed,
                                                    LeverageSamplerStats* stats = nullptr);

FeatureMatrix build_feature_matrix(const MatrixXd& X, const std::vector<FeatureSample>& samples,
                                   const FeatureFamily& family);

/// eps in (0, 1/2]. ceil(3 eps^-2 s_qtilde ln(16 s_qtilde s_lambda / delta)); 0 when s_qtilde = 0.
std::size_t required_m(double eps, double delta, double s_qtilde, double s_lambda);

}  // namespace ntklev
