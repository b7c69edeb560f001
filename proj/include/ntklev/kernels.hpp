#pragma once

#include "ntklev/data_model.hpp"

#include <string>

namespace ntklev {

enum class KernelKind { ntk_exact, ntk_empirical, feature_gram, rbf_exact };

std::string to_string(KernelKind k);
KernelKind kernel_kind_from_string(const std::string& s);

struct KernelMatrix {
  MatrixXd values;
  KernelKind kind = KernelKind::feature_gram;

  Index size() const { return values.rows(); }
};

/// K + lambda*I with a cached symmetric eigendecomposition
/// K + lambda*I = U diag(sigma2) U^T (ascending sigma2).
class RegularizedKernel {
 public:
  RegularizedKernel(KernelMatrix K, double lambda);

  const KernelMatrix& kernel() const { return K_; }
  double lambda() const { return lambda_; }
  Index size() const { return K_.size(); }

  const MatrixXd& eigenvectors() const { return U_; }
  const VectorXd& eigenvalues() const { return sigma2_; }

  /// Smallest eigenvalue of K itself (Lambda_0 for the NTK Gram).
  double min_kernel_eigenvalue() const { return sigma2_(0) - lambda_; }

  /// (K + lambda I)^{-1} B.
  MatrixXd solve(const MatrixXd& B) const;
  /// diag(sigma)^{-1} U^T B; ||whiten(B)||_F^2 = Tr[B^T (K+lambda I)^{-1} B].
  MatrixXd whiten(const MatrixXd& B) const;
  /// (K + lambda I)^{-1/2} M (K + lambda I)^{-1/2} expressed in the eigenbasis.
  MatrixXd whiten_two_sided(const MatrixXd& M) const;

 private:
  KernelMatrix K_;
  double lambda_;
  MatrixXd U_;
  VectorXd sigma2_;
};

/// Closed-form NTK entry for unit vectors:
/// <x,z> (pi - arccos<x,z>) / (2 pi), inner product clamped to [-1, 1].
double ntk_entry(double inner);

/// H^cts on unit-norm rows. Throws std::domain_error on non-unit rows.
KernelMatrix ntk_gram(const MatrixXd& X);

/// Entry i is the closed-form NTK value between x_test and row i of X.
VectorXd ntk_kernel_vec(const VectorXd& x_test, const MatrixXd& X);

/// Monte-Carlo estimate of the defining expectation
/// E_w[<x_i,x_j> 1{w.x_i >= 0} 1{w.x_j >= 0}] with `samples` Gaussian draws.
KernelMatrix ntk_gram_mc(const MatrixXd& X, Index samples, const SeedStream& seed);

/// exp(-sigma_w^2 |x - z|^2 / 2).
KernelMatrix rbf_gram(const MatrixXd& X, double sigma_w);
VectorXd rbf_kernel_vec(const VectorXd& x, const MatrixXd& X, double sigma_w);

/// Tr[(K + lambda I)^{-1} K]. Throws NotPsdError when K has an eigenvalue
/// below -1e-8 ||K||.
double statistical_dimension(const KernelMatrix& K, double lambda);
double statistical_dimension(const RegularizedKernel& RK);

double min_eigenvalue(const KernelMatrix& K);
double spectral_norm(const MatrixXd& M);

struct SandwichCertificate {
  bool holds = false;
  double worst_deviation = 0.0;  // ||(K+lambda I)^{-1/2} (A_raw - K) (K+lambda I)^{-1/2}||_2
  double min_whitened_eig = 0.0;
  double max_whitened_eig = 0.0;
};

/// Certifies (1-eps)(K+lambda I) <= A_raw + lambda I <= (1+eps)(K+lambda I)
/// through the whitened difference. A_raw is the unregularized empirical Gram.
SandwichCertificate psd_sandwich_check(const KernelMatrix& A_raw, const RegularizedKernel& B,
                                       double eps);

}  // namespace ntklev
