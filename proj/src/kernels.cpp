#include "ntklev/kernels.hpp"

#include "ntklev/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace ntklev {

std::string to_string(KernelKind k) {
  switch (k) {
    case KernelKind::ntk_exact: return "ntk_exact";
    case KernelKind::ntk_empirical: return "ntk_empirical";
    case KernelKind::feature_gram: return "feature_gram";
    case KernelKind::rbf_exact: return "rbf_exact";
  }
  return "unknown";
}

KernelKind kernel_kind_from_string(const std::string& s) {
  if (s == "ntk_exact") return KernelKind::ntk_exact;
  if (s == "ntk_empirical") return KernelKind::ntk_empirical;
  if (s == "feature_gram") return KernelKind::feature_gram;
  if (s == "rbf_exact") return KernelKind::rbf_exact;
  throw std::invalid_argument("unknown kernel kind '" + s + "'");
}

RegularizedKernel::RegularizedKernel(KernelMatrix K, double lambda)
    : K_(std::move(K)), lambda_(lambda) {
  if (K_.values.rows() != K_.values.cols())
    throw std::invalid_argument("RegularizedKernel: kernel matrix must be square");
  if (!(lambda_ >= 0.0)) throw std::invalid_argument("RegularizedKernel: lambda must be >= 0");
  const Index n = K_.size();
  MatrixXd A = K_.values;
  A.diagonal().array() += lambda_;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(A);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("RegularizedKernel: eigendecomposition failed");
  U_ = es.eigenvectors();
  sigma2_ = es.eigenvalues();
  if (n > 0 && !(sigma2_(0) > 0.0))
    throw SingularSystemError("RegularizedKernel: K + lambda I is not positive definite");
}

MatrixXd RegularizedKernel::solve(const MatrixXd& B) const {
  return U_ * (sigma2_.cwiseInverse().asDiagonal() * (U_.transpose() * B));
}

MatrixXd RegularizedKernel::whiten(const MatrixXd& B) const {
  return sigma2_.cwiseSqrt().cwiseInverse().asDiagonal() * (U_.transpose() * B);
}

MatrixXd RegularizedKernel::whiten_two_sided(const MatrixXd& M) const {
  const VectorXd s = sigma2_.cwiseSqrt().cwiseInverse();
  MatrixXd W = s.asDiagonal() * (U_.transpose() * M * U_) * s.asDiagonal();
  return 0.5 * (W + W.transpose());
}

double ntk_entry(double inner) {
  const double c = std::clamp(inner, -1.0, 1.0);
  return c * (std::numbers::pi - std::acos(c)) / (2.0 * std::numbers::pi);
}

namespace {

// Angle from the chord lengths; acos(x.z) loses half the digits near x = z.
double ntk_pair(const VectorXd& x, const VectorXd& z) {
  const double theta = 2.0 * std::atan2((x - z).norm(), (x + z).norm());
  return std::clamp(x.dot(z), -1.0, 1.0) * (std::numbers::pi - theta) / (2.0 * std::numbers::pi);
}

}  // namespace

KernelMatrix ntk_gram(const MatrixXd& X) {
  require_unit_rows(X, "ntk_gram");
  const Index n = X.rows();
  KernelMatrix K{MatrixXd(n, n), KernelKind::ntk_exact};
  for (Index j = 0; j < n; ++j) {
    for (Index i = j; i < n; ++i) {
      const double v = i == j ? 0.5 : ntk_pair(X.row(i).transpose(), X.row(j).transpose());
      K.values(i, j) = v;
      K.values(j, i) = v;
    }
  }
  return K;
}

VectorXd ntk_kernel_vec(const VectorXd& x_test, const MatrixXd& X) {
  require_unit_vector(x_test, "ntk_kernel_vec");
  require_unit_rows(X, "ntk_kernel_vec");
  if (x_test.size() != X.cols()) throw std::invalid_argument("ntk_kernel_vec: dimension mismatch");
  VectorXd k(X.rows());
  for (Index i = 0; i < X.rows(); ++i) k(i) = ntk_pair(x_test, X.row(i).transpose());
  return k;
}

KernelMatrix ntk_gram_mc(const MatrixXd& X, Index samples, const SeedStream& seed) {
  require_unit_rows(X, "ntk_gram_mc");
  if (samples < 1) throw std::invalid_argument("ntk_gram_mc: samples must be >= 1");
  const Index n = X.rows();
  const MatrixXd G = X * X.transpose();
  auto rng = seed.engine();
  MatrixXd counts = MatrixXd::Zero(n, n);
  Eigen::VectorXd act(n);
  for (Index s = 0; s < samples; ++s) {
    const VectorXd w = sample_standard_normal(X.cols(), rng);
    act = ((X * w).array() >= 0.0).cast<double>().matrix();
    counts.noalias() += act * act.transpose();
  }
  return {G.cwiseProduct(counts) / static_cast<double>(samples), KernelKind::ntk_empirical};
}

KernelMatrix rbf_gram(const MatrixXd& X, double sigma_w) {
  const Index n = X.rows();
  KernelMatrix K{MatrixXd(n, n), KernelKind::rbf_exact};
  for (Index j = 0; j < n; ++j)
    for (Index i = j; i < n; ++i) {
      const double v = std::exp(-0.5 * sigma_w * sigma_w * (X.row(i) - X.row(j)).squaredNorm());
      K.values(i, j) = v;
      K.values(j, i) = v;
    }
  return K;
}

VectorXd rbf_kernel_vec(const VectorXd& x, const MatrixXd& X, double sigma_w) {
  if (x.size() != X.cols()) throw std::invalid_argument("rbf_kernel_vec: dimension mismatch");
  VectorXd k(X.rows());
  for (Index i = 0; i < X.rows(); ++i)
    k(i) = std::exp(-0.5 * sigma_w * sigma_w * (X.row(i).transpose() - x).squaredNorm());
  return k;
}

namespace {

VectorXd checked_eigenvalues(const KernelMatrix& K) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(K.values, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw std::runtime_error("eigendecomposition failed");
  const VectorXd ev = es.eigenvalues();
  if (ev.size() == 0) return ev;
  const double scale = ev.cwiseAbs().maxCoeff();
  if (ev(0) < -1e-8 * scale) {
    std::ostringstream os;
    os << "kernel matrix is not PSD: smallest eigenvalue " << ev(0);
    throw NotPsdError(os.str());
  }
  return ev;
}

}  // namespace

double statistical_dimension(const KernelMatrix& K, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("statistical_dimension: lambda must be > 0");
  const VectorXd ev = checked_eigenvalues(K);
  double s = 0.0;
  for (Index i = 0; i < ev.size(); ++i) {
    const double l = std::max(ev(i), 0.0);
    s += l / (l + lambda);
  }
  return s;
}

double statistical_dimension(const RegularizedKernel& RK) {
  return statistical_dimension(RK.kernel(), RK.lambda());
}

double min_eigenvalue(const KernelMatrix& K) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(K.values, Eigen::EigenvaluesOnly);
  return es.eigenvalues()(0);
}

double spectral_norm(const MatrixXd& M) {
  if (M.size() == 0) return 0.0;
  if (M.rows() == M.cols() && M.isApprox(M.transpose(), 1e-12)) {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (M + M.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }
  Eigen::JacobiSVD<MatrixXd> svd(M);
  return svd.singularValues()(0);
}

SandwichCertificate psd_sandwich_check(const KernelMatrix& A_raw, const RegularizedKernel& B,
                                       double eps) {
  if (A_raw.size() != B.size() || A_raw.values.cols() != B.size())
    throw std::invalid_argument("psd_sandwich_check: dimension mismatch");
  const MatrixXd M = B.whiten_two_sided(A_raw.values - B.kernel().values);
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(M, Eigen::EigenvaluesOnly);
  SandwichCertificate cert;
  if (M.size() == 0) {
    cert.holds = true;
    return cert;
  }
  cert.min_whitened_eig = es.eigenvalues()(0);
  cert.max_whitened_eig = es.eigenvalues()(M.rows() - 1);
  cert.worst_deviation = std::max(std::abs(cert.min_whitened_eig), std::abs(cert.max_whitened_eig));
  cert.holds = cert.worst_deviation <= eps;
  return cert;
}

}  // namespace ntklev
