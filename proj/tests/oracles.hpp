#pragma once

// Reference computations written independently of the library code paths.

#include <Eigen/Dense>

#include <cmath>
#include <random>

namespace oracle {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline VectorXd unit(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> g;
  VectorXd v(d);
  for (int k = 0; k < d; ++k) v(k) = g(rng);
  return v / v.norm();
}

inline MatrixXd unit_rows(std::mt19937_64& rng, int n, int d) {
  MatrixXd X(n, d);
  for (int i = 0; i < n; ++i) X.row(i) = unit(rng, d).transpose();
  return X;
}

// Monte-Carlo estimate of E_w[<x,z> 1{w.x >= 0} 1{w.z >= 0}] and its standard error.
inline std::pair<double, double> ntk_mc(const VectorXd& x, const VectorXd& z, long samples,
                                        std::mt19937_64& rng) {
  std::normal_distribution<double> g;
  const double inner = x.dot(z);
  long hits = 0;
  VectorXd w(x.size());
  for (long s = 0; s < samples; ++s) {
    for (int k = 0; k < w.size(); ++k) w(k) = g(rng);
    if (w.dot(x) >= 0 && w.dot(z) >= 0) ++hits;
  }
  const double p = static_cast<double>(hits) / samples;
  return {inner * p, std::abs(inner) * std::sqrt(p * (1 - p) / samples)};
}

// Smallest eigenvalue of a symmetric matrix by power iteration on shift*I - A.
inline double min_eig_power(const MatrixXd& A, int iters = 20000) {
  const double shift = A.cwiseAbs().rowwise().sum().maxCoeff();
  const MatrixXd B = shift * MatrixXd::Identity(A.rows(), A.cols()) - A;
  VectorXd v = VectorXd::Ones(A.rows()) / std::sqrt(static_cast<double>(A.rows()));
  v(0) += 0.1;
  double mu = 0;
  for (int it = 0; it < iters; ++it) {
    VectorXd next = B * v;
    mu = next.norm();
    v = next / mu;
  }
  return shift - v.dot(B * v);
}

// Largest |generalized eigenvalue - 1| of (A + lambda I) v = mu (K + lambda I) v.
inline double sandwich_deviation(const MatrixXd& A, const MatrixXd& K, double lambda) {
  const auto n = K.rows();
  const MatrixXd I = MatrixXd::Identity(n, n);
  Eigen::GeneralizedSelfAdjointEigenSolver<MatrixXd> ges(A + lambda * I, K + lambda * I);
  return (ges.eigenvalues().array() - 1.0).abs().maxCoeff();
}

// relu network output written as an explicit double loop.
inline double net_output(const MatrixXd& W, const VectorXd& a, const VectorXd& rho, double kappa,
                         const VectorXd& x) {
  double s = 0;
  for (int r = 0; r < W.cols(); ++r) {
    double pre = 0;
    for (int k = 0; k < W.rows(); ++k) pre += W(k, r) * x(k);
    s += a(r) * rho(r) * (pre > 0 ? pre : 0.0);
  }
  return kappa * s / std::sqrt(static_cast<double>(W.cols()));
}

inline double net_loss(const MatrixXd& W, const VectorXd& a, const VectorXd& rho, double kappa,
                       double lambda, const MatrixXd& X, const VectorXd& Y) {
  double fit = 0;
  for (int i = 0; i < X.rows(); ++i) {
    const double e = Y(i) - net_output(W, a, rho, kappa, X.row(i).transpose());
    fit += e * e;
  }
  return 0.5 * fit + 0.5 * lambda * W.squaredNorm();
}

}  // namespace oracle
