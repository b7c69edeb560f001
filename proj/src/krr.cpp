#include "ntklev/krr.hpp"

#include "ntklev/errors.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ntklev {

namespace {

void check_shapes(const KernelMatrix& K, const VectorXd& Y) {
  if (K.values.rows() != K.values.cols() || K.values.rows() != Y.size())
    throw std::invalid_argument("krr: kernel/label dimension mismatch");
}

// Integral of exp(-a (t - s)) exp(-b s) over s in [0, t]; symmetric in (a, b).
double exp_convolution(double a, double b, double t) {
  const double lo = std::min(a, b);
  const double gap = std::max(a, b) - lo;
  if (gap * t < 1e-12) return t * std::exp(-lo * t);
  return std::exp(-lo * t) * (-std::expm1(-gap * t)) / gap;
}

}  // namespace

KrrSolution solve_krr_dual(const KernelMatrix& K, const VectorXd& Y, double lambda, double kappa,
                           const std::optional<VectorXd>& k_test) {
  check_shapes(K, Y);
  if (!(lambda >= 0.0)) throw std::invalid_argument("solve_krr_dual: lambda must be >= 0");
  MatrixXd A = kappa * kappa * K.values;
  A.diagonal().array() += lambda;
  auto llt = std::make_shared<Eigen::LLT<MatrixXd>>(A);
  if (llt->info() != Eigen::Success || llt->rcond() < 1e-14)
    throw SingularSystemError("solve_krr_dual: kappa^2 K + lambda I is singular");
  KrrSolution sol;
  sol.kappa = kappa;
  sol.lambda = lambda;
  sol.alpha = llt->solve(kappa * Y);
  sol.u_star = kappa * (K.values * sol.alpha);
  sol.factor = std::move(llt);
  if (k_test) sol.u_test_star = predict_test(*k_test, sol);
  return sol;
}

double predict_test(const VectorXd& k_vec, const KrrSolution& sol) {
  if (k_vec.size() != sol.alpha.size())
    throw std::invalid_argument("predict_test: kernel vector dimension mismatch");
  return sol.kappa * k_vec.dot(sol.alpha);
}

PrimalSolution solve_krr_primal(const FeatureMatrix& F, const VectorXd& Y, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("solve_krr_primal: lambda must be > 0");
  if (F.psi_bar.rows() != Y.size()) throw std::invalid_argument("solve_krr_primal: shape mismatch");
  const Index s = F.psi_bar.cols();
  MatrixXd A = MatrixXd::Zero(s, s);
  A.selfadjointView<Eigen::Lower>().rankUpdate(F.psi_bar.transpose());
  A.diagonal().array() += lambda;
  Eigen::LLT<MatrixXd> llt(A.selfadjointView<Eigen::Lower>());
  PrimalSolution out;
  out.coef = llt.solve(F.psi_bar.transpose() * Y);
  out.u_hat = F.psi_bar * out.coef;
  return out;
}

KrrTrajectory krr_flow_closed(const KernelMatrix& K, const VectorXd& Y, double lambda,
                              double kappa, const std::vector<double>& times,
                              const std::optional<VectorXd>& k_test) {
  check_shapes(K, Y);
  if (times.empty() || times.front() != 0.0)
    throw std::invalid_argument("krr_flow_closed: times must start at 0");
  for (std::size_t i = 1; i < times.size(); ++i)
    if (!(times[i] > times[i - 1]))
      throw std::invalid_argument("krr_flow_closed: times must be strictly increasing");

  const double k2 = kappa * kappa;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(k2 * K.values);
  const MatrixXd& U = es.eigenvectors();
  const VectorXd rate = es.eigenvalues().array() + lambda;  // eigenvalues of kappa^2 K + lambda I
  if (!(rate.minCoeff() > 0.0))
    throw SingularSystemError("krr_flow_closed: kappa^2 K + lambda I is singular");

  // u* in the eigenbasis: c_j = mu_j / (mu_j + lambda) * (U^T Y)_j.
  const VectorXd UtY = U.transpose() * Y;
  const VectorXd coeff = es.eigenvalues().cwiseQuotient(rate).cwiseProduct(UtY);
  const VectorXd u_star = U * coeff;

  VectorXd kU;
  double k_resid = 0.0;
  if (k_test) {
    if (k_test->size() != Y.size()) throw std::invalid_argument("krr_flow_closed: k_test size");
    kU = U.transpose() * *k_test;
    k_resid = k_test->dot(Y - u_star);
  }

  KrrTrajectory traj;
  traj.times = times;
  traj.u_ntk.reserve(times.size());
  for (double t : times) {
    const VectorXd decay = (-rate * t).array().exp();
    traj.u_ntk.push_back(u_star - U * decay.cwiseProduct(coeff));
    if (k_test) {
      double v = k_resid * exp_convolution(lambda, 0.0, t);
      for (Index j = 0; j < rate.size(); ++j)
        v += kU(j) * coeff(j) * exp_convolution(lambda, rate(j), t);
      traj.u_ntk_test.push_back(k2 * v);
    }
  }
  return traj;
}

KrrTrajectory krr_flow_integrated(const KernelMatrix& K, const VectorXd& Y, double lambda,
                                  double kappa, double dt, double T,
                                  const std::optional<VectorXd>& k_test) {
  check_shapes(K, Y);
  if (!(dt > 0.0) || !(T > 0.0))
    throw ConfigError("dt", "step and horizon must be positive");
  const double k2 = kappa * kappa;
  const double stiffness = k2 * spectral_norm(K.values) + lambda;
  if (!(dt * stiffness < 0.1)) {
    std::ostringstream os;
    os << "dt * (kappa^2 ||K|| + lambda) = " << dt * stiffness << " must be < 0.1";
    throw ConfigError("dt", os.str());
  }
  if (k_test && k_test->size() != Y.size())
    throw std::invalid_argument("krr_flow_integrated: k_test size");

  const MatrixXd A = k2 * K.values;
  const VectorXd kv = k_test ? VectorXd(k2 * *k_test) : VectorXd();
  const Index n = Y.size();
  // State: [u; u_test].
  auto rhs = [&](const VectorXd& s) {
    VectorXd out(s.size());
    const VectorXd resid = Y - s.head(n);
    out.head(n) = A * resid - lambda * s.head(n);
    if (k_test) out(n) = kv.dot(resid) - lambda * s(n);
    return out;
  };

  const auto steps = static_cast<long>(std::ceil(T / dt - 1e-12));
  const double h = T / static_cast<double>(steps);
  VectorXd s = VectorXd::Zero(n + (k_test ? 1 : 0));
  KrrTrajectory traj;
  auto record = [&](double t) {
    traj.times.push_back(t);
    traj.u_ntk.push_back(s.head(n));
    if (k_test) traj.u_ntk_test.push_back(s(n));
  };
  record(0.0);
  for (long k = 1; k <= steps; ++k) {
    const VectorXd k1 = rhs(s);
    const VectorXd k2v = rhs(s + 0.5 * h * k1);
    const VectorXd k3 = rhs(s + 0.5 * h * k2v);
    const VectorXd k4 = rhs(s + h * k3);
    s += (h / 6.0) * (k1 + 2.0 * k2v + 2.0 * k3 + k4);
    record(h * static_cast<double>(k));
  }
  return traj;
}

}  // namespace ntklev
