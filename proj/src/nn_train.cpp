#include "ntklev/nn_train.hpp"

#include "ntklev/errors.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ntklev {

TwoLayerNet::TwoLayerNet(MatrixXd W0, VectorXd a, VectorXd rho, double kappa, double lambda)
    : W_(W0), W0_(std::move(W0)), a_(std::move(a)), rho_(std::move(rho)), kappa_(kappa),
      lambda_(lambda) {
  if (a_.size() != W_.cols() || rho_.size() != W_.cols())
    throw std::invalid_argument("TwoLayerNet: a and rho must have one entry per column of W");
  for (Index r = 0; r < a_.size(); ++r) {
    if (a_(r) != 1.0 && a_(r) != -1.0) throw std::invalid_argument("TwoLayerNet: a_r must be +-1");
    if (!(rho_(r) > 0.0)) throw std::invalid_argument("TwoLayerNet: rho_r must be positive");
  }
  if (!(lambda_ >= 0.0)) throw std::invalid_argument("TwoLayerNet: lambda must be >= 0");
}

namespace {

VectorXd draw_signs(Index m, const SeedStream& seed) {
  auto rng = seed.engine();
  std::bernoulli_distribution coin(0.5);
  VectorXd a(m);
  for (Index r = 0; r < m; ++r) a(r) = coin(rng) ? 1.0 : -1.0;
  return a;
}

MatrixXd activation_pattern(const MatrixXd& X, const MatrixXd& W) {
  return ((X * W).array() >= 0.0).cast<double>().matrix();
}

}  // namespace

TwoLayerNet init_gaussian(Index m, Index d, const SeedStream& seed, double kappa, double lambda) {
  if (m < 1) throw std::invalid_argument("init_gaussian: m must be >= 1");
  const auto samples = sample_gaussian_features({}, m, d, seed.substream(0));
  MatrixXd W0(d, m);
  for (Index r = 0; r < m; ++r) W0.col(r) = samples[static_cast<std::size_t>(r)].w;
  return TwoLayerNet(std::move(W0), draw_signs(m, seed.substream(1)), VectorXd::Ones(m), kappa,
                     lambda);
}

TwoLayerNet init_leverage(Index m, const MatrixXd& X, const RegularizedKernel& RK,
                          const SeedStream& seed, double kappa, double lambda,
                          LeverageSamplerStats* stats) {
  LeverageSamplerStats local;
  const FeatureFamily relu{FeatureFamilyName::relu_ntk, 1.0};
  const auto samples = sample_leverage_features(relu, m, X, RK, seed.substream(0), &local);
  MatrixXd W0(X.cols(), m);
  VectorXd rho(m), ratio(m);
  for (Index r = 0; r < m; ++r) {
    const FeatureSample& s = samples[static_cast<std::size_t>(r)];
    W0.col(r) = s.w;
    rho(r) = s.weight;
    ratio(r) = *s.lev_ratio;
  }
  TwoLayerNet net(std::move(W0), draw_signs(m, seed.substream(1)), std::move(rho), kappa, lambda);
  net.lev_ratio = std::move(ratio);
  net.s_lambda = local.s_lambda;
  if (stats) *stats = local;
  return net;
}

VectorXd forward(const TwoLayerNet& net, const MatrixXd& X) {
  if (X.cols() != net.input_dim()) throw std::invalid_argument("forward: dimension mismatch");
  const double scale = net.kappa() / std::sqrt(static_cast<double>(net.width()));
  return scale * ((X * net.W()).cwiseMax(0.0) * net.a().cwiseProduct(net.rho()));
}

double forward_test(const TwoLayerNet& net, const VectorXd& x_test) {
  require_unit_vector(x_test, "forward_test");
  return forward(net, x_test.transpose())(0);
}

double loss(const TwoLayerNet& net, const MatrixXd& X, const VectorXd& Y) {
  return 0.5 * (Y - forward(net, X)).squaredNorm() + 0.5 * net.lambda() * net.W().squaredNorm();
}

MatrixXd gradient(const TwoLayerNet& net, const MatrixXd& X, const VectorXd& Y) {
  if (Y.size() != X.rows()) throw std::invalid_argument("gradient: label dimension mismatch");
  const double scale = net.kappa() / std::sqrt(static_cast<double>(net.width()));
  const VectorXd resid = Y - forward(net, X);
  const MatrixXd P = activation_pattern(X, net.W());
  // column r: -(kappa/sqrt m) a_r rho_r sum_i resid_i x_i 1{w_r.x_i >= 0} + lambda w_r
  MatrixXd G = X.transpose() * (resid.asDiagonal() * P);
  G = -scale * (G * net.a().cwiseProduct(net.rho()).asDiagonal());
  G += net.lambda() * net.W();
  return G;
}

KernelMatrix dynamic_kernel(const TwoLayerNet& net, const MatrixXd& X) {
  const MatrixXd P = activation_pattern(X, net.W());
  const MatrixXd counts =
      P * net.rho().cwiseAbs2().asDiagonal() * P.transpose() / static_cast<double>(net.width());
  return {(X * X.transpose()).cwiseProduct(counts), KernelKind::ntk_empirical};
}

VectorXd dynamic_kernel_test_vec(const TwoLayerNet& net, const VectorXd& x_test,
                                 const MatrixXd& X) {
  require_unit_vector(x_test, "dynamic_kernel_test_vec");
  const MatrixXd P = activation_pattern(X, net.W());
  const VectorXd p_test =
      ((net.W().transpose() * x_test).array() >= 0.0).cast<double>().matrix();
  const VectorXd counts =
      P * net.rho().cwiseAbs2().cwiseProduct(p_test) / static_cast<double>(net.width());
  return (X * x_test).cwiseProduct(counts);
}

HomogeneityCheck homogeneity_check(const TwoLayerNet& net, VectorXd x) {
  if (x.size() != net.input_dim()) throw std::invalid_argument("homogeneity_check: dimension");
  const double scale = 1.0 / std::sqrt(static_cast<double>(net.width()));
  VectorXd pre = net.W().transpose() * x;
  for (int guard = 0; guard < 100 && (pre.array() == 0.0).any() && !net.W().isZero(0.0); ++guard) {
    x(0) += 1e-9;
    pre = net.W().transpose() * x;
  }
  const VectorXd coef =
      scale * net.a().cwiseProduct(net.rho()).cwiseProduct((pre.array() >= 0.0).cast<double>().matrix());
  // df/dW = x coef^T, a rank-one d x m matrix.
  const MatrixXd grad = x * coef.transpose();
  HomogeneityCheck out;
  out.lhs = (grad.array() * net.W().array()).sum();
  out.rhs = scale * pre.cwiseMax(0.0).dot(net.a().cwiseProduct(net.rho()));
  return out;
}

double stable_step_size(const TwoLayerNet& net, const MatrixXd& X, double fraction) {
  const double stiffness =
      net.kappa() * net.kappa() * spectral_norm(dynamic_kernel(net, X).values) + net.lambda();
  return fraction * 0.5 / stiffness;
}

std::vector<TrainRecord> train(TwoLayerNet& net, const MatrixXd& X, const VectorXd& Y,
                               const TrainOptions& opts) {
  if (!(opts.eta > 0.0)) throw ConfigError("eta", "must be positive");
  if (opts.steps < 0) throw ConfigError("steps", "must be nonnegative");
  if (opts.diag_every < 1) throw ConfigError("diag_every", "must be positive");
  if (Y.size() != X.rows()) throw std::invalid_argument("train: label dimension mismatch");

  const MatrixXd H0 = dynamic_kernel(net, X).values;
  const double stiffness = net.kappa() * net.kappa() * spectral_norm(H0) + net.lambda();
  if (!(opts.eta * stiffness < 0.5)) {
    std::ostringstream os;
    os << "eta * (kappa^2 ||H(0)|| + lambda) = " << opts.eta * stiffness << " must be < 0.5";
    throw ConfigError("eta", os.str());
  }
  std::optional<VectorXd> k0;
  if (opts.x_test) k0 = dynamic_kernel_test_vec(net, *opts.x_test, X);

  std::vector<TrainRecord> records;
  auto snapshot = [&](Index step) {
    TrainRecord rec;
    rec.step = step;
    rec.t = static_cast<double>(step) * opts.eta;
    rec.u_nn = forward(net, X);
    rec.loss = 0.5 * (Y - rec.u_nn).squaredNorm() + 0.5 * net.lambda() * net.W().squaredNorm();
    rec.max_weight_drift = (net.W() - net.W0()).colwise().norm().maxCoeff();
    const MatrixXd H = dynamic_kernel(net, X).values;
    rec.kernel_drift = (H - H0).norm();
    if (opts.u_star) rec.train_gap = (rec.u_nn - *opts.u_star).norm();
    if (opts.reference_kernel) rec.reference_gap = (H - *opts.reference_kernel).norm();
    if (opts.x_test) {
      rec.u_test = forward_test(net, *opts.x_test);
      rec.k_test = dynamic_kernel_test_vec(net, *opts.x_test, X);
      rec.kernel_vec_drift = (*rec.k_test - *k0).norm();
      if (opts.reference_kernel_vec)
        rec.reference_vec_gap = (*rec.k_test - *opts.reference_kernel_vec).norm();
    }
    records.push_back(std::move(rec));
  };

  snapshot(0);
  const double initial_loss = records.front().loss;
  const double guard = opts.divergence_factor * std::max(initial_loss, 1e-300);
  for (Index step = 1; step <= opts.steps; ++step) {
    net.W() -= opts.eta * gradient(net, X, Y);
    const bool diag = step % opts.diag_every == 0 || step == opts.steps;
    if (diag) {
      snapshot(step);
      if (records.back().loss > guard) {
        std::ostringstream os;
        os << "train: loss " << records.back().loss << " exceeded " << opts.divergence_factor
           << "x initial loss at step " << step;
        throw DivergenceError(os.str());
      }
    } else if (!(loss(net, X, Y) <= guard)) {
      std::ostringstream os;
      os << "train: loss diverged at step " << step;
      throw DivergenceError(os.str());
    }
  }
  return records;
}

double weight_drift_bound(const DriftBoundInputs& in) {
  const double root = std::sqrt(static_cast<double>(in.n) / static_cast<double>(in.m));
  const double rate = in.kappa * in.kappa * in.lambda0 + in.lambda;
  const double first = root * std::max(4.0 * in.init_gap / rate, in.eps_train * in.horizon);
  const double second = (root * in.label_gap + in.lambda * in.init_norm_bound) * in.horizon;
  return first + second;
}

double gaussian_init_norm_bound(Index d, Index m, double delta) {
  return 2.0 * std::sqrt(static_cast<double>(d)) +
         2.0 * std::sqrt(std::log(static_cast<double>(m) / delta));
}

}  // namespace ntklev
