#include "ntklev/features.hpp"

#include "ntklev/errors.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ntklev {

KernelMatrix exact_kernel(const FeatureFamily& family, const MatrixXd& X) {
  return family.name == FeatureFamilyName::relu_ntk ? ntk_gram(X) : rbf_gram(X, family.sigma_w);
}

VectorXd exact_kernel_vec(const FeatureFamily& family, const VectorXd& x, const MatrixXd& X) {
  return family.name == FeatureFamilyName::relu_ntk ? ntk_kernel_vec(x, X)
                                                    : rbf_kernel_vec(x, X, family.sigma_w);
}

KernelMatrix FeatureMatrix::gram() const {
  MatrixXd G = MatrixXd::Zero(psi_bar.rows(), psi_bar.rows());
  G.selfadjointView<Eigen::Lower>().rankUpdate(psi_bar);
  return {G.selfadjointView<Eigen::Lower>(), KernelKind::feature_gram};
}

VectorXd phi(const FeatureFamily& family, const VectorXd& x, const VectorXd& w) {
  if (x.size() != w.size()) throw std::invalid_argument("phi: dimension mismatch");
  const double pre = w.dot(x);
  if (family.name == FeatureFamilyName::relu_ntk) {
    // sigma'(0) = 1
    return pre >= 0.0 ? VectorXd(x) : VectorXd::Zero(x.size());
  }
  VectorXd out(2);
  out << std::cos(family.sigma_w * pre), std::sin(family.sigma_w * pre);
  return out;
}

MatrixXd phi_stack(const FeatureFamily& family, const MatrixXd& X, const VectorXd& w) {
  if (X.cols() != w.size()) throw std::invalid_argument("phi_stack: dimension mismatch");
  const VectorXd pre = X * w;
  if (family.name == FeatureFamilyName::relu_ntk)
    return (pre.array() >= 0.0).cast<double>().matrix().asDiagonal() * X;
  MatrixXd out(X.rows(), 2);
  out.col(0) = (family.sigma_w * pre).array().cos().matrix();
  out.col(1) = (family.sigma_w * pre).array().sin().matrix();
  return out;
}

std::vector<FeatureSample> sample_gaussian_features(const FeatureFamily& /*family*/, Index m,
                                                    Index d, const SeedStream& seed) {
  if (m < 1) throw std::invalid_argument("sample_gaussian_features: m must be >= 1");
  auto rng = seed.engine();
  std::vector<FeatureSample> out;
  out.reserve(static_cast<std::size_t>(m));
  for (Index r = 0; r < m; ++r) out.push_back({sample_standard_normal(d, rng), 1.0, std::nullopt});
  return out;
}

double ridge_leverage_ratio(const FeatureFamily& family, const VectorXd& w, const MatrixXd& X,
                            const RegularizedKernel& RK) {
  return RK.whiten(phi_stack(family, X, w)).squaredNorm();
}

LeverageScorer::LeverageScorer(FeatureFamily family, const MatrixXd& X,
                               const RegularizedKernel& RK)
    : family_(family), X_(X) {
  if (X.rows() != RK.size()) throw std::invalid_argument("LeverageScorer: dimension mismatch");
  whitener_ = RK.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
              RK.eigenvectors().transpose();
  envelope_ = static_cast<double>(X.rows()) / RK.eigenvalues()(0);
  s_lambda_ = ntklev::statistical_dimension(RK);
}

double LeverageScorer::ratio(const VectorXd& w) const {
  return (whitener_ * phi_stack(family_, X_, w)).squaredNorm();
}

namespace {

template <class RatioFn>
std::vector<FeatureSample> rejection_sample(RatioFn&& ratio_of, double envelope, double integral,
                                            Index d, Index m, const SeedStream& seed,
                                            LeverageSamplerStats* stats) {
  if (m < 1) throw std::invalid_argument("sample_leverage_features: m must be >= 1");
  if (!(integral > 0.0))
    throw std::invalid_argument("sample_leverage_features: statistical dimension must be > 0");
  auto rng = seed.engine();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t budget = 1000000ULL * static_cast<std::size_t>(m);
  std::vector<FeatureSample> out;
  out.reserve(static_cast<std::size_t>(m));
  std::size_t proposals = 0;
  while (out.size() < static_cast<std::size_t>(m)) {
    if (proposals >= budget) {
      std::ostringstream os;
      os << "sample_leverage_features: " << out.size() << " of " << m << " accepted after "
         << proposals << " proposals";
      throw InfeasibleError(os.str());
    }
    ++proposals;
    VectorXd w = sample_standard_normal(d, rng);
    const double r = ratio_of(w);
    const double u = unif(rng);
    if (u * envelope < r) out.push_back({std::move(w), std::sqrt(integral / r), r});
  }
  if (stats) {
    stats->proposals = proposals;
    stats->accepted = out.size();
    stats->envelope = envelope;
    stats->s_lambda = integral;
  }
  return out;
}

}  // namespace

std::vector<FeatureSample> sample_leverage_features(const LeverageScorer& scorer, Index m,
                                                    const SeedStream& seed,
                                                    LeverageSamplerStats* stats) {
  return rejection_sample([&](const VectorXd& w) { return scorer.ratio(w); }, scorer.envelope(),
                          scorer.statistical_dimension(), scorer.input_dim(), m, seed, stats);
}

std::vector<FeatureSample> sample_leverage_features(const FeatureFamily& family, Index m,
                                                    const MatrixXd& X, const RegularizedKernel& RK,
                                                    const SeedStream& seed,
                                                    LeverageSamplerStats* stats) {
  return sample_leverage_features(LeverageScorer(family, X, RK), m, seed, stats);
}

std::vector<FeatureSample> sample_leverage_features(const LeverageUpperBound& bound, Index d,
                                                    Index m, const SeedStream& seed,
                                                    LeverageSamplerStats* stats) {
  if (!bound.ratio) throw std::invalid_argument("sample_leverage_features: empty ratio function");
  return rejection_sample(bound.ratio, bound.envelope, bound.integral, d, m, seed, stats);
}

FeatureMatrix build_feature_matrix(const MatrixXd& X, const std::vector<FeatureSample>& samples,
                                   const FeatureFamily& family) {
  if (samples.empty()) throw std::invalid_argument("build_feature_matrix: no samples");
  const Index n = X.rows();
  const Index d2 = family.output_dim(X.cols());
  const Index m = static_cast<Index>(samples.size());
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  FeatureMatrix F;
  F.family = family;
  F.samples = samples;
  F.psi_bar.resize(n, m * d2);
  for (Index r = 0; r < m; ++r) {
    const FeatureSample& s = samples[static_cast<std::size_t>(r)];
    if (s.w.size() != X.cols())
      throw std::invalid_argument("build_feature_matrix: sample dimension mismatch");
    F.psi_bar.middleCols(r * d2, d2) = (scale * s.weight) * phi_stack(family, X, s.w);
  }
  return F;
}

std::size_t required_m(double eps, double delta, double s_qtilde, double s_lambda) {
  if (!(eps > 0.0 && eps <= 0.5)) throw std::invalid_argument("required_m: eps must lie in (0, 1/2]");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("required_m: delta must lie in (0, 1)");
  if (!(s_qtilde >= 0.0 && s_lambda >= 0.0))
    throw std::invalid_argument("required_m: statistical dimensions must be >= 0");
  if (s_qtilde == 0.0) return 0;
  const double bound =
      3.0 / (eps * eps) * s_qtilde * std::log(16.0 * s_qtilde * s_lambda / delta);
  return bound <= 0.0 ? 0 : static_cast<std::size_t>(std::ceil(bound));
}

}  // namespace ntklev
