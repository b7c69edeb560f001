#include "ntklev/data_model.hpp"

#include "ntklev/errors.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ntklev {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::mt19937_64 SeedStream::engine() const {
  const std::uint64_t a = splitmix64(master_seed);
  const std::uint64_t b = splitmix64(stream_id ^ 0xD1B54A32D192ED03ULL);
  std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

SeedStream SeedStream::substream(std::uint64_t k) const {
  return {master_seed, splitmix64(stream_id * 0x9E3779B97F4A7C15ULL + k + 1)};
}

VectorXd sample_standard_normal(Index d, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd v(d);
  for (Index k = 0; k < d; ++k) v(k) = normal(rng);
  return v;
}

VectorXd sample_unit_sphere(Index d, std::mt19937_64& rng) {
  for (;;) {
    VectorXd v = sample_standard_normal(d, rng);
    const double nrm = v.norm();
    if (nrm > 0.0) return v / nrm;
  }
}

void require_unit_vector(const VectorXd& x, const char* what) {
  if (!(std::abs(x.norm() - 1.0) <= kUnitNormTol)) {
    std::ostringstream os;
    os << what << ": expected unit norm, got " << x.norm();
    throw std::domain_error(os.str());
  }
}

void require_unit_rows(const MatrixXd& X, const char* what) {
  for (Index i = 0; i < X.rows(); ++i) {
    const double nrm = X.row(i).norm();
    if (!(std::abs(nrm - 1.0) <= kUnitNormTol)) {
      std::ostringstream os;
      os << what << ": row " << i << " has norm " << nrm << ", expected 1";
      throw std::domain_error(os.str());
    }
  }
}

Dataset generate_dataset(Index n, Index d, const SeedStream& seed, double delta_sep) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  if (d < 2) throw std::invalid_argument("generate_dataset: d must be >= 2");
  if (!(delta_sep > 0.0 && delta_sep < std::sqrt(2.0)))
    throw std::invalid_argument("generate_dataset: delta_sep must lie in (0, sqrt(2))");

  auto rng = seed.engine();
  Dataset ds;
  ds.X.resize(n, d);
  const long budget = 1000L * static_cast<long>(n);
  long rejections = 0;
  for (Index i = 0; i < n; ++i) {
    for (;;) {
      VectorXd x = sample_unit_sphere(d, rng);
      bool separated = true;
      for (Index j = 0; j < i && separated; ++j)
        separated = (ds.X.row(j).transpose() - x).norm() >= delta_sep;
      if (separated) {
        ds.X.row(i) = x.transpose();
        break;
      }
      if (++rejections > budget) {
        std::ostringstream os;
        os << "generate_dataset: separation " << delta_sep << " infeasible for n=" << n
           << ", d=" << d << " after " << budget << " rejections";
        throw InfeasibleError(os.str());
      }
    }
  }
  std::uniform_real_distribution<double> label(-1.0, 1.0);
  ds.Y.resize(n);
  for (Index i = 0; i < n; ++i) ds.Y(i) = label(rng);
  ds.x_test = sample_unit_sphere(d, rng);
  return ds;
}

std::vector<Violation> validate_dataset(const Dataset& ds, double delta_sep, double y_max) {
  std::vector<Violation> out;
  const Index n = ds.X.rows();
  if (ds.Y.size() != n) {
    out.push_back({ViolationKind::shape, {}, static_cast<double>(ds.Y.size()),
                   "label count " + std::to_string(ds.Y.size()) + " != row count " +
                       std::to_string(n)});
    return out;
  }
  if (!ds.X.allFinite() || !ds.Y.allFinite()) {
    out.push_back({ViolationKind::non_finite, {}, 0.0, "non-finite entries in X or Y"});
    return out;
  }
  for (Index i = 0; i < n; ++i) {
    const double nrm = ds.X.row(i).norm();
    if (std::abs(nrm - 1.0) > kUnitNormTol)
      out.push_back({ViolationKind::norm, {i}, nrm, "row " + std::to_string(i) + " norm " +
                                                        std::to_string(nrm)});
    if (std::abs(ds.Y(i)) > y_max)
      out.push_back({ViolationKind::label, {i}, std::abs(ds.Y(i)),
                     "label " + std::to_string(i) + " exceeds y_max"});
  }
  for (Index i = 0; i < n; ++i) {
    for (Index j = i + 1; j < n; ++j) {
      const double dist = (ds.X.row(i) - ds.X.row(j)).norm();
      if (dist < delta_sep)
        out.push_back({ViolationKind::separation, {i, j}, dist,
                       "rows " + std::to_string(i) + "," + std::to_string(j) + " distance " +
                           std::to_string(dist)});
    }
  }
  if (ds.x_test) {
    if (ds.x_test->size() != ds.X.cols()) {
      out.push_back({ViolationKind::shape, {-1}, static_cast<double>(ds.x_test->size()),
                     "test point dimension mismatch"});
    } else if (std::abs(ds.x_test->norm() - 1.0) > kUnitNormTol) {
      out.push_back({ViolationKind::norm, {-1}, ds.x_test->norm(), "test point norm"});
    }
  }
  return out;
}

std::string to_string(FeatureFamilyName f) {
  return f == FeatureFamilyName::relu_ntk ? "relu_ntk" : "fourier_rbf";
}

std::string to_string(InitKind k) { return k == InitKind::gaussian ? "gaussian" : "leverage"; }

void ExperimentConfig::validate() const {
  auto positive = [](const char* name, auto v) {
    if (!(v > 0)) throw ConfigError(name, "must be positive");
  };
  positive("n", n);
  positive("d", d);
  positive("m", m);
  positive("eta", eta);
  positive("steps", steps);
  if (trials < 0) throw ConfigError("trials", "must be nonnegative");
  positive("diag_every", diag_every);
  positive("c", c);
  positive("c_kappa", c_kappa);
  positive("sigma_w", sigma_w);
  if (d < 2) throw ConfigError("d", "must be >= 2");
  if (!(kappa > 0.0 && kappa <= 1.0)) throw ConfigError("kappa", "must lie in (0, 1]");
  if (!(lambda >= 0.0)) throw ConfigError("lambda", "must be nonnegative");
  if (!(c_lambda >= 0.0)) throw ConfigError("c_lambda", "must be nonnegative");
  if (!(lambda_rel > 0.0)) throw ConfigError("lambda_rel", "must be positive");
  if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("eps", "must lie in (0, 1)");
  if (!(eps_test > 0.0 && eps_test < 1.0)) throw ConfigError("eps_test", "must lie in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta", "must lie in (0, 1)");
  if (!(delta_sep > 0.0 && delta_sep < std::sqrt(2.0)))
    throw ConfigError("delta_sep", "must lie in (0, sqrt(2))");
  if (m_sweep.empty()) throw ConfigError("m_sweep", "must be nonempty");
  for (Index v : m_sweep)
    if (v < 1) throw ConfigError("m_sweep", "entries must be positive");
}

}  // namespace ntklev
