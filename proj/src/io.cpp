#include "ntklev/io.hpp"

#include "ntklev/errors.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>

namespace ntklev {

namespace {

template <class T>
void read_field(const json& j, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(key, std::string("bad value: ") + e.what());
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << std::setprecision(17);
  return out;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& s, const std::filesystem::path& path) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": cannot parse number '" + s + "'");
  }
}

std::vector<std::vector<std::string>> read_rows(const std::filesystem::path& path,
                                                bool has_header) {
  auto in = open_in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first && has_header) {
      first = false;
      continue;
    }
    first = false;
    rows.push_back(split_csv_line(line));
  }
  return rows;
}

void write_header_x(std::ofstream& out, Index d) {
  for (Index k = 0; k < d; ++k) out << (k ? "," : "") << "x_" << k;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  static const char* const known[] = {
      "n",     "d",       "m",          "kappa",   "lambda",    "eps",          "delta",
      "eta",   "steps",   "seed",       "feature_family", "init", "c",           "c_kappa",
      "c_lambda", "lambda_rel", "sigma_w", "delta_sep", "trials", "diag_every", "m_sweep", "eps_test"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw ConfigError(it.key(), "unknown configuration key");
  }
  ExperimentConfig cfg;
  read_field(j, "n", cfg.n);
  read_field(j, "d", cfg.d);
  read_field(j, "m", cfg.m);
  read_field(j, "kappa", cfg.kappa);
  read_field(j, "lambda", cfg.lambda);
  read_field(j, "eps", cfg.eps);
  read_field(j, "eps_test", cfg.eps_test);
  read_field(j, "delta", cfg.delta);
  read_field(j, "eta", cfg.eta);
  read_field(j, "steps", cfg.steps);
  read_field(j, "seed", cfg.seed);
  read_field(j, "c", cfg.c);
  read_field(j, "c_kappa", cfg.c_kappa);
  read_field(j, "c_lambda", cfg.c_lambda);
  read_field(j, "lambda_rel", cfg.lambda_rel);
  read_field(j, "sigma_w", cfg.sigma_w);
  read_field(j, "delta_sep", cfg.delta_sep);
  read_field(j, "trials", cfg.trials);
  read_field(j, "diag_every", cfg.diag_every);
  read_field(j, "m_sweep", cfg.m_sweep);
  std::string family = to_string(cfg.feature_family);
  read_field(j, "feature_family", family);
  if (family == "relu_ntk") cfg.feature_family = FeatureFamilyName::relu_ntk;
  else if (family == "fourier_rbf") cfg.feature_family = FeatureFamilyName::fourier_rbf;
  else throw ConfigError("feature_family", "expected relu_ntk or fourier_rbf, got '" + family + "'");
  std::string init = to_string(cfg.init);
  read_field(j, "init", init);
  if (init == "gaussian") cfg.init = InitKind::gaussian;
  else if (init == "leverage") cfg.init = InitKind::leverage;
  else throw ConfigError("init", "expected gaussian or leverage, got '" + init + "'");
  cfg.validate();
  return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
  return json{{"n", cfg.n},
              {"d", cfg.d},
              {"m", cfg.m},
              {"kappa", cfg.kappa},
              {"lambda", cfg.lambda},
              {"eps", cfg.eps},
              {"eps_test", cfg.eps_test},
              {"delta", cfg.delta},
              {"eta", cfg.eta},
              {"steps", cfg.steps},
              {"seed", cfg.seed},
              {"feature_family", to_string(cfg.feature_family)},
              {"init", to_string(cfg.init)},
              {"c", cfg.c},
              {"c_kappa", cfg.c_kappa},
              {"c_lambda", cfg.c_lambda},
              {"lambda_rel", cfg.lambda_rel},
              {"sigma_w", cfg.sigma_w},
              {"delta_sep", cfg.delta_sep},
              {"trials", cfg.trials},
              {"diag_every", cfg.diag_every},
              {"m_sweep", cfg.m_sweep}};
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config", std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(j);
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds) {
  auto out = open_out(path);
  write_header_x(out, ds.d());
  out << ",y\n";
  for (Index i = 0; i < ds.n(); ++i) {
    for (Index k = 0; k < ds.d(); ++k) out << ds.X(i, k) << ',';
    out << ds.Y(i) << '\n';
  }
}

void write_test_point_csv(const std::filesystem::path& path, const VectorXd& x_test) {
  auto out = open_out(path);
  write_header_x(out, x_test.size());
  out << '\n';
  for (Index k = 0; k < x_test.size(); ++k) out << (k ? "," : "") << x_test(k);
  out << '\n';
}

MatrixXd read_matrix_csv(const std::filesystem::path& path, bool has_header) {
  const auto rows = read_rows(path, has_header);
  if (rows.empty()) return MatrixXd(0, 0);
  const auto cols = static_cast<Index>(rows.front().size());
  MatrixXd M(static_cast<Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<Index>(rows[i].size()) != cols)
      throw std::runtime_error(path.string() + ": ragged row " + std::to_string(i));
    for (Index k = 0; k < cols; ++k)
      M(static_cast<Index>(i), k) = parse_double(rows[i][static_cast<std::size_t>(k)], path);
  }
  return M;
}

Dataset read_dataset_csv(const std::filesystem::path& path,
                         const std::optional<std::filesystem::path>& test_path) {
  const MatrixXd M = read_matrix_csv(path, true);
  if (M.cols() < 2) throw std::runtime_error(path.string() + ": expected x columns and y");
  Dataset ds;
  ds.X = M.leftCols(M.cols() - 1);
  ds.Y = M.col(M.cols() - 1);
  if (test_path) {
    const MatrixXd T = read_matrix_csv(*test_path, true);
    if (T.rows() != 1 || T.cols() != ds.X.cols())
      throw std::runtime_error(test_path->string() + ": expected one row of dimension d");
    ds.x_test = T.row(0).transpose();
  }
  return ds;
}

void write_kernel_csv(const std::filesystem::path& csv, const std::filesystem::path& sidecar,
                      const KernelMatrix& K, std::optional<double> lambda) {
  {
    auto out = open_out(csv);
    for (Index i = 0; i < K.size(); ++i) {
      for (Index j = 0; j < K.size(); ++j) out << (j ? "," : "") << K.values(i, j);
      out << '\n';
    }
  }
  json meta{{"kind", to_string(K.kind)}, {"n", K.size()}};
  if (lambda) meta["lambda"] = *lambda;
  auto out = open_out(sidecar);
  out << meta.dump() << '\n';
}

KernelMatrix read_kernel_csv(const std::filesystem::path& csv,
                             const std::filesystem::path& sidecar) {
  auto in = open_in(sidecar);
  json meta;
  in >> meta;
  KernelMatrix K{read_matrix_csv(csv, false), kernel_kind_from_string(meta.at("kind"))};
  if (K.values.rows() != meta.at("n").get<Index>() || K.values.cols() != K.values.rows())
    throw std::runtime_error(csv.string() + ": shape disagrees with sidecar");
  return K;
}

void write_feature_samples_csv(const std::filesystem::path& path,
                               const std::vector<FeatureSample>& samples) {
  auto out = open_out(path);
  const Index d = samples.empty() ? 0 : samples.front().w.size();
  for (Index k = 0; k < d; ++k) out << "w_" << k << ',';
  out << "weight,lev_ratio\n";
  for (const auto& s : samples) {
    for (Index k = 0; k < d; ++k) out << s.w(k) << ',';
    out << s.weight << ',';
    if (s.lev_ratio) out << *s.lev_ratio;
    out << '\n';
  }
}

std::vector<FeatureSample> read_feature_samples_csv(const std::filesystem::path& path) {
  const auto rows = read_rows(path, true);
  std::vector<FeatureSample> out;
  for (const auto& row : rows) {
    if (row.size() < 3) throw std::runtime_error(path.string() + ": too few columns");
    const Index d = static_cast<Index>(row.size()) - 2;
    FeatureSample s;
    s.w.resize(d);
    for (Index k = 0; k < d; ++k) s.w(k) = parse_double(row[static_cast<std::size_t>(k)], path);
    s.weight = parse_double(row[static_cast<std::size_t>(d)], path);
    const std::string& lev = row[static_cast<std::size_t>(d) + 1];
    if (!lev.empty()) s.lev_ratio = parse_double(lev, path);
    out.push_back(std::move(s));
  }
  return out;
}

void write_trajectory_csv(const std::filesystem::path& path, const KrrTrajectory& traj) {
  auto out = open_out(path);
  const Index n = traj.u_ntk.empty() ? 0 : traj.u_ntk.front().size();
  out << "t";
  for (Index i = 0; i < n; ++i) out << ",u_" << i;
  out << ",u_test\n";
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    out << traj.times[k];
    for (Index i = 0; i < n; ++i) out << ',' << traj.u_ntk[k](i);
    out << ',';
    if (k < traj.u_ntk_test.size()) out << traj.u_ntk_test[k];
    out << '\n';
  }
}

void write_train_records_csv(const std::filesystem::path& path,
                             const std::vector<TrainRecord>& records) {
  auto out = open_out(path);
  out << "step,t,loss,max_weight_drift,kernel_drift,train_gap,u_test\n";
  for (const auto& r : records) {
    out << r.step << ',' << r.t << ',' << r.loss << ',' << r.max_weight_drift << ','
        << r.kernel_drift << ',';
    if (r.train_gap) out << *r.train_gap;
    out << ',';
    if (r.u_test) out << *r.u_test;
    out << '\n';
  }
}

void write_checkpoint(const std::filesystem::path& weights, const std::filesystem::path& signs,
                      const TwoLayerNet& net) {
  {
    auto out = open_out(weights);
    for (Index k = 0; k < net.input_dim(); ++k) {
      for (Index r = 0; r < net.width(); ++r) out << (r ? "," : "") << net.W()(k, r);
      out << '\n';
    }
  }
  auto out = open_out(signs);
  out << "a,rho\n";
  for (Index r = 0; r < net.width(); ++r) out << net.a()(r) << ',' << net.rho()(r) << '\n';
}

}  // namespace ntklev
