#include <doctest.h>

#include "ntklev/errors.hpp"
#include "ntklev/io.hpp"

#include <filesystem>
#include <fstream>

using namespace ntklev;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "ntklev_io_tests";
  fs::create_directories(dir);
  return dir / name;
}

std::string config_error_field(const json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

}  // namespace

TEST_CASE("config json round trip") {
  ExperimentConfig cfg;
  cfg.n = 12;
  cfg.eps = 0.2;
  cfg.feature_family = FeatureFamilyName::fourier_rbf;
  cfg.init = InitKind::leverage;
  cfg.m_sweep = {32, 64};
  cfg.seed = 123456789012345ULL;
  const ExperimentConfig back = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));
  CHECK(back.seed == cfg.seed);
  CHECK(back.m_sweep == cfg.m_sweep);
}

TEST_CASE("config errors name the key") {
  CHECK(config_error_field({{"n", 8}, {"bogus", 1}}) == "bogus");
  CHECK(config_error_field({{"n", "eight"}}) == "n");
  CHECK(config_error_field({{"feature_family", "laplace"}}) == "feature_family");
  CHECK(config_error_field({{"eps", 2.0}}) == "eps");
  CHECK(config_error_field(json::array()) == "config");

  const fs::path bad = scratch("bad.json");
  std::ofstream(bad) << "{ \"n\": 8, ";
  CHECK_THROWS_AS(load_config(bad), ConfigError);
  CHECK_THROWS_AS(load_config(scratch("missing.json")), ConfigError);
}

TEST_CASE("dataset csv round trip is exact") {
  const Dataset ds = generate_dataset(6, 3, SeedStream{4, 0}, 0.01);
  write_dataset_csv(scratch("ds.csv"), ds);
  write_test_point_csv(scratch("xt.csv"), *ds.x_test);
  const Dataset back = read_dataset_csv(scratch("ds.csv"), scratch("xt.csv"));
  CHECK(back.X == ds.X);
  CHECK(back.Y == ds.Y);
  CHECK(*back.x_test == *ds.x_test);
  std::ifstream in(scratch("ds.csv"));
  std::string header;
  std::getline(in, header);
  CHECK(header == "x_0,x_1,x_2,y");
}

TEST_CASE("kernel csv round trip") {
  const Dataset ds = generate_dataset(5, 3, SeedStream{5, 0}, 0.01);
  const KernelMatrix K = ntk_gram(ds.X);
  write_kernel_csv(scratch("k.csv"), scratch("k.json"), K, 0.25);
  const KernelMatrix back = read_kernel_csv(scratch("k.csv"), scratch("k.json"));
  CHECK(back.values == K.values);
  CHECK(back.kind == KernelKind::ntk_exact);
  std::ifstream in(scratch("k.json"));
  const json side = json::parse(in);
  CHECK(side["n"] == 5);
  CHECK(side["lambda"] == 0.25);
}

TEST_CASE("feature samples round trip") {
  std::vector<FeatureSample> samples(2);
  samples[0].w = VectorXd::LinSpaced(3, -1, 1);
  samples[0].weight = 0.75;
  samples[0].lev_ratio = 3.5;
  samples[1].w = VectorXd::Constant(3, 0.1);
  write_feature_samples_csv(scratch("s.csv"), samples);
  const auto back = read_feature_samples_csv(scratch("s.csv"));
  REQUIRE(back.size() == 2);
  CHECK(back[0].w == samples[0].w);
  CHECK(back[0].weight == 0.75);
  CHECK(*back[0].lev_ratio == 3.5);
  CHECK_FALSE(back[1].lev_ratio.has_value());
}

TEST_CASE("checkpoint and matrix csv") {
  const TwoLayerNet net = init_gaussian(7, 3, SeedStream{6, 0}, 1.0, 0.0);
  write_checkpoint(scratch("w.csv"), scratch("a.csv"), net);
  CHECK(read_matrix_csv(scratch("w.csv"), false) == net.W());
  const MatrixXd signs = read_matrix_csv(scratch("a.csv"), true);
  CHECK(signs.col(0) == net.a());
  CHECK(signs.col(1) == net.rho());
}
