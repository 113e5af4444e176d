#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "pfd/experiment.hpp"
#include "pfd/toml.hpp"

using namespace pfd;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

int count_occurrences(const std::string& text, const std::string& needle) {
  int n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

// Minimal well-formedness check: tags balance and close in order.
bool xml_well_formed(const std::string& text) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  while ((i = text.find('<', i)) != std::string::npos) {
    const std::size_t end = text.find('>', i);
    if (end == std::string::npos) return false;
    std::string tag = text.substr(i + 1, end - i - 1);
    i = end + 1;
    if (tag.empty() || tag.front() == '?' || tag.front() == '!') continue;
    if (tag.front() == '/') {
      if (stack.empty() || stack.back() != tag.substr(1)) return false;
      stack.pop_back();
      continue;
    }
    if (tag.back() == '/') continue;  // self-closing
    stack.push_back(tag.substr(0, tag.find_first_of(" \t\n")));
  }
  return stack.empty();
}

std::string base_config(const std::string& out_dir, long iterations,
                        const std::string& methods = "[\"PFD\"]") {
  std::ostringstream cfg;
  cfg << "[schedule]\nkind = \"ve\"\nsigma_max = 2.0\n"
      << "[target]\nradii = [1.0, 2.0]\nmodes_per_ring = 16\nthickness = 0.25\n"
      << "[run]\nmethods = " << methods << "\nparticles = 40\nseed = 77\n"
      << "snapshots = [0" << (iterations > 0 ? ", " + std::to_string(iterations) : "")
      << "]\nout_dir = \"" << out_dir << "\"\n"
      << "[plot]\nbound = 3.0\n"
      << "[guidance]\nbroaden = 4.0\n"
      << "[method.common]\nlearning_rate = 0.1\niterations = " << iterations
      << "\nq_mode = \"surrogate\"\node_steps = 8\ngamma_fwd = -2.0\ngamma_rev = 3.0\n";
  return cfg.str();
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("toml parser handles the supported subset") {
  const auto t = toml::parse_string(
      "top = 1\n"
      "[alpha]\n"
      "name = \"ring target\"  # trailing comment\n"
      "count = 42\n"
      "rate = -6.5\n"
      "flag = true\n"
      "values = [1.0, 2.5, 3]\n"
      "tags = [\"a\", \"b\"]\n"
      "[alpha.nested]\n"
      "x = 0.5\n");
  CHECK(t.get_double("top") == 1.0);
  CHECK(t.get_string("alpha.name") == "ring target");
  CHECK(t.get_long("alpha.count") == 42);
  CHECK(t.get_double("alpha.rate") == -6.5);
  CHECK(t.get_bool("alpha.flag"));
  CHECK(t.get_double_array("alpha.values") == std::vector<double>{1.0, 2.5, 3.0});
  CHECK(t.get_string_array("alpha.tags") == std::vector<std::string>{"a", "b"});
  CHECK(t.get_double("alpha.nested.x") == 0.5);
  CHECK_FALSE(t.contains("alpha.missing"));
}

TEST_CASE("toml parser reports malformed input with line numbers") {
  CHECK_THROWS_AS(toml::parse_string("key\n"), toml::ParseError);
  CHECK_THROWS_AS(toml::parse_string("[section\n"), toml::ParseError);
  CHECK_THROWS_AS(toml::parse_string("k = [1, 2\n"), toml::ParseError);
  CHECK_THROWS_AS(toml::parse_string("k = nonsense\n"), toml::ParseError);
  try {
    toml::parse_string("ok = 1\nbad value\n");
    FAIL("expected ParseError");
  } catch (const toml::ParseError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  // Type errors name the offending field.
  const auto t = toml::parse_string("k = 1\n");
  try {
    t.get_string("k");
    FAIL("expected ParseError");
  } catch (const toml::ParseError& e) {
    CHECK(std::string(e.what()).find("k") != std::string::npos);
  }
}

TEST_CASE("config validation names the offending field") {
  const auto expect_error = [](const std::string& cfg, const std::string& needle) {
    try {
      ExperimentConfig::from_table_text(cfg);
      FAIL("expected ConfigError for ", needle);
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
    }
  };
  expect_error("[target]\nradii = [1.0]\n", "run.seed");
  expect_error("[run]\nseed = 1\n", "target.radii");
  expect_error(
      "[target]\nradii = [1.0]\n[run]\nseed = 1\nmethods = [\"XYZ\"]\n", "run.methods");
  expect_error(
      "[target]\nradii = [2.0, 1.0]\n[run]\nseed = 1\nmethods = [\"SDS\"]\n", "target");
  expect_error("[target]\nradii = [1.0]\n[run]\nseed = 1\nmethods = [\"SDS\"]\n"
               "snapshots = [5, 3]\n",
               "run.snapshots");
  expect_error("[target]\nradii = [1.0]\n[run]\nseed = 1\nmethods = [\"SDS\"]\n"
               "snapshots = [0, 999]\n[method.common]\niterations = 10\n",
               "run.snapshots");
  expect_error("[schedule]\nkind = \"other\"\n[target]\nradii = [1.0]\n"
               "[run]\nseed = 1\nmethods = [\"SDS\"]\n",
               "schedule.kind");
}

TEST_CASE("snapshot csv round-trips through the bundled reader") {
  const auto dir = temp_dir("pfd_csv_roundtrip");
  Eigen::MatrixXd positions(2, 3);
  positions << 0.125, -1.75, 3.0e-7, 2.0, 0.0, -0.5;
  const std::string path = (dir / "snap.csv").string();
  write_snapshot_csv(path, 42, positions);

  CHECK(slurp(path).rfind("tau,particle,x0,x1\n", 0) == 0);
  const auto [tau, loaded] = read_snapshot_csv(path);
  CHECK(tau == 42);
  REQUIRE(loaded.cols() == 3);
  CHECK((loaded - positions).cwiseAbs().maxCoeff() == 0.0);

  std::ofstream bad((dir / "bad.csv").string());
  bad << "x,y\n1,2\n";
  bad.close();
  CHECK_THROWS_AS(read_snapshot_csv((dir / "bad.csv").string()), std::runtime_error);
}

TEST_CASE("plot_ensemble emits rings-only SVG for an empty ensemble") {
  const auto dir = temp_dir("pfd_plot_empty");
  RingSpec rings;
  rings.radii = {1.0, 2.0, 3.0};
  const std::string path = (dir / "empty.svg").string();
  plot_ensemble(Eigen::MatrixXd(2, 0), &rings, PlotOptions{}, path);
  const std::string svg = slurp(path);
  CHECK(xml_well_formed(svg));
  CHECK(count_occurrences(svg, "<circle") == 3);
  CHECK(count_occurrences(svg, "fill=\"none\"") == 3);
}

TEST_CASE("plot_ensemble maps compass points through the affine viewport") {
  const auto dir = temp_dir("pfd_plot_compass");
  RingSpec rings;
  rings.radii = {1.0};
  Eigen::MatrixXd positions(2, 4);
  positions << 1, 0, -1, 0, 0, 1, 0, -1;
  PlotOptions options;
  options.bound = 2.0;
  options.size_px = 200;  // scale = 50 px per unit
  const std::string path = (dir / "compass.svg").string();
  plot_ensemble(positions, &rings, options, path);
  const std::string svg = slurp(path);
  CHECK(xml_well_formed(svg));
  CHECK(count_occurrences(svg, "<circle") == 5);  // 1 ring + 4 particles
  CHECK(svg.find("cx=\"150\" cy=\"100\"") != std::string::npos);  // (1, 0)
  CHECK(svg.find("cx=\"100\" cy=\"50\"") != std::string::npos);   // (0, 1)
  CHECK(svg.find("cx=\"50\" cy=\"100\"") != std::string::npos);   // (-1, 0)
  CHECK(svg.find("cx=\"100\" cy=\"150\"") != std::string::npos);  // (0, -1)

  Eigen::MatrixXd bad = Eigen::MatrixXd::Zero(3, 2);
  CHECK_THROWS_AS(plot_ensemble(bad, &rings, options, (dir / "x.svg").string()),
                  std::invalid_argument);
}

TEST_CASE("large snapshot plot stays well-formed XML") {
  const auto dir = temp_dir("pfd_plot_large");
  Eigen::MatrixXd positions = 3.0 * Eigen::MatrixXd::Random(2, 1000);
  RingSpec rings;
  rings.radii = {1.0, 2.0, 3.0};
  const std::string path = (dir / "large.svg").string();
  plot_ensemble(positions, &rings, PlotOptions{}, path);
  const std::string svg = slurp(path);
  CHECK(xml_well_formed(svg));
  CHECK(count_occurrences(svg, "<circle") == 1003);
}

TEST_CASE("zero-iteration run snapshots only the initial ensemble") {
  const auto dir = temp_dir("pfd_run_zero");
  auto config = ExperimentConfig::from_table_text(base_config(dir.string(), 0, "[\"SDS\"]"));
  const RunManifest manifest = run_experiment(config);
  CHECK_FALSE(manifest.failed);
  REQUIRE(manifest.snapshot_files.count("SDS") == 1);
  CHECK(manifest.snapshot_files.at("SDS").size() == 2);  // one CSV + one SVG
  const auto [tau, positions] = read_snapshot_csv((dir / "SDS_tau0.csv").string());
  CHECK(tau == 0);
  CHECK(positions.cols() == 40);
  for (const auto& [method, files] : manifest.snapshot_files)
    for (const auto& file : files) CHECK(std::filesystem::exists(file));
  CHECK(std::filesystem::exists(dir / "manifest.json"));
  CHECK(std::filesystem::exists(manifest.metrics_file));
}

TEST_CASE("rerunning with the same seed produces byte-identical CSVs") {
  const auto dir_a = temp_dir("pfd_run_a");
  const auto dir_b = temp_dir("pfd_run_b");
  auto config_a = ExperimentConfig::from_table_text(base_config(dir_a.string(), 15));
  auto config_b = ExperimentConfig::from_table_text(base_config(dir_b.string(), 15));
  config_b.out_dir = dir_b.string();
  const RunManifest a = run_experiment(config_a);
  const RunManifest b = run_experiment(config_b);
  CHECK(a.config_hash == b.config_hash);
  for (long tau : {0L, 15L}) {
    const std::string name = "PFD_tau" + std::to_string(tau) + ".csv";
    CHECK(slurp((dir_a / name).string()) == slurp((dir_b / name).string()));
  }
  CHECK(slurp((dir_a / "metrics.csv").string()) == slurp((dir_b / "metrics.csv").string()));
}

TEST_CASE("seed changes move the run hash and the outputs") {
  const auto dir_a = temp_dir("pfd_seed_a");
  const auto dir_b = temp_dir("pfd_seed_b");
  auto config_a = ExperimentConfig::from_table_text(base_config(dir_a.string(), 5));
  auto config_b = ExperimentConfig::from_table_text(base_config(dir_b.string(), 5));
  config_b.seed = 78;
  run_experiment(config_a);
  run_experiment(config_b);
  CHECK(slurp((dir_a / "PFD_tau0.csv").string()) != slurp((dir_b / "PFD_tau0.csv").string()));
}

TEST_CASE("degenerate ablation grid matches the equivalent plain run") {
  const auto dir_run = temp_dir("pfd_ab_run");
  const auto dir_ab = temp_dir("pfd_ab_grid");
  auto run_config = ExperimentConfig::from_table_text(base_config(dir_run.string(), 20));
  const RunManifest run_manifest = run_experiment(run_config);
  CHECK_FALSE(run_manifest.failed);

  auto ab_config = ExperimentConfig::from_table_text(base_config(dir_ab.string(), 20));
  ab_config.cfg_grid = {{-2.0, 3.0}};  // same pair the method config carries
  const RunManifest ab_manifest = run_cfg_ablation(ab_config);
  CHECK_FALSE(ab_manifest.failed);

  // Final grid KL from the ablation row equals the run's final metrics row.
  const std::string metrics = slurp((dir_run / "metrics.csv").string());
  const std::string ablation = slurp((dir_ab / "ablation.csv").string());
  const auto last_field = [](const std::string& text, const std::string& row_prefix, int field) {
    const std::size_t row = text.find(row_prefix);
    REQUIRE(row != std::string::npos);
    std::istringstream line(text.substr(row));
    std::string token;
    for (int i = 0; i <= field; ++i) std::getline(line, token, ',');
    return token;
  };
  const std::string kl_run = last_field(metrics, "PFD,20,", 2);
  const std::string kl_ab = last_field(ablation, "-2,3,", 2);
  CHECK(kl_run == kl_ab);
}

TEST_CASE("ablation requires a grid and a broadened field") {
  const auto dir = temp_dir("pfd_ab_invalid");
  auto config = ExperimentConfig::from_table_text(base_config(dir.string(), 5));
  CHECK_THROWS_AS(run_cfg_ablation(config), ConfigError);  // no grid
  config.cfg_grid = {{-2.0, 3.0}};
  config.guidance_broaden = 0.0;
  CHECK_THROWS_AS(run_cfg_ablation(config), ConfigError);
}
