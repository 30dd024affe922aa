#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hiersim/experiments.hpp"

using namespace hiersim;
namespace fs = std::filesystem;

namespace {

Settings parse(const std::string& text) {
  std::istringstream in(text);
  return parse_settings(in);
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hiersim_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> manifest(const fs::path& dir) {
  std::map<std::string, std::string> out;
  std::ifstream in(dir / "manifest.txt");
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

// Small enough to run every experiment in a few seconds.
const char* kSmallConfig = R"(# reduced problem
N = 8
theta_grid_min = 20
theta_grid_max = 44
theta_grid_step = 2
theta_train = 15, 25, 35, 45, 55
posterior_samples = 5000
forest_trees = 20
ess_iters = 60
ess_burnin = 10
ess_steps = 20
residual_steps = 60
bench_repeats = 1
)";

int run_cli(const std::string& args) {
  const std::string cmd = std::string(HIERSIM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

}  // namespace

TEST(Config, EmptyGivesDefaults) {
  const Settings s = parse("");
  const Settings d;
  EXPECT_EQ(s.canonical(), d.canonical());
  EXPECT_NO_THROW(s.validate());
  EXPECT_EQ(s.glacier.dt, 0.1);
  EXPECT_EQ(s.k, 5);
  EXPECT_EQ(s.N, 40);
  EXPECT_EQ(s.observed_sites().size(), 25u);
  EXPECT_EQ(s.theta_grid().size(), 121u);
  EXPECT_EQ(s.training_thetas().size(), 25u);
}

TEST(Config, ParsesValuesCommentsAndLists) {
  const Settings s = parse("k = 3   # epochs\n\n  sigma=0.5\nsites = 220, 221 ,222\nregressor = linear\n");
  EXPECT_EQ(s.k, 3);
  EXPECT_EQ(s.sigma, 0.5);
  EXPECT_EQ(s.sites, (std::vector<int>{220, 221, 222}));
  EXPECT_EQ(s.regressor, "linear");
}

TEST(Config, NonPositiveStepRejected) {
  EXPECT_THROW(parse("dt = 0").validate(), ConfigError);
  EXPECT_THROW(parse("dt = -0.1").validate(), ConfigError);
}

TEST(Config, SiteOutsideGridNamesIndex) {
  try {
    parse("sites = 5, 600").validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("600"), std::string::npos);
  }
  EXPECT_THROW(parse("sites = 3, 3").validate(), ConfigError);
}

TEST(Config, ErrorsCarryLineNumbers) {
  try {
    parse("k = 5\n# fine\nN = forty\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 3);
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  try {
    parse("\nbogus_key = 1\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_NE(std::string(e.what()).find("bogus_key"), std::string::npos);
  }
  EXPECT_THROW(parse("k 5"), ConfigError);
  EXPECT_THROW(parse("k = 2.5"), ConfigError);
  EXPECT_THROW(parse("k ="), ConfigError);
}

TEST(Config, OtherValidation) {
  EXPECT_THROW(parse("sliding = 1").validate(), ConfigError);
  EXPECT_THROW(parse("prior = cauchy").validate(), ConfigError);
  EXPECT_THROW(parse("theta_grid_step = 0").validate(), ConfigError);
  EXPECT_THROW(parse("theta_train = 30").validate(), ConfigError);
  EXPECT_THROW(validate_config("/nonexistent/hiersim.cfg"), ConfigError);
}

TEST(Config, HashTracksContent) {
  EXPECT_EQ(hash_hex(parse("").canonical()), hash_hex(Settings{}.canonical()));
  EXPECT_NE(hash_hex(parse("k = 4").canonical()), hash_hex(Settings{}.canonical()));
  EXPECT_EQ(hash_hex("").size(), 16u);
}

TEST(Seeds, StreamsDiffer) {
  EXPECT_NE(stream_seed(1, Stream::Data), stream_seed(1, Stream::Probe));
  EXPECT_NE(stream_seed(1, Stream::Data), stream_seed(2, Stream::Data));
  EXPECT_EQ(stream_seed(7, "table1"), stream_seed(7, "table1"));
}

TEST(RunExperiment, UnknownNameStillWritesManifest) {
  const fs::path dir = scratch("unknown");
  ExperimentSpec spec;
  spec.name = "table9";
  spec.out_dir = dir.string();
  const auto outcome = run_experiment(spec, 1);
  EXPECT_NE(outcome.status, 0);
  EXPECT_EQ(outcome.failed_stage, "validate");
  const auto m = manifest(dir);
  EXPECT_EQ(m.at("status"), "failed");
  EXPECT_EQ(m.at("failed_stage"), "validate");
}

TEST(RunExperiment, ConfigFailureRecordsStage) {
  const fs::path dir = scratch("badcfg");
  ExperimentSpec spec;
  spec.name = "table1";
  spec.out_dir = dir.string();
  spec.config_path = write_file(dir / "bad.cfg", "dt = 0\n");
  const auto outcome = run_experiment(spec, 1);
  EXPECT_EQ(outcome.status, 1);
  EXPECT_EQ(outcome.failed_stage, "config");
  EXPECT_NE(outcome.error.find("dt"), std::string::npos);
  EXPECT_EQ(manifest(dir).at("failed_stage"), "config");
}

TEST(RunExperiment, SolverFailureRecordsExperimentStage) {
  const fs::path dir = scratch("unstable");
  ExperimentSpec spec;
  spec.name = "table1";
  spec.backend = "solver";
  spec.out_dir = dir.string();
  spec.config_path = write_file(dir / "c.cfg", std::string(kSmallConfig) + "dt = 300\n");
  const auto outcome = run_experiment(spec, 2);
  EXPECT_EQ(outcome.status, 1);
  EXPECT_EQ(outcome.failed_stage, "table1");
  const auto m = manifest(dir);
  EXPECT_EQ(m.at("status"), "failed");
  EXPECT_FALSE(m.at("error").empty());
}

TEST(RunExperiment, OutputsIndependentOfThreadCount) {
  const fs::path base = scratch("threads");
  const std::string cfg = write_file(base / "small.cfg", kSmallConfig);
  for (const std::string name : {"table1", "table3", "table2", "residuals", "variance-field"}) {
    std::map<unsigned, fs::path> dirs;
    for (unsigned threads : {1u, 4u}) {
      ExperimentSpec spec;
      spec.name = name;
      spec.config_path = cfg;
      spec.seed = 3;
      spec.out_dir = (base / (name + "_" + std::to_string(threads))).string();
      const auto outcome = run_experiment(spec, threads);
      ASSERT_EQ(outcome.status, 0) << name << ": " << outcome.error;
      dirs[threads] = spec.out_dir;
    }
    const auto m1 = manifest(dirs[1u]);
    EXPECT_EQ(m1, manifest(dirs[4u])) << name;
    std::istringstream files(m1.at("files"));
    std::string file;
    int count = 0;
    while (files >> file) {
      EXPECT_EQ(slurp(dirs[1u] / file), slurp(dirs[4u] / file)) << name << "/" << file;
      ++count;
    }
    EXPECT_GT(count, 0) << name;
  }
}

TEST(RunExperiment, ManifestContents) {
  const fs::path dir = scratch("manifest");
  ExperimentSpec spec;
  spec.name = "residuals";
  spec.out_dir = dir.string();
  spec.seed = 42;
  spec.config_path = write_file(dir / "small.cfg", kSmallConfig);
  ASSERT_EQ(run_experiment(spec, 1).status, 0);
  const auto m = manifest(dir);
  EXPECT_EQ(m.at("experiment"), "residuals");
  EXPECT_EQ(m.at("status"), "ok");
  EXPECT_EQ(m.at("seed"), "42");
  EXPECT_EQ(m.at("config_hash"), hash_hex(validate_config(spec.config_path).canonical()));
  EXPECT_EQ(m.count("threads"), 0u);
  EXPECT_NE(m.at("files").find("residual_summary.csv"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "residual_summary.csv"));
}

TEST(Cli, ExitCodes) {
  const fs::path dir = scratch("exe");
  const std::string cfg = write_file(dir / "small.cfg", kSmallConfig);
  EXPECT_EQ(run_cli("--help"), 0);
  EXPECT_NE(run_cli("table1"), 0);  // --out missing
  EXPECT_EQ(run_cli("nosuch --out " + (dir / "a").string()), 2);
  EXPECT_NE(run_cli("table1 --out " + (dir / "b").string() + " --emulator --solver"), 0);
  EXPECT_NE(run_cli("table1 --out " + (dir / "b").string() + " --likelihood fuzzy"), 0);
  const std::string bad = write_file(dir / "bad.cfg", "dt = -1\n");
  EXPECT_EQ(run_cli("table1 --config " + bad + " --out " + (dir / "c").string()), 1);
  EXPECT_EQ(manifest(dir / "c").at("failed_stage"), "config");
  EXPECT_EQ(run_cli("table3 --config " + cfg + " --out " + (dir / "d").string() + " --seed 5 --solver --likelihood approx"), 0);
  const auto m = manifest(dir / "d");
  EXPECT_EQ(m.at("backend"), "solver");
  EXPECT_EQ(m.at("likelihood"), "approx");
  EXPECT_TRUE(fs::exists(dir / "d" / "summary.csv"));
}
