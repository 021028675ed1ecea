#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("hlab_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const std::string& body) {
    const auto p = dir_ / name;
    std::ofstream(p) << "out = \"" << (dir_ / "out").string() << "\"\n" << body;
    return p;
  }

  int run(const std::string& args) {
    const std::string cmd = std::string(HLAB_CLI_PATH) + " " + args + " >" + (dir_ / "stdout.txt").string() + " 2>" +
                            (dir_ / "stderr.txt").string();
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  std::string read(const fs::path& p) const {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  }
  std::string err() const { return read(dir_ / "stderr.txt"); }

  fs::path dir_;
};

const char* kBernoulli = R"(seed = 5
[grid]
dim = 2
side = 8
[environment]
kind = "bernoulli"
gamma = GAMMA
[env]
samples = 2
[qmatrix]
samples = 3
xi = [[0.0, 0.0], [0.5, 0.5]]
eta = [1.0, 0.1]
q00_ladder = [4e-3, 2e-3, 1e-3]
series_terms = 20
[green]
samples = 3
eta = [0.1, 0.2, 0.4]
sources = 2
claims = ["J1", "A3"]
bootstrap = 20
cutoff_scale = 2.0
[verify]
criteria = [2, 5, 11]
)";

std::string bernoulli(double gamma) {
  std::string s = kBernoulli;
  const auto at = s.find("GAMMA");
  return s.replace(at, 5, std::to_string(gamma));
}

}  // namespace

TEST_F(Cli, EnvWithZeroContrastWritesIdentityFields) {
  const auto cfg = write_config("c.toml", bernoulli(0.0));
  ASSERT_EQ(run("env --config " + cfg.string()), 0) << err();
  const auto d = dir_ / "out" / "env" / "L8";
  const auto f = hlab::load_field((d / "sample_0000.hlab").string());
  EXPECT_EQ(f.header.kind, "coef");
  EXPECT_EQ(f.header.provenance.seed, 5u);
  const auto config = hlab::load_config(cfg);
  EXPECT_EQ(f.header.provenance.config_hash, config.hash);
  const auto a = f.real();
  for (std::size_t x = 0; x < a.sites(); ++x) {
    EXPECT_EQ(a(0, x), 1.0);
    EXPECT_EQ(a(1, x), 0.0);
    EXPECT_EQ(a(3, x), 1.0);
  }
  const auto side = json::parse(read(d / "sample_0001.json"));
  EXPECT_EQ(side["provenance"]["seed"], 5);
  EXPECT_EQ(side["max_violation"], 0.0);
  EXPECT_EQ(json::parse(read(d / "summary.json"))["samples"].size(), 2u);
  // progress log is JSON lines
  std::istringstream log(err());
  std::string line;
  while (std::getline(log, line)) EXPECT_NO_THROW(json::parse(line)) << line;
}

TEST_F(Cli, SameSeedReproducesBytes) {
  const auto cfg = write_config("c.toml", bernoulli(0.5));
  ASSERT_EQ(run("env --config " + cfg.string()), 0) << err();
  const auto first = read(dir_ / "out" / "env" / "L8" / "sample_0001.hlab");
  ASSERT_EQ(run("env --threads 2 --config " + cfg.string()), 0) << err();
  EXPECT_EQ(read(dir_ / "out" / "env" / "L8" / "sample_0001.hlab"), first);
  ASSERT_EQ(run("env --seed 6 --config " + cfg.string()), 0) << err();
  EXPECT_NE(read(dir_ / "out" / "env" / "L8" / "sample_0001.hlab"), first);
}

TEST_F(Cli, DoubleLWritesBothSides) {
  const auto cfg = write_config("c.toml", bernoulli(0.5));
  ASSERT_EQ(run("env --double-L --config " + cfg.string()), 0) << err();
  EXPECT_TRUE(fs::exists(dir_ / "out" / "env" / "L8" / "sample_0000.hlab"));
  EXPECT_TRUE(fs::exists(dir_ / "out" / "env" / "L16" / "sample_0000.hlab"));
}

TEST_F(Cli, ConfigErrorsExitTwo) {
  const auto cfg = write_config("bad.toml", bernoulli(1.5));
  EXPECT_EQ(run("env --config " + cfg.string()), 2);
  EXPECT_NE(err().find("environment.gamma"), std::string::npos) << err();
  EXPECT_EQ(run("env"), 2);
  EXPECT_EQ(run("bogus --config x"), 2);
  EXPECT_EQ(run("env --config " + (dir_ / "missing.toml").string()), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, QmatrixWritesTables) {
  const auto cfg = write_config("c.toml", bernoulli(0.5));
  ASSERT_EQ(run("qmatrix --config " + cfg.string()), 0) << err();
  const auto d = dir_ / "out" / "qmatrix" / "L8";
  const auto q = read(d / "q.csv");
  EXPECT_EQ(q.rfind("# hlab qmatrix seed=5", 0), 0u) << q;
  EXPECT_NE(q.find("xi_1,xi_2,eta,re_q_11"), std::string::npos);
  // 2 xi points x 2 eta values plus the extrapolated row
  EXPECT_EQ(std::count(q.begin(), q.end(), '\n'), 2 + 4 + 1);
  const auto q00 = json::parse(read(d / "q00.json"));
  EXPECT_TRUE(q00.contains("provenance"));
  EXPECT_TRUE(fs::exists(d / "series.csv"));
}

TEST_F(Cli, GreenResumesFromCacheAndDetectsCorruption) {
  const auto cfg = write_config("c.toml", bernoulli(0.5));
  ASSERT_EQ(run("green --config " + cfg.string()), 0) << err();
  const auto d = dir_ / "out" / "green" / "L8";
  const auto avg = read(d / "averaged_eta0.1.csv");
  const auto fit = read(d / "fit_J1.json");
  EXPECT_NE(avg.find("seed=5"), std::string::npos);
  EXPECT_TRUE(fs::exists(d / "remainder_low_eta0.1.csv"));
  EXPECT_EQ(json::parse(read(d / "cutoff_eta0.1.json"))["inexact_sites"], 0);

  ASSERT_EQ(run("green --config " + cfg.string()), 0) << err();
  EXPECT_NE(err().find("\"cached\":3"), std::string::npos) << err();
  EXPECT_EQ(read(d / "averaged_eta0.1.csv"), avg);
  EXPECT_EQ(read(d / "fit_J1.json"), fit);

  // cache written under another seed is refused
  EXPECT_EQ(run("green --seed 9 --config " + cfg.string()), 3);

  const auto cached = d / "cache" / "eta0.1" / "sample_0001.hlab";
  ASSERT_TRUE(fs::exists(cached));
  const auto bytes = read(cached);
  std::ofstream(cached, std::ios::binary) << bytes.substr(0, bytes.size() - 8);
  EXPECT_EQ(run("green --config " + cfg.string()), 3);
  EXPECT_NE(err().find("truncated"), std::string::npos) << err();
}

TEST_F(Cli, VerifySubsetPasses) {
  const auto cfg = write_config("c.toml", bernoulli(0.5));
  ASSERT_EQ(run("verify --config " + cfg.string()), 0) << err();
  const auto out = read(dir_ / "stdout.txt");
  EXPECT_NE(out.find("[PASS] criterion  2"), std::string::npos) << out;
  EXPECT_NE(out.find("[PASS] criterion  5"), std::string::npos) << out;
  EXPECT_NE(out.find("[PASS] criterion 11"), std::string::npos) << out;
  const auto rep = json::parse(read(dir_ / "out" / "verify" / "report.json"));
  EXPECT_EQ(rep["criteria"].size(), 3u);
}
