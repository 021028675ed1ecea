#include "support.hpp"

using namespace hlab;

namespace {

const char* kBase = R"(seed = 7
[grid]
dim = 2
side = 16
[environment]
kind = "bernoulli"
gamma = 0.5
)";

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "test.toml");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, ParsesMinimalDocument) {
  const auto c = parse_config(kBase);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.dim, 2);
  EXPECT_EQ(c.side, 16);
  EXPECT_EQ(c.environment.kind(), "bernoulli");
  EXPECT_DOUBLE_EQ(c.environment.bounds().lambda, 0.5);
  EXPECT_EQ(c.grid().size(), 256u);
  EXPECT_EQ(c.verify.criteria.size(), 12u);
}

TEST(Config, GammaOutsideRangeNamesConstraintAndLine) {
  const std::string text = std::string(kBase).replace(std::string(kBase).find("gamma = 0.5"), 11, "gamma = 1.5");
  const auto msg = error_of(text);
  EXPECT_NE(msg.find("environment.gamma"), std::string::npos) << msg;
  EXPECT_NE(msg.find("0 <= gamma < 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find("line 7"), std::string::npos) << msg;
}

TEST(Config, UnknownKeyAndBadTypes) {
  EXPECT_NE(error_of("bogus = 1\n" + std::string(kBase)).find("bogus: unknown key"), std::string::npos);
  const auto nested = error_of(std::string(kBase) + "bogus = 1\n");
  EXPECT_NE(nested.find("environment.bogus: unknown key"), std::string::npos) << nested;
  EXPECT_NE(nested.find("line 8"), std::string::npos) << nested;
  EXPECT_NE(error_of(std::string(kBase) + "[green]\nsource = 4\n").find("green.source"), std::string::npos);
  EXPECT_NE(error_of("seed = \"x\"\n[grid]\ndim=2\nside=16\n[environment]\nkind=\"bernoulli\"\ngamma=0.1\n")
                .find("seed: expected an integer"),
            std::string::npos);
  EXPECT_NE(error_of("[grid]\ndim=2\nside=15\n[environment]\nkind=\"bernoulli\"\ngamma=0.1\n").find("grid.side"),
            std::string::npos);
  EXPECT_NE(error_of("[grid]\ndim=2\nside=16\n").find("environment"), std::string::npos);
  EXPECT_NE(error_of("[grid\n").find("test.toml:1"), std::string::npos);
}

TEST(Config, EtaFloorAndLadderLength) {
  EXPECT_NE(error_of(std::string(kBase) + "[qmatrix]\neta = [0.0]\n").find("qmatrix.eta"), std::string::npos);
  EXPECT_NE(error_of(std::string(kBase) + "[qmatrix]\nq00_ladder = [1e-2, 1e-3]\n").find("q00_ladder"), std::string::npos);
  EXPECT_NE(error_of(std::string(kBase) + "[green]\neta = [0.1, 0.2]\n").find("green.eta"), std::string::npos);
  EXPECT_NE(error_of(std::string(kBase) + "[green]\ncutoff_scale = 5.0\n").find("cutoff_scale"), std::string::npos);
}

TEST(Config, VerifyTable) {
  const auto c = parse_config(std::string(kBase) + "[verify]\ncriteria = [5, 11]\nsources = 8\nrerun_threads = 2\n");
  EXPECT_EQ(c.verify.criteria, (std::vector<int>{5, 11}));
  EXPECT_EQ(c.verify.sources, 8);
  EXPECT_EQ(c.verify.rerun_threads, 2);
  EXPECT_NE(error_of(std::string(kBase) + "[verify]\ncriteria = [13]\n").find("1..12"), std::string::npos);
  EXPECT_NE(error_of(std::string(kBase) + "[verify]\nsources = 0\n").find("verify.sources"), std::string::npos);
}

TEST(Config, EnvironmentKinds) {
  const auto u = parse_config("[grid]\ndim=2\nside=8\n[environment]\nkind=\"iid_general\"\nlaw=\"uniform\"\nlo=0.5\nhi=2.0\n");
  EXPECT_EQ(u.environment.kind(), "iid_general");
  const auto a = parse_config(
      "[grid]\ndim=2\nside=8\n[environment]\nkind=\"iid_general\"\nlaw=\"atoms\"\n"
      "atoms=[{weight=0.5, matrix=[[2.0,0.1],[0.1,1.0]]}, {weight=0.5, matrix=[[1.0,0.0],[0.0,1.0]]}]\n");
  EXPECT_TRUE(a.environment.mean_coefficient(2).has_value());
  const auto bad = error_of(
      "[grid]\ndim=2\nside=8\n[environment]\nkind=\"iid_general\"\nlaw=\"atoms\"\n"
      "atoms=[{weight=1.0, matrix=[[1.0,0.0],[0.0,-1.0]]}]\n");
  EXPECT_NE(bad.find("ellipticity"), std::string::npos) << bad;
  const auto m = parse_config(
      "[grid]\ndim=2\nside=8\n[environment]\nkind=\"massive_field\"\nmass=0.5\n"
      "potential={kappa=0.5, lambda4=1.0}\nmap={c0=1.0, c1=0.4}\n");
  EXPECT_EQ(m.environment.kind(), "massive_field");
  EXPECT_DOUBLE_EQ(m.environment.bounds().Lambda, 1.4);
  EXPECT_NE(error_of("[grid]\ndim=2\nside=8\n[environment]\nkind=\"massive_field\"\nmass=0.0\n").find("mass"),
            std::string::npos);
  EXPECT_NE(error_of("[grid]\ndim=2\nside=8\n[environment]\nkind=\"bogus\"\n").find("environment.kind"),
            std::string::npos);
}

TEST(Config, HashIsDeterministicAndContentSensitive) {
  const auto a = parse_config(kBase), b = parse_config(kBase);
  EXPECT_EQ(a.hash, b.hash);
  EXPECT_NE(a.hash, parse_config("threads = 2\n" + std::string(kBase)).hash);
  // comments and whitespace do not change the canonical document
  EXPECT_EQ(a.hash, parse_config(std::string("# note\n") + kBase).hash);
}

TEST(Config, JsonFallbackMatchesToml) {
  const auto j = parse_config_json(
      R"({"seed": 7, "grid": {"dim": 2, "side": 16}, "environment": {"kind": "bernoulli", "gamma": 0.5}})");
  const auto t = parse_config(kBase);
  EXPECT_EQ(j.seed, t.seed);
  EXPECT_EQ(j.side, t.side);
  EXPECT_EQ(j.environment.kind(), t.environment.kind());
  EXPECT_THROW(parse_config_json("[1, 2]"), ConfigError);
  EXPECT_THROW(parse_config_json("{"), ConfigError);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"desk.toml", "bernoulli_d1.toml", "massive_field.toml", "massless_d1.json", "uniform_d2.toml"}) {
    SCOPED_TRACE(name);
    EXPECT_NO_THROW(load_config(std::filesystem::path(HLAB_SOURCE_DIR) / "configs" / name));
  }
  EXPECT_THROW(load_config("/nonexistent/config.toml"), ConfigError);
}
