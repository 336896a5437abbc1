#include <gtest/gtest.h>

#include <string>

#include "bstep/config.hpp"

using namespace bstep;

namespace {

std::string fixture(const char* name) { return std::string(BSTEP_CONFIG_DIR) + "/" + name; }

const char* kMinimal = R"(
system.n = 2
system.m = 1
system.lambda.1 = -1
system.lambda.2 = 1
)";

std::string with(const std::string& extra) { return std::string(kMinimal) + extra + "\n"; }

std::string error_key(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST(LoadConfig, ShippedFixturesLoad) {
  auto c = load_config(fixture("fixture_2x2.cfg"));
  EXPECT_EQ(c.n, 2);
  EXPECT_EQ(c.m, 1);
  EXPECT_FALSE(c.quasilinear);
  EXPECT_EQ(c.grid_n, 200);
  auto c3 = load_config(fixture("fixture_3x3.cfg"));
  EXPECT_EQ(c3.n, 3);
  EXPECT_EQ(c3.m, 2);
  auto q = load_config(fixture("quasilinear_2x2.cfg"));
  EXPECT_TRUE(q.quasilinear);
  EXPECT_TRUE(q.initial_in_target);
  ASSERT_TRUE(q.initial_h2.has_value());
  EXPECT_EQ(*q.initial_h2, 1e-3);
}

TEST(LoadConfig, FixturePlantMatchesValues) {
  auto c = load_config(fixture("fixture_2x2.cfg"));
  auto p = make_linear_plant(c, SpatialGrid(20));
  EXPECT_EQ(p.speeds()(0, 0.3), -1.0);
  EXPECT_EQ(p.coupling()(0, 1, 0.3), 0.5);
  EXPECT_EQ(p.reflection()(0, 0), 0.8);
}

TEST(LoadConfig, MissingFileIsConfigError) { EXPECT_THROW(load_config("/nonexistent/x.cfg"), ConfigError); }

TEST(ParseConfig, SplitIndexMustBeBelowN) {
  EXPECT_EQ(error_key("system.n = 2\nsystem.m = 2\nsystem.lambda.1 = -1\nsystem.lambda.2 = -0.5\n"), "system.m");
  EXPECT_EQ(error_key("system.n = 2\nsystem.m = 0\nsystem.lambda.1 = -1\nsystem.lambda.2 = 1\n"), "system.m");
}

TEST(ParseConfig, UnparseableSpeedNamesKey) {
  EXPECT_EQ(error_key("system.n = 2\nsystem.m = 1\nsystem.lambda.1 = -1 +* 2\nsystem.lambda.2 = 1\n"),
            "system.lambda.1");
}

TEST(ParseConfig, MissingRequiredKey) {
  EXPECT_EQ(error_key("system.n = 2\nsystem.m = 1\nsystem.lambda.1 = -1\n"), "system.lambda.2");
  EXPECT_EQ(error_key("system.m = 1\n"), "system.n");
}

TEST(ParseConfig, GridLowerBound) { EXPECT_EQ(error_key(with("discretization.n = 8")), "discretization.n"); }

TEST(ParseConfig, UnknownAndDuplicateKeys) {
  EXPECT_EQ(error_key(with("system.lamda.1 = 3")), "system.lamda.1");
  EXPECT_EQ(error_key(with("design.lambda = 1\ndesign.lambda = 2")), "design.lambda");
}

TEST(ParseConfig, CommentsAndQuotes) {
  auto c = parse_config(with("# comment\nsystem.sigma.1.2 = \"0.5*x\"  # trailing\noutput.dir = \"a # b\""));
  ASSERT_TRUE(c.sigma[1]);
  EXPECT_EQ((*c.sigma[1]).evaluate(2.0), 1.0);
  EXPECT_EQ(c.output_dir, "a # b");
}

TEST(ParseConfig, FormsConflict) {
  EXPECT_EQ(error_key(with("system.sigma.1.2 = 0.5\nsystem.f.1 = \"u2\"\nsystem.f.2 = \"u1\"\nsystem.g.2 = \"u1\"")),
            "system.sigma.1.2");
  EXPECT_EQ(error_key(with("system.f.1 = \"u2\"")), "system.f.2");
  EXPECT_EQ(error_key(with("system.sigma.1.1 = 0.5")), "system.sigma.1.1");
}

TEST(ParseConfig, DesignSwitches) {
  auto c = parse_config(with("design.mu_mode = conservative\ndesign.p_mode = plus\ndesign.extension = on\ndesign.d.1 = 3"));
  EXPECT_EQ(c.mu_mode, MuMode::Conservative);
  EXPECT_EQ(c.p_mode, PMode::Plus);
  EXPECT_TRUE(c.extension);
  EXPECT_EQ(c.ext_d[0], 3.0);
  EXPECT_EQ(c.ext_dt[0], 2.0);
  EXPECT_EQ(error_key(with("design.d.1 = 2")), "design.dt.1");
  EXPECT_EQ(error_key(with("design.mu_mode = exact")), "design.mu_mode");
}

TEST(ParseConfig, SimulationMode) {
  auto c = parse_config(with("simulation.mode = target-exact\nsimulation.loop = open"));
  EXPECT_EQ(c.mode, SimMode::TargetExact);
  EXPECT_EQ(c.loop, LoopMode::Open);
}

TEST(MakePlant, QuasilinearDiagonalMustMatchSpeed) {
  auto c = parse_config(with("system.a.1.1 = \"-2 + u1\"\nsystem.f.1 = \"u2\"\nsystem.f.2 = \"u1\"\nsystem.g.2 = \"u1\""));
  try {
    make_quasilinear_plant(c, SpatialGrid(20));
    FAIL() << "expected a mismatch";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "system.a.1.1");
  }
}

TEST(MakePlant, QuasilinearFixtureEvaluates) {
  auto c = load_config(fixture("quasilinear_2x2.cfg"));
  auto p = make_quasilinear_plant(c, SpatialGrid(20));
  std::vector<double> u{0.1, 0.2};
  EXPECT_NEAR(p.a(0, 0, 0.5, u), -0.99, 1e-15);
  EXPECT_NEAR(p.f(0, 0.5, u), 0.02 + 0.1 + 0.001, 1e-15);
  EXPECT_NEAR(p.g(0, u), 0.08 + 0.005, 1e-15);
}

TEST(MakePlant, InitialFieldSampled) {
  auto c = load_config(fixture("quasilinear_2x2.cfg"));
  SpatialGrid g(10);
  auto s = initial_field(c, g);
  EXPECT_NEAR(s(0, 5), 1.0, 1e-15);
  EXPECT_NEAR(s(1, 5), -0.5, 1e-15);
}
