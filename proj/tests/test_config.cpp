#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "einrel/config.hpp"

using namespace einrel;

namespace {

std::string field_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "";
}

const char* kSample = R"(
name = bumps
[env]
kind = random-bumps
dimension = 2
seed = 11
bump_amplitude = 0.5
kappa = 0.5
[sim]
dt = 0.005
n_paths = 40
n_envs = 7
levels = 5, 10
stop_at_clock = 12.5
[grid]
lambda = 0.2, 0.05
alpha = 1, 2, 4
powers = 2, 4
[tolerance]
sigma_rel = 0.03
)";

}  // namespace

TEST(Config, RoundTripIsLossless) {
  const ExperimentConfig c = parse_config(kSample);
  EXPECT_EQ(c.env.kind, EnvironmentKind::random_bumps);
  EXPECT_EQ(c.env.dimension, 2u);
  EXPECT_EQ(c.sim.n_envs, 7u);
  EXPECT_EQ(c.powers, (std::vector<int>{2, 4}));
  EXPECT_DOUBLE_EQ(c.tolerance("sigma_rel", 1.0), 0.03);
  ASSERT_TRUE(c.sim.stop_at_clock);
  const std::string text = serialize_config(c);
  const ExperimentConfig back = parse_config(text);
  EXPECT_EQ(back, c);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, DefaultsRoundTrip) {
  const ExperimentConfig c;
  EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(field_of("sim.dt = fast\n"), "sim.dt");
  EXPECT_EQ(field_of("sim.n_paths = -3\n"), "sim.n_paths");
  EXPECT_EQ(field_of("env.colour = red\n"), "env.colour");
  EXPECT_EQ(field_of("[env]\nkind = lattice\n"), "env.kind");
  EXPECT_EQ(field_of("suite.identity_check = maybe\n"), "suite.identity_check");
  EXPECT_EQ(field_of("sim.dt = 0.001\nsim.dt = 0.002\n"), "sim.dt");
  EXPECT_EQ(field_of("env.dimension = 4\n"), "env.dimension");
  EXPECT_EQ(field_of("grid.lambda =\n"), "grid.lambda");
  EXPECT_EQ(field_of("just some words\n"), "line 1");
  EXPECT_EQ(field_of("[env\n"), "line 1");
}

TEST(Config, StepRuleIsEnforced) { EXPECT_EQ(field_of("sim.dt = 0.05\n"), "sim.dt"); }

TEST(Config, HashTracksOnlyResultInputs) {
  const ExperimentConfig a = parse_config(kSample);
  ExperimentConfig b = a;
  b.output_dir = "elsewhere";
  b.threads = 8;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.sim.dt = 0.0025;
  EXPECT_NE(config_hash(a), config_hash(b));
  b = a;
  b.tolerances["sigma_rel"] = 0.05;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(Config, CommentsAndWhitespace) {
  const ExperimentConfig c = parse_config("  # comment\nsim.n_paths = 12   # trailing\n\n[ grid ]\n lambda = 0.1\n");
  EXPECT_EQ(c.sim.n_paths, 12u);
  EXPECT_EQ(c.lambdas, std::vector<double>{0.1});
}

TEST(Config, MissingFileNamesTheFlag) {
  try {
    load_config("/nonexistent/config.ini");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "--config");
  }
}

TEST(Config, ShippedConfigsAreValid) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(EINREL_CONFIG_DIR)) {
    if (e.path().extension() != ".ini") continue;
    EXPECT_NO_THROW(load_config(e.path().string())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 7u);
}
