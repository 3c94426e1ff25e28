#include <gtest/gtest.h>
#include <sys/wait.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "einrel/report.hpp"

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string out;
};

// Runs the CLI through the shell; stderr is folded into the captured output.
CliRun cli(const std::string& args) {
  const std::string cmd = std::string("'") + EINREL_CLI_PATH + "' " + args + " 2>&1";
  CliRun r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("einrel-cli-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  std::string write_config(const std::string& name, const std::string& text) const {
    const fs::path p = dir / name;
    std::ofstream(p) << text;
    return p.string();
  }

  std::string common(const std::string& cfg, const std::string& out) const {
    return "--config '" + cfg + "' --out '" + (dir / out).string() + "' --cache-dir '" + (dir / "cache").string() + "'";
  }

  fs::path dir;
};

const char* kMoments = R"(name = cli
env.kind = constant
env.dimension = 1
sim.n_paths = 64
sim.base_seed = 3
grid.lambda = 0.2
grid.alpha = 1, 2
)";

}  // namespace

TEST_F(CliTest, MalformedConfigExitsTwoAndNamesField) {
  const auto cfg = write_config("bad.ini", "sim.dt = quick\n");
  const CliRun r = cli("run moments " + common(cfg, "out"));
  EXPECT_EQ(r.code, 2) << r.out;
  EXPECT_NE(r.out.find("sim.dt"), std::string::npos) << r.out;
}

TEST_F(CliTest, UnknownSuiteAndMissingConfig) {
  EXPECT_EQ(cli("run nonsense").code, 2);
  EXPECT_EQ(cli("run moments --config '" + (dir / "absent.ini").string() + "'").code, 2);
  EXPECT_EQ(cli("").code, 2);
}

TEST_F(CliTest, ProbeColumnsAndPeriodicValues) {
  const auto cfg = write_config("p.ini", "env.kind = periodic-1d\nenv.bump_amplitude = 0.5\n");
  const CliRun r = cli("env probe --config '" + cfg + "' --from 0 --to 1 --samples 5");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "x1,V,b1,a11");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) rows.push_back(einrel::parse_csv_line(line));
  ASSERT_EQ(rows.size(), 5u);
  // x = 0.25: V = 0.5 cos(pi/2) = 0 and b = -V' = pi.
  EXPECT_NEAR(std::stod(rows[1][0]), 0.25, 1e-12);
  EXPECT_NEAR(std::stod(rows[1][1]), 0.0, 1e-9);
  EXPECT_NEAR(std::stod(rows[1][2]), std::numbers::pi, 1e-9);
  EXPECT_NEAR(std::stod(rows[1][3]), 1.0, 1e-12);
  EXPECT_NEAR(std::stod(rows[0][2]), 0.0, 1e-9);
}

TEST_F(CliTest, ProbeTwoDimensionalHeader) {
  const auto cfg = write_config("b.ini", "env.kind = random-bumps\nenv.dimension = 2\n");
  const CliRun r = cli("env probe --config '" + cfg + "' --samples 3");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.substr(0, r.out.find('\n')), "x1,x2,V,b1,b2,a11,a12,a21,a22");
}

TEST_F(CliTest, TrajectoryDump) {
  const auto cfg = write_config("t.ini", "env.kind = periodic-1d\nsim.horizon = 1\nsim.lambda = 0.1\n");
  const fs::path file = dir / "traj.csv";
  const CliRun r = cli("env probe --trajectory --time-changed --config '" + cfg + "' --file '" + file.string() + "'");
  ASSERT_EQ(r.code, 0) << r.out;
  std::istringstream in(slurp(file));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "step,time,x1,B,bracket,A");
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  EXPECT_GT(n, 50u);
}

TEST_F(CliTest, ExitCodesFollowChecks) {
  const auto cfg = write_config("m.ini", kMoments);
  const CliRun ok = cli("run moments --no-cache " + common(cfg, "ok"));
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("PASS"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "ok" / "moments" / "summary.csv"));
  EXPECT_EQ(cli("report '" + (dir / "ok").string() + "'").code, 0);

  const auto strict = write_config("s.ini", std::string(kMoments) + "tolerance.moment_spread = 1\n");
  const CliRun bad = cli("run moments --no-cache " + common(strict, "bad"));
  EXPECT_EQ(bad.code, 1) << bad.out;
  EXPECT_NE(bad.out.find("FAIL"), std::string::npos);
  EXPECT_EQ(cli("report '" + (dir / "bad").string() + "'").code, 1);
  EXPECT_EQ(cli("report '" + (dir / "nowhere").string() + "'").code, 2);
}

TEST_F(CliTest, CsvRowsCarryHashAndSamples) {
  const auto cfg = write_config("m.ini", kMoments);
  ASSERT_EQ(cli("run moments " + common(cfg, "o")).code, 0);
  std::istringstream in(slurp(dir / "o" / "moments" / "moments.csv"));
  std::string line;
  std::getline(in, line);
  const auto head = einrel::parse_csv_line(line);
  EXPECT_EQ(head.back(), "config_hash");
  EXPECT_NE(std::find(head.begin(), head.end(), "n"), head.end());
  EXPECT_NE(std::find(head.begin(), head.end(), "se"), head.end());
  EXPECT_TRUE(fs::exists(dir / "o" / "moments" / "config.ini"));
}

TEST_F(CliTest, CacheHitMissAndCorruption) {
  const auto cfg = write_config("m.ini", kMoments);
  const CliRun first = cli("run moments " + common(cfg, "a"));
  ASSERT_EQ(first.code, 0) << first.out;
  EXPECT_NE(first.out.find("computed"), std::string::npos) << first.out;
  const CliRun second = cli("run moments " + common(cfg, "b"));
  EXPECT_NE(second.out.find("cache hit"), std::string::npos) << second.out;
  EXPECT_EQ(slurp(dir / "a" / "moments" / "moments.csv"), slurp(dir / "b" / "moments" / "moments.csv"));

  const auto finer = write_config("f.ini", std::string(kMoments) + "sim.dt = 0.005\n");
  const CliRun third = cli("run moments " + common(finer, "c"));
  EXPECT_NE(third.out.find("computed"), std::string::npos) << third.out;

  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir / "cache")) files.push_back(e.path());
  ASSERT_EQ(files.size(), 2u);
  for (const auto& f : files) {
    std::string bytes = slurp(f);
    bytes[bytes.size() / 2] ^= 0x11;
    std::ofstream(f, std::ios::binary) << bytes;
  }
  const CliRun again = cli("run moments " + common(cfg, "d"));
  EXPECT_EQ(again.code, 0);
  EXPECT_NE(again.out.find("corrupt"), std::string::npos) << again.out;
  EXPECT_NE(again.out.find("computed"), std::string::npos) << again.out;
  EXPECT_EQ(slurp(dir / "a" / "moments" / "moments.csv"), slurp(dir / "d" / "moments" / "moments.csv"));
  EXPECT_NE(cli("run moments " + common(cfg, "e")).out.find("cache hit"), std::string::npos);
}

TEST_F(CliTest, ThreadCountDoesNotChangeOutput) {
  const auto cfg = write_config("m.ini", kMoments);
  ASSERT_EQ(cli("run moments --no-cache --threads 1 " + common(cfg, "t1")).code, 0);
  ASSERT_EQ(cli("run moments --no-cache --threads 8 " + common(cfg, "t8")).code, 0);
  EXPECT_EQ(slurp(dir / "t1" / "moments" / "moments.csv"), slurp(dir / "t8" / "moments" / "moments.csv"));
}

TEST_F(CliTest, SeedFlagOverridesEnvironment) {
  const auto cfg = write_config("m.ini", kMoments);
  ASSERT_EQ(cli("run moments --no-cache --seed 9 " + common(cfg, "s1")).code, 0);
  ASSERT_EQ(cli("run moments --no-cache " + common(cfg, "s2")).code, 0);
  const std::string env = "EINREL_SEED=9 '" + std::string(EINREL_CLI_PATH) + "' run moments --no-cache " + common(cfg, "s3") + " >/dev/null 2>&1";
  ASSERT_EQ(std::system(env.c_str()), 0);
  EXPECT_NE(slurp(dir / "s1" / "moments" / "moments.csv"), slurp(dir / "s2" / "moments" / "moments.csv"));
  EXPECT_EQ(slurp(dir / "s1" / "moments" / "moments.csv"), slurp(dir / "s3" / "moments" / "moments.csv"));
}
