#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "einrel/result_store.hpp"

using namespace einrel;
namespace fs = std::filesystem;

namespace {

SuiteResult sample_result() {
  SuiteResult r;
  r.suite = "sigma";
  r.config_hash = 0x1234abcdull;
  r.total_samples = 4096;
  Table t{"sigma", {"i", "j", "value", "se", "n"}, {}};
  t.add({std::int64_t{0}, std::int64_t{0}, 0.98, 0.01, std::int64_t{4096}});
  t.add({std::int64_t{0}, std::int64_t{1}, -0.002, 0.007, std::int64_t{4096}});
  r.tables.push_back(t);
  r.checks.push_back({"sigma_se", true, 1.2, 3.0, "max |z|, \"quoted\""});
  Plot p;
  p.name = "gap";
  p.title = "gap";
  p.log_y = true;
  p.series.push_back({"gap", {0.2, 0.1}, {0.3, 0.2}, {0.01, 0.02}});
  p.hlines.push_back({"bound", 0.15});
  r.plots.push_back(p);
  r.warnings = {"short_time"};
  return r;
}

class ResultStoreTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("einrel-store-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                       "-" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  fs::path dir;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST(ResultCodec, RoundTrip) {
  const SuiteResult r = sample_result();
  const SuiteResult back = decode_result(encode_result(r));
  EXPECT_EQ(encode_result(back), encode_result(r));
  ASSERT_EQ(back.tables.size(), 1u);
  EXPECT_EQ(back.tables[0].csv(r.config_hash), r.tables[0].csv(r.config_hash));
  EXPECT_EQ(back.checks[0].detail, r.checks[0].detail);
  EXPECT_EQ(back.plots[0].series[0].err, r.plots[0].series[0].err);
}

TEST(ResultCodec, TruncationIsDetected) {
  const std::string bytes = encode_result(sample_result());
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, bytes.size() / 2, bytes.size() - 1})
    EXPECT_THROW(decode_result(bytes.substr(0, cut)), CacheFormatError) << cut;
  EXPECT_THROW(decode_result(bytes + "x"), CacheFormatError);
}

TEST_F(ResultStoreTest, MissThenHit) {
  const ResultStore store(dir, "build-a");
  const SuiteResult r = sample_result();
  EXPECT_EQ(store.load(r.suite, r.config_hash).status, CacheStatus::miss);
  store.store(r);
  const CacheLookup hit = store.load(r.suite, r.config_hash);
  ASSERT_EQ(hit.status, CacheStatus::hit);
  EXPECT_TRUE(hit.result->from_cache);
  EXPECT_EQ(hit.result->total_samples, 4096u);
  EXPECT_EQ(store.load(r.suite, r.config_hash + 1).status, CacheStatus::miss);
  EXPECT_EQ(store.load("regen", r.config_hash).status, CacheStatus::miss);
  EXPECT_EQ(ResultStore(dir, "build-b").load(r.suite, r.config_hash).status, CacheStatus::miss);
}

TEST_F(ResultStoreTest, FlippedByteIsCorrupt) {
  const ResultStore store(dir, "build-a");
  const SuiteResult r = sample_result();
  store.store(r);
  const fs::path p = store.path_for(r.suite, r.config_hash);
  const std::string good = slurp(p);
  for (std::size_t pos : {std::size_t{3}, good.size() / 2, good.size() - 2}) {
    std::string bad = good;
    bad[pos] = static_cast<char>(bad[pos] ^ 0x40);
    write_text(p, bad);
    const CacheLookup l = store.load(r.suite, r.config_hash);
    EXPECT_EQ(l.status, CacheStatus::corrupt) << pos;
    EXPECT_FALSE(l.reason.empty());
  }
  write_text(p, good.substr(0, good.size() - 9));
  EXPECT_EQ(store.load(r.suite, r.config_hash).status, CacheStatus::corrupt);
  store.store(r);
  EXPECT_EQ(store.load(r.suite, r.config_hash).status, CacheStatus::hit);
}
