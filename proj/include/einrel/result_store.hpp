#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "einrel/config.hpp"
#include "einrel/report.hpp"

namespace einrel {

#ifndef EINREL_BUILD_ID
#define EINREL_BUILD_ID "unknown"
#endif

/// Source revision plus the compile time of the including translation unit,
/// so a rebuild never reads results written by an older binary.
inline std::string build_id() { return std::string(EINREL_BUILD_ID) + " " + __DATE__ + " " + __TIME__; }

class CacheFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u64(s.size());
    buf_ += s;
  }
  void cell(const Cell& c) {
    u8(static_cast<std::uint8_t>(c.index()));
    if (const auto* s = std::get_if<std::string>(&c)) str(*s);
    else if (const auto* d = std::get_if<double>(&c)) f64(*d);
    else u64(static_cast<std::uint64_t>(std::get<std::int64_t>(c)));
  }
  void doubles(const std::vector<double>& v) {
    u64(v.size());
    for (double d : v) f64(d);
  }
  std::string& bytes() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const char* p, std::size_t n) : p_(p), end_(p + n) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(*p_++);
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(p_[i])) << (8 * i);
    p_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t count(std::size_t min_bytes_each) {
    const std::uint64_t n = u64();
    if (min_bytes_each > 0 && n > remaining() / min_bytes_each) throw CacheFormatError("record count exceeds payload");
    return static_cast<std::size_t>(n);
  }
  std::string str() {
    const std::size_t n = count(1);
    std::string s(p_, n);
    p_ += n;
    return s;
  }
  Cell cell() {
    switch (u8()) {
      case 0: return str();
      case 1: return f64();
      case 2: return static_cast<std::int64_t>(u64());
      default: throw CacheFormatError("bad cell tag");
    }
  }
  std::vector<double> doubles() {
    std::vector<double> v(count(8));
    for (double& d : v) d = f64();
    return v;
  }
  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

 private:
  void need(std::size_t n) {
    if (remaining() < n) throw CacheFormatError("truncated record");
  }
  const char* p_;
  const char* end_;
};

inline constexpr char kMagic[8] = {'E', 'I', 'N', 'R', 'C', 'A', 'C', 'H'};
inline constexpr std::uint64_t kFormatVersion = 1;

}  // namespace detail

inline std::string encode_result(const SuiteResult& r) {
  detail::Writer w;
  w.str(r.suite);
  w.u64(r.config_hash);
  w.u64(r.total_samples);
  w.u64(r.tables.size());
  for (const auto& t : r.tables) {
    w.str(t.name);
    w.u64(t.columns.size());
    for (const auto& c : t.columns) w.str(c);
    w.u64(t.rows.size());
    for (const auto& row : t.rows)
      for (const auto& c : row) w.cell(c);
  }
  w.u64(r.checks.size());
  for (const auto& c : r.checks) {
    w.str(c.name);
    w.u8(c.pass);
    w.f64(c.value);
    w.f64(c.threshold);
    w.str(c.detail);
  }
  w.u64(r.plots.size());
  for (const auto& p : r.plots) {
    w.str(p.name), w.str(p.title), w.str(p.xlabel), w.str(p.ylabel);
    w.u8(p.log_y);
    w.u64(p.series.size());
    for (const auto& s : p.series) {
      w.str(s.label);
      w.doubles(s.x), w.doubles(s.y), w.doubles(s.err);
    }
    w.u64(p.hlines.size());
    for (const auto& [label, v] : p.hlines) w.str(label), w.f64(v);
  }
  w.u64(r.warnings.size());
  for (const auto& s : r.warnings) w.str(s);
  return std::move(w.bytes());
}

inline SuiteResult decode_result(const std::string& bytes) {
  detail::Reader rd(bytes.data(), bytes.size());
  SuiteResult r;
  r.suite = rd.str();
  r.config_hash = rd.u64();
  r.total_samples = rd.u64();
  r.tables.resize(rd.count(16));
  for (auto& t : r.tables) {
    t.name = rd.str();
    t.columns.resize(rd.count(8));
    for (auto& c : t.columns) c = rd.str();
    t.rows.resize(rd.count(t.columns.size()));
    for (auto& row : t.rows) {
      row.reserve(t.columns.size());
      for (std::size_t i = 0; i < t.columns.size(); ++i) row.push_back(rd.cell());
    }
  }
  r.checks.resize(rd.count(33));
  for (auto& c : r.checks) {
    c.name = rd.str();
    c.pass = rd.u8() != 0;
    c.value = rd.f64();
    c.threshold = rd.f64();
    c.detail = rd.str();
  }
  r.plots.resize(rd.count(49));
  for (auto& p : r.plots) {
    p.name = rd.str(), p.title = rd.str(), p.xlabel = rd.str(), p.ylabel = rd.str();
    p.log_y = rd.u8() != 0;
    p.series.resize(rd.count(32));
    for (auto& s : p.series) {
      s.label = rd.str();
      s.x = rd.doubles(), s.y = rd.doubles(), s.err = rd.doubles();
    }
    p.hlines.resize(rd.count(16));
    for (auto& [label, v] : p.hlines) label = rd.str(), v = rd.f64();
  }
  r.warnings.resize(rd.count(8));
  for (auto& s : r.warnings) s = rd.str();
  if (rd.remaining() != 0) throw CacheFormatError("trailing bytes after payload");
  return r;
}

enum class CacheStatus { miss, hit, corrupt };

struct CacheLookup {
  CacheStatus status = CacheStatus::miss;
  std::optional<SuiteResult> result;
  std::string reason;
};

/// Results keyed by suite, config hash and build. Each file holds a header,
/// a length-prefixed payload and an FNV-1a checksum over everything before it.
class ResultStore {
 public:
  explicit ResultStore(std::filesystem::path dir, std::string build = build_id())
      : dir_(std::move(dir)), build_(std::move(build)) {}

  std::filesystem::path path_for(const std::string& suite, std::uint64_t config_hash) const {
    return dir_ / (suite + "-" + hex64(config_hash) + "-" + hex64(fnv1a(build_)) + ".bin");
  }

  CacheLookup load(const std::string& suite, std::uint64_t config_hash) const {
    const auto path = path_for(suite, config_hash);
    std::ifstream in(path, std::ios::binary);
    if (!in) return {};
    const std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
      return {CacheStatus::hit, parse(file, suite, config_hash), ""};
    } catch (const CacheFormatError& e) {
      return {CacheStatus::corrupt, std::nullopt, e.what()};
    }
  }

  void store(const SuiteResult& r) const {
    std::filesystem::create_directories(dir_);
    const std::string payload = encode_result(r);
    detail::Writer w;
    for (char c : detail::kMagic) w.u8(static_cast<std::uint8_t>(c));
    w.u64(detail::kFormatVersion);
    w.u64(r.config_hash);
    w.str(build_);
    w.str(r.suite);
    w.u64(r.total_samples);
    w.str(payload);
    std::string& bytes = w.bytes();
    w.u64(fnv1a(bytes));
    const auto path = path_for(r.suite, r.config_hash);
    auto tmp = path;
    tmp += ".tmp";
    write_text(tmp, bytes);
    std::filesystem::rename(tmp, path);
  }

 private:
  SuiteResult parse(const std::string& file, const std::string& suite, std::uint64_t config_hash) const {
    if (file.size() < sizeof detail::kMagic + 8) throw CacheFormatError("file too short");
    const std::size_t body = file.size() - 8;
    detail::Reader tail(file.data() + body, 8);
    if (tail.u64() != fnv1a(std::string_view(file.data(), body))) throw CacheFormatError("checksum mismatch");
    detail::Reader rd(file.data(), body);
    for (char c : detail::kMagic)
      if (rd.u8() != static_cast<std::uint8_t>(c)) throw CacheFormatError("bad magic");
    if (rd.u64() != detail::kFormatVersion) throw CacheFormatError("unsupported version");
    if (rd.u64() != config_hash) throw CacheFormatError("config hash mismatch");
    if (rd.str() != build_) throw CacheFormatError("build id mismatch");
    if (rd.str() != suite) throw CacheFormatError("suite mismatch");
    const std::uint64_t samples = rd.u64();
    SuiteResult r = decode_result(rd.str());
    if (rd.remaining() != 0) throw CacheFormatError("trailing bytes");
    if (r.total_samples != samples || r.suite != suite || r.config_hash != config_hash)
      throw CacheFormatError("header and payload disagree");
    r.from_cache = true;
    return r;
  }

  std::filesystem::path dir_;
  std::string build_;
};

}  // namespace einrel
