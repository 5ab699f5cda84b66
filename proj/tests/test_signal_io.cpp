#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "oracles.hpp"
#include "pdcycon/error.hpp"
#include "pdcycon/signal_io.hpp"

using namespace pdcycon;

namespace {

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an exception");
  return ErrorCode::IoError;
}

RawMeasurement small_measurement(std::size_t n) {
  RawMeasurement m;
  m.id = "m0";
  m.n_samples = n;
  for (std::size_t p = 0; p < kPhaseCount; ++p) {
    for (std::size_t i = 0; i < n; ++i) m.samples[p].push_back(0.25 * static_cast<double>(p) - 0.001 * i);
  }
  return m;
}

}  // namespace

TEST_CASE("manifest loads, counts classes and resolves paths") {
  oracle::TempDir dir("manifest");
  write_text(dir / "manifest.csv", "id,path,label\na,a.pdms,1\nb,sub/b.pdms,0\nc,/abs/c.pdms,0\n");
  const auto m = load_manifest(dir / "manifest.csv");
  REQUIRE(m.entries.size() == 3);
  CHECK(m.entries[0].path == dir.path() / "a.pdms");
  CHECK(m.entries[1].path == dir.path() / "sub/b.pdms");
  CHECK(m.entries[2].path == std::filesystem::path("/abs/c.pdms"));
  CHECK(m.class_counts.at(1) == 1);
  CHECK(m.class_counts.at(0) == 2);
}

TEST_CASE("manifest errors") {
  oracle::TempDir dir("manifest_err");
  SUBCASE("missing file") { CHECK(code_of([&] { load_manifest(dir / "nope.csv"); }) == ErrorCode::MissingFile); }
  SUBCASE("wrong header") {
    write_text(dir / "m.csv", "name,path,label\na,a.pdms,1\n");
    CHECK(code_of([&] { load_manifest(dir / "m.csv"); }) == ErrorCode::MalformedRow);
  }
  SUBCASE("label outside {0,1}") {
    write_text(dir / "m.csv", "id,path,label\na,a.pdms,2\n");
    CHECK(code_of([&] { load_manifest(dir / "m.csv"); }) == ErrorCode::MalformedRow);
  }
  SUBCASE("too few fields") {
    write_text(dir / "m.csv", "id,path,label\na,a.pdms\n");
    CHECK(code_of([&] { load_manifest(dir / "m.csv"); }) == ErrorCode::MalformedRow);
  }
  SUBCASE("duplicate id") {
    write_text(dir / "m.csv", "id,path,label\na,a.pdms,1\na,b.pdms,0\n");
    CHECK(code_of([&] { load_manifest(dir / "m.csv"); }) == ErrorCode::DuplicateId);
  }
}

TEST_CASE("written manifests read back with the same resolved paths") {
  oracle::TempDir dir("manifest_rt");
  Manifest m;
  m.entries.push_back({"x", dir / "x.pdms", 1});
  m.entries.push_back({"y", dir / "nested" / "y.pdms", 0});
  write_manifest(dir / "manifest.csv", m);
  const auto back = load_manifest(dir / "manifest.csv");
  REQUIRE(back.entries.size() == 2);
  CHECK(back.entries[0].path.lexically_normal() == (dir / "x.pdms").lexically_normal());
  CHECK(back.entries[1].path.lexically_normal() == (dir / "nested" / "y.pdms").lexically_normal());
  CHECK(oracle::slurp(dir / "manifest.csv").find(dir.path().string()) == std::string::npos);
}

TEST_CASE("PDMS round trip keeps float32 values") {
  oracle::TempDir dir("pdms");
  const auto m = small_measurement(100);
  write_measurement(dir / "m.pdms", m);
  CHECK(std::filesystem::file_size(dir / "m.pdms") == 8 + 3 * 100 * 4);
  const auto back = read_measurement(dir / "m.pdms", {"m0", dir / "m.pdms", 1});
  CHECK(back.n_samples == 100);
  CHECK(back.label == 1);
  for (std::size_t p = 0; p < kPhaseCount; ++p) {
    for (std::size_t i = 0; i < 100; ++i) {
      CHECK(back.samples[p][i] == static_cast<double>(static_cast<float>(m.samples[p][i])));
    }
  }
}

TEST_CASE("PDMS error cases") {
  oracle::TempDir dir("pdms_err");
  const auto m = small_measurement(10);
  write_measurement(dir / "ok.pdms", m);
  const std::string good = oracle::slurp(dir / "ok.pdms");
  const ManifestEntry meta{"m0", {}, 0};

  SUBCASE("bad magic") {
    write_text(dir / "bad.pdms", "XXXX" + good.substr(4));
    CHECK(code_of([&] { read_measurement(dir / "bad.pdms", meta); }) == ErrorCode::BadMagic);
  }
  SUBCASE("truncated payload") {
    write_text(dir / "short.pdms", good.substr(0, good.size() - 4));
    CHECK(code_of([&] { read_measurement(dir / "short.pdms", meta); }) == ErrorCode::TruncatedPayload);
  }
  SUBCASE("trailing bytes") {
    write_text(dir / "long.pdms", good + "ab");
    CHECK(code_of([&] { read_measurement(dir / "long.pdms", meta); }) == ErrorCode::DimMismatch);
  }
  SUBCASE("non-finite sample") {
    std::string bytes = good;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bytes.data() + 8 + 4 * 13, &nan, 4);  // phase 1, index 3
    write_text(dir / "nan.pdms", bytes);
    try {
      read_measurement(dir / "nan.pdms", meta);
      FAIL("expected NonFiniteSample");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::NonFiniteSample);
      CHECK(std::string(e.what()).find("index 13") != std::string::npos);
    }
  }
  SUBCASE("missing file") {
    CHECK(code_of([&] { read_measurement(dir / "none.pdms", meta); }) == ErrorCode::MissingFile);
  }
}

TEST_CASE("CSV measurements") {
  oracle::TempDir dir("csv");
  write_text(dir / "m.csv", "0.5,1,-2\n1e-3,2,3\n");
  const auto m = read_measurement(dir / "m.csv", {"c", {}, 0});
  CHECK(m.n_samples == 2);
  CHECK(m.samples[0][1] == doctest::Approx(1e-3));
  CHECK(m.samples[2][0] == -2.0);

  write_text(dir / "bad.csv", "1,2\n");
  CHECK(code_of([&] { read_measurement(dir / "bad.csv", {"c", {}, 0}); }) == ErrorCode::MalformedRow);
  write_text(dir / "inf.csv", "1,2,3\n1,inf,3\n");
  CHECK(code_of([&] { read_measurement(dir / "inf.csv", {"c", {}, 0}); }) == ErrorCode::NonFiniteSample);
}

TEST_CASE("validate catches per-phase length mismatch") {
  auto m = small_measurement(5);
  m.samples[2].pop_back();
  CHECK(code_of([&] { m.validate(); }) == ErrorCode::DimMismatch);
}

TEST_CASE("feature file round trip and size") {
  oracle::TempDir dir("pdcf");
  std::mt19937_64 rng(3);
  auto f = oracle::random_features(rng, 16, 32, 33, 1, "feat");
  write_features(dir / "feat.pdcf", f);
  CHECK(std::filesystem::file_size(dir / "feat.pdcf") == feature_file_size(16, 32, 33));
  CHECK(feature_file_size(16, 32, 33) == 18 + 2 * (16 * 32 + 16 * 33) * 4 + 1);
  const auto back = read_features(dir / "feat.pdcf");
  CHECK(back.id == "feat");
  CHECK(back.label == 1);
  CHECK(back.td_pos == f.td_pos);
  CHECK(back.td_neg == f.td_neg);
  CHECK(back.fd_pos == f.fd_pos);
  CHECK(back.fd_neg == f.fd_neg);

  const std::string bytes = oracle::slurp(dir / "feat.pdcf");
  write_text(dir / "short.pdcf", bytes.substr(0, bytes.size() - 1));
  CHECK(code_of([&] { read_features(dir / "short.pdcf"); }) == ErrorCode::DimMismatch);
  write_text(dir / "magic.pdcf", "PDMS" + bytes.substr(4));
  CHECK(code_of([&] { read_features(dir / "magic.pdcf"); }) == ErrorCode::BadMagic);

  f.td_neg = Matrix<float>(15, 32);
  CHECK(code_of([&] { write_features(dir / "x.pdcf", f); }) == ErrorCode::DimMismatch);
}
