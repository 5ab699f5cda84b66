#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "pdcycon/error.hpp"
#include "pdcycon/timefreq.hpp"

using namespace pdcycon;
using namespace pdcycon::timefreq;

TEST_CASE("periodic Hann window") {
  const auto w4 = hann_window(4);
  REQUIRE(w4.size() == 4);
  CHECK(w4[0] == 0.0);
  CHECK(w4[1] == doctest::Approx(0.5));
  CHECK(w4[2] == doctest::Approx(1.0));
  CHECK(w4[3] == doctest::Approx(0.5));

  const auto w2 = hann_window(2);
  CHECK(w2[0] == 0.0);
  CHECK(w2[1] == doctest::Approx(1.0));

  for (std::size_t n : {8u, 64u, 100u, 512u}) {
    const auto w = hann_window(n);
    double s = 0.0;
    for (double v : w) s += v;
    CHECK(s == doctest::Approx(static_cast<double>(n) / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("STFT frame matches a naive DFT") {
  std::mt19937_64 rng(31);
  for (std::size_t n : {8u, 12u, 64u, 100u, 256u, 512u}) {
    const auto w = hann_window(n);
    for (int trial = 0; trial < 5; ++trial) {
      const auto x = oracle::random_vector(rng, n);
      const auto got = stft_frame(x, w);
      const auto want = oracle::naive_dft(x, w);
      REQUIRE(got.size() == n / 2 + 1);
      double scale = 0.0;
      for (const auto& v : want) scale = std::max(scale, std::abs(v));
      for (std::size_t k = 0; k < got.size(); ++k) CHECK(std::abs(got[k] - want[k]) <= 1e-9 * scale);
      CHECK(std::abs(got[0].imag()) <= 1e-12 * scale);
      CHECK(std::abs(got[n / 2].imag()) <= 1e-12 * scale);
    }
  }
}

TEST_CASE("STFT special inputs") {
  const auto w = hann_window(64);
  SUBCASE("zeros") {
    const std::vector<double> x(64, 0.0);
    for (const auto& v : stft_frame(x, w)) CHECK(std::abs(v) == 0.0);
  }
  SUBCASE("tone at bin 8") {
    std::vector<double> x(64);
    for (std::size_t m = 0; m < 64; ++m) x[m] = std::cos(2.0 * std::numbers::pi * 8.0 * static_cast<double>(m) / 64.0);
    const auto bins = stft_frame(x, w);
    std::size_t arg = 0;
    for (std::size_t k = 1; k < bins.size(); ++k) {
      if (std::abs(bins[k]) > std::abs(bins[arg])) arg = k;
    }
    CHECK(arg == 8);
    const auto want = oracle::naive_dft(x, w);
    for (std::size_t k = 0; k < bins.size(); ++k) CHECK(std::abs(bins[k] - want[k]) <= 1e-9 * std::abs(want[8]));
  }
  SUBCASE("length mismatch") {
    const std::vector<double> x(63, 1.0);
    try {
      stft_frame(x, w);
      FAIL("expected LengthMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::LengthMismatch);
    }
  }
}

TEST_CASE("Parseval over the full spectrum") {
  std::mt19937_64 rng(8);
  for (std::size_t n : {16u, 128u, 512u}) {
    const auto w = hann_window(n);
    const auto x = oracle::random_vector(rng, n);
    const auto half = stft_frame(x, w);
    // Real input: the missing bins mirror 1 .. n/2 - 1.
    double spectral = std::norm(half[0]) + std::norm(half[n / 2]);
    for (std::size_t k = 1; k < n / 2; ++k) spectral += 2.0 * std::norm(half[k]);
    double temporal = 0.0;
    for (std::size_t m = 0; m < n; ++m) temporal += (x[m] * w[m]) * (x[m] * w[m]);
    CHECK(spectral == doctest::Approx(static_cast<double>(n) * temporal).epsilon(1e-9));
  }
}

TEST_CASE("log spectrogram") {
  std::mt19937_64 rng(12);
  Matrix<double> p(3, 64);
  for (std::size_t c = 0; c < 64; ++c) {
    p(0, c) = oracle::random_vector(rng, 1)[0];
    p(1, c) = 10.0 * p(0, c);
  }
  const auto s = log_spectrogram(p);
  CHECK(s.rows == 3);
  CHECK(s.cols == 33);
  for (std::size_t k = 0; k < 33; ++k) {
    CHECK(s(2, k) == doctest::Approx(std::log(kLogEpsilon)));
    CHECK(s(1, k) - s(0, k) == doctest::Approx(2.0 * std::log(10.0)).epsilon(1e-6));
  }
  const auto want = oracle::naive_dft(std::span<const double>(p.row(0), 64), hann_window(64));
  for (std::size_t k = 0; k < 33; ++k) {
    CHECK(s(0, k) == doctest::Approx(std::log(std::norm(want[k]) + kLogEpsilon)).epsilon(1e-9));
  }

  const Matrix<double> big(257, 512);
  const auto sb = log_spectrogram(big);
  CHECK(sb.rows == 257);
  CHECK(sb.cols == 257);
  for (double v : sb.values) CHECK(std::isfinite(v));
}

TEST_CASE("normalizations") {
  Matrix<double> m(1, 3);
  m.values = {0.0, 5.0, 10.0};
  const auto s = normalize_symmetric(m);
  CHECK(s.values[0] == -1.0);
  CHECK(s.values[1] == doctest::Approx(0.0));
  CHECK(s.values[2] == 1.0);
  const auto u = normalize_unit(m);
  CHECK(u.values[0] == 0.0);
  CHECK(u.values[1] == doctest::Approx(0.5));
  CHECK(u.values[2] == 1.0);

  Matrix<double> c(2, 2);
  c.values = {3.0, 3.0, 3.0, 3.0};
  for (double v : normalize_symmetric(c).values) CHECK(v == 0.0);
  for (double v : normalize_unit(c).values) CHECK(v == 0.0);

  std::mt19937_64 rng(1);
  Matrix<double> r(7, 9);
  r.values = oracle::random_vector(rng, 63, -40.0, 3.0);
  const auto rs = normalize_symmetric(r);
  const auto ru = normalize_unit(r);
  CHECK(*std::min_element(rs.values.begin(), rs.values.end()) == -1.0);
  CHECK(*std::max_element(rs.values.begin(), rs.values.end()) == 1.0);
  CHECK(*std::min_element(ru.values.begin(), ru.values.end()) == 0.0);
  CHECK(*std::max_element(ru.values.begin(), ru.values.end()) == 1.0);
  const auto rs2 = normalize_symmetric(rs);
  const auto ru2 = normalize_unit(ru);
  for (std::size_t i = 0; i < 63; ++i) {
    CHECK(rs2.values[i] == doctest::Approx(rs.values[i]).epsilon(1e-12));
    CHECK(ru2.values[i] == doctest::Approx(ru.values[i]).epsilon(1e-12));
  }
}
