#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "pdcycon/error.hpp"
#include "pdcycon/preprocess.hpp"

using namespace pdcycon;
using namespace pdcycon::preprocess;

namespace {

std::vector<double> sine(std::size_t n, double sign = 1.0, double shift = 0.0) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = sign * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n) + shift);
  }
  return x;
}

std::size_t circular_distance(std::size_t a, std::size_t b, std::size_t n) {
  const std::size_t d = a > b ? a - b : b - a;
  return std::min(d, n - d);
}

Peak make_peak(std::size_t t, double h, PhaseId ph = PhaseId::A, Half half = Half::Positive) {
  return Peak{t, h, ph, half};
}

RawMeasurement three_phase(std::size_t n) {
  RawMeasurement m;
  m.id = "grid";
  m.n_samples = n;
  for (std::size_t p = 0; p < kPhaseCount; ++p) {
    m.samples[p] = sine(n, 1.0, -2.0 * std::numbers::pi * static_cast<double>(p) / 3.0);
  }
  return m;
}

PreprocessConfig small_config() {
  PreprocessConfig c;
  c.ma_window = 1000;
  c.n_peaks = 16;
  c.window_t = 32;
  c.window_f = 64;
  return c;
}

}  // namespace

TEST_CASE("moving average") {
  SUBCASE("constant input stays constant") {
    const std::vector<double> x(50, 2.5);
    for (std::size_t w : {1u, 4u, 7u, 50u}) {
      for (double v : moving_average(x, w)) CHECK(v == doctest::Approx(2.5));
    }
  }
  SUBCASE("window sums over the overlap") {
    const std::vector<double> x{0, 0, 4, 0, 0};
    const auto y = moving_average(x, 3);
    REQUIRE(y.size() == 5);
    CHECK(y[0] == doctest::Approx(0.0));
    CHECK(y[1] == doctest::Approx(4.0 / 3.0));
    CHECK(y[2] == doctest::Approx(4.0 / 3.0));
    CHECK(y[3] == doctest::Approx(4.0 / 3.0));
    CHECK(y[4] == doctest::Approx(0.0));
  }
  SUBCASE("window longer than the signal") {
    const std::vector<double> x(4, 1.0);
    CHECK_THROWS_AS(moving_average(x, 5), Error);
    try {
      moving_average(x, 5);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::WindowTooLarge);
    }
  }
  SUBCASE("matches direct averaging on random data") {
    std::mt19937_64 rng(9);
    const auto x = oracle::random_vector(rng, 200);
    for (std::size_t w : {2u, 5u, 10u, 31u}) {
      const auto y = moving_average(x, w);
      const std::ptrdiff_t left = static_cast<std::ptrdiff_t>(w / 2);
      const std::ptrdiff_t right = static_cast<std::ptrdiff_t>(w - 1) - left;
      for (std::ptrdiff_t i = 0; i < 200; ++i) {
        double s = 0.0;
        int count = 0;
        for (std::ptrdiff_t j = i - left; j <= i + right; ++j) {
          if (j < 0 || j >= 200) continue;
          s += x[static_cast<std::size_t>(j)];
          ++count;
        }
        CHECK(y[static_cast<std::size_t>(i)] == doctest::Approx(s / count).epsilon(1e-9));
      }
    }
  }
}

TEST_CASE("phase anchors on sines") {
  const std::size_t n = 1000;
  const auto up = find_phase_anchors(sine(n));
  CHECK(circular_distance(up.idx0, 0, n) <= 1);
  CHECK(circular_distance(up.idx180, 500, n) <= 1);

  const auto down = find_phase_anchors(sine(n, -1.0));
  CHECK(circular_distance(down.idx0, 500, n) <= 1);
  CHECK(circular_distance(down.idx180, 0, n) <= 1);

  std::vector<double> positive(100, 1.0);
  try {
    find_phase_anchors(positive);
    FAIL("expected NoZeroCrossing");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NoZeroCrossing);
  }
}

TEST_CASE("steepest crossing wins when several exist") {
  // A slow rising crossing near 100 and a steep one near 600.
  std::vector<double> x(1000);
  for (std::size_t i = 0; i < 1000; ++i) {
    const double t = static_cast<double>(i);
    if (i < 300) x[i] = 0.001 * (t - 100.5);
    else if (i < 550) x[i] = 0.2 - 0.004 * (t - 300.0);  // falls through zero at 350
    else if (i < 650) x[i] = -0.8 + 0.02 * (t - 550.0);  // steep rise through zero at 590
    else x[i] = 1.2 - 0.01 * (t - 650.0);                // falls through zero at 770
  }
  const auto a = find_phase_anchors(x);
  CHECK(circular_distance(a.idx0, 590, 1000) <= 1);
}

TEST_CASE("phase align rotates") {
  const std::vector<double> x{1, 2, 3, 4};
  CHECK(phase_align(x, {0, 2}) == x);
  CHECK(phase_align(x, {2, 0}) == std::vector<double>{3, 4, 1, 2});

  const std::size_t n = 1000;
  const auto shifted = sine(n, 1.0, 1.3);
  auto rotated = phase_align(shifted, find_phase_anchors(shifted));
  CHECK(circular_distance(find_phase_anchors(rotated).idx0, 0, n) <= 1);

  auto a = shifted, b = rotated;
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  CHECK(a == b);
}

TEST_CASE("flattening filter") {
  SUBCASE("constant input gives zeros") {
    for (double v : flatten_highpass(std::vector<double>(64, -3.7), 100.0, 1.0)) CHECK(v == 0.0);
  }
  SUBCASE("step response decays geometrically") {
    std::vector<double> x(20, 0.0);
    std::fill(x.begin() + 5, x.end(), 1.0);
    const auto y = flatten_highpass(x, 100.0, 1.0);
    for (std::size_t i = 0; i < 5; ++i) CHECK(y[i] == 0.0);
    CHECK(y[5] == doctest::Approx(0.99).epsilon(1e-12));
    CHECK(y[6] == doctest::Approx(0.99 * 0.99).epsilon(1e-12));
    CHECK(y[7] == doctest::Approx(0.99 * 0.99 * 0.99).epsilon(1e-12));
    for (std::size_t i = 6; i < 20; ++i) CHECK(y[i] / y[i - 1] == doctest::Approx(0.99).epsilon(1e-12));
  }
  SUBCASE("linear in the input") {
    std::mt19937_64 rng(5);
    const auto x = oracle::random_vector(rng, 100);
    std::vector<double> scaled(x);
    for (auto& v : scaled) v *= -2.5;
    const auto y = flatten_highpass(x, 100.0, 1.0);
    const auto ys = flatten_highpass(scaled, 100.0, 1.0);
    for (std::size_t i = 0; i < 100; ++i) CHECK(ys[i] == doctest::Approx(-2.5 * y[i]).epsilon(1e-12));
  }
}

TEST_CASE("peak detection") {
  SUBCASE("single impulse") {
    std::vector<double> x(100, 0.0);
    x[50] = 3.0;
    const auto p = detect_peaks(x, 5);
    REQUIRE(p.size() == 1);
    CHECK(p[0].t == 50);
    CHECK(p[0].height == 3.0);
  }
  SUBCASE("plateau keeps the left index") {
    std::vector<double> x(100, 0.0);
    x[40] = x[41] = 2.0;
    const auto p = detect_peaks(x, 5);
    REQUIRE(p.size() == 1);
    CHECK(p[0].t == 40);
  }
  SUBCASE("rectified sine over one period") {
    std::vector<double> x = sine(1000);
    for (auto& v : x) v = std::abs(v);
    CHECK(detect_peaks(x, 5).size() == 2);
  }
  SUBCASE("zero signal has no peaks") { CHECK(detect_peaks(std::vector<double>(30, 0.0), 3).empty()); }
  SUBCASE("height floor") {
    std::vector<double> x(50, 0.0);
    x[10] = 0.5;
    x[30] = 2.0;
    const auto p = detect_peaks(x, 3, 1.0);
    REQUIRE(p.size() == 1);
    CHECK(p[0].t == 30);
  }
  SUBCASE("agrees with a brute-force window scan") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<std::size_t> len(1, 4096), hw(1, 40);
    std::uniform_int_distribution<int> level(0, 6);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = len(rng);
      std::vector<double> x(n);
      // Coarse levels make plateaus and ties common.
      for (auto& v : x) v = trial % 2 ? static_cast<double>(level(rng)) : std::abs(oracle::random_vector(rng, 1)[0]);
      const std::size_t w = hw(rng);
      const double floor = trial % 3 == 0 ? 2.0 : 0.0;
      const auto got = detect_peaks(x, w, floor);
      const auto want = oracle::brute_force_peaks(x, w, floor);
      std::vector<std::size_t> got_t;
      for (const auto& p : got) got_t.push_back(p.t);
      CHECK(got_t == want);
    }
  }
}

TEST_CASE("knee filter") {
  SUBCASE("drops the flat tail") {
    std::vector<Peak> peaks;
    std::size_t t = 0;
    for (double h : {100.0, 50.0, 25.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0}) {
      peaks.push_back(make_peak(t++, h));
    }
    // g = [-50, -25, -15, 0 ...]; the smoothed gradient first vanishes at rank 3.
    const auto s = smoothed_height_gradient(peaks, 9);
    REQUIRE(s.size() == 11);
    CHECK(s[2] == doctest::Approx(-15.0 / 5.0));
    CHECK(s[1] == doctest::Approx((-25.0 - 15.0 * 8.0 / 9.0) / 5.0));
    CHECK(s[3] == 0.0);
    const auto kept = knee_filter(peaks, 9, 0.01);
    CHECK(kept.size() == 3);
    CHECK(std::equal(kept.begin(), kept.end(), peaks.begin()));
  }
  SUBCASE("fewer than two peaks pass through") {
    CHECK(knee_filter(std::vector<Peak>{}, 9, 0.01).empty());
    const std::vector<Peak> one{make_peak(4, 1.0)};
    CHECK(knee_filter(one, 9, 0.01) == one);
  }
  SUBCASE("geometric heights keep everything") {
    std::vector<Peak> peaks;
    for (std::size_t i = 0; i < 20; ++i) peaks.push_back(make_peak(i, 100.0 * std::pow(0.8, static_cast<double>(i))));
    CHECK(knee_filter(peaks, 9, 1e-9).size() == 20);
  }
}

TEST_CASE("height sort and three-phase aggregation") {
  SUBCASE("ties go to earlier time then phase order") {
    std::vector<Peak> p{make_peak(9, 1.0, PhaseId::A), make_peak(3, 1.0, PhaseId::C), make_peak(3, 1.0, PhaseId::B),
                        make_peak(1, 5.0, PhaseId::C)};
    sort_by_height(p);
    CHECK(p[0] == make_peak(1, 5.0, PhaseId::C));
    CHECK(p[1] == make_peak(3, 1.0, PhaseId::B));
    CHECK(p[2] == make_peak(3, 1.0, PhaseId::C));
    CHECK(p[3] == make_peak(9, 1.0, PhaseId::A));
  }
  SUBCASE("top-N selection over 300 candidates") {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> h(0.0, 10.0);
    std::array<std::vector<Peak>, kPhaseCount> per_phase;
    std::vector<Peak> all_pos;
    for (std::size_t ph = 0; ph < 3; ++ph) {
      for (std::size_t i = 0; i < 100; ++i) {
        per_phase[ph].push_back(make_peak(i, h(rng), static_cast<PhaseId>(ph), Half::Positive));
        all_pos.push_back(per_phase[ph].back());
      }
    }
    const auto agg = aggregate_three_phase(per_phase, 257);
    CHECK(agg.positive.size() == 257);
    CHECK(agg.negative.empty());
    // Brute-force: count how many candidates beat each retained height.
    std::vector<double> heights;
    for (const auto& p : all_pos) heights.push_back(p.height);
    std::sort(heights.begin(), heights.end(), std::greater<>());
    for (std::size_t r = 0; r < 257; ++r) CHECK(agg.positive[r].height == heights[r]);
    const double weakest_kept = agg.positive.back().height;
    for (std::size_t r = 257; r < heights.size(); ++r) CHECK(heights[r] <= weakest_kept);
  }
  SUBCASE("empty input") {
    const auto agg = aggregate_three_phase({}, 257);
    CHECK(agg.positive.empty());
    CHECK(agg.negative.empty());
  }
  SUBCASE("exactly N peaks are all retained in height order") {
    std::array<std::vector<Peak>, kPhaseCount> per_phase;
    per_phase[0] = {make_peak(1, 2.0, PhaseId::A, Half::Negative), make_peak(2, 7.0, PhaseId::A, Half::Negative)};
    per_phase[2] = {make_peak(5, 4.0, PhaseId::C, Half::Negative)};
    const auto agg = aggregate_three_phase(per_phase, 3);
    REQUIRE(agg.negative.size() == 3);
    CHECK(agg.negative[0].height == 7.0);
    CHECK(agg.negative[1].height == 4.0);
    CHECK(agg.negative[1].phase == PhaseId::C);
    CHECK(agg.negative[2].height == 2.0);
  }
}

TEST_CASE("window extraction") {
  std::array<std::vector<double>, kPhaseCount> x;
  for (std::size_t ph = 0; ph < 3; ++ph) {
    for (std::size_t i = 0; i < 100; ++i) x[ph].push_back(static_cast<double>(ph * 1000 + i + 1));
  }
  SUBCASE("left boundary zero-fills") {
    const std::vector<Peak> p{make_peak(0, 1.0)};
    const auto m = extract_windows(x, p, 4, 2);
    CHECK(m.rows == 2);
    CHECK(m.cols == 4);
    CHECK(m(0, 0) == 0.0);
    CHECK(m(0, 1) == 0.0);
    CHECK(m(0, 2) == x[0][0]);
    CHECK(m(0, 3) == x[0][1]);
    for (std::size_t c = 0; c < 4; ++c) CHECK(m(1, c) == 0.0);
  }
  SUBCASE("right boundary zero-fills") {
    const std::vector<Peak> p{make_peak(99, 1.0, PhaseId::B)};
    const auto m = extract_windows(x, p, 4, 1);
    CHECK(m(0, 0) == x[1][97]);
    CHECK(m(0, 1) == x[1][98]);
    CHECK(m(0, 2) == x[1][99]);
    CHECK(m(0, 3) == 0.0);
  }
  SUBCASE("no peaks gives zeros") {
    const auto m = extract_windows(x, {}, 8, 5);
    CHECK(std::all_of(m.values.begin(), m.values.end(), [](double v) { return v == 0.0; }));
  }
  SUBCASE("interior peak is an exact slice of its own phase") {
    const std::vector<Peak> p{make_peak(50, 1.0, PhaseId::C), make_peak(20, 0.5, PhaseId::A)};
    const auto m = extract_windows(x, p, 10, 3);
    for (std::size_t c = 0; c < 10; ++c) {
      CHECK(m(0, c) == x[2][45 + c]);
      CHECK(m(1, c) == x[0][15 + c]);
      CHECK(m(2, c) == 0.0);
    }
  }
}

TEST_CASE("pure three-phase sine has no pulses") {
  const auto cfg = small_config();
  const auto sets = extract_pulse_sets(three_phase(80000), cfg);
  CHECK(sets.positive.n_real_peaks == 0);
  CHECK(sets.negative.n_real_peaks == 0);
  CHECK(std::all_of(sets.positive.pulses_t.values.begin(), sets.positive.pulses_t.values.end(),
                    [](double v) { return v == 0.0; }));
  CHECK(std::all_of(sets.negative.pulses_f.values.begin(), sets.negative.pulses_f.values.end(),
                    [](double v) { return v == 0.0; }));
}

TEST_CASE("one injected impulse lands in the positive half of phase A") {
  const auto cfg = small_config();
  auto m = three_phase(80000);
  m.samples[0][20000] += 0.5;  // 90 degrees
  std::array<PhaseTrace, kPhaseCount> traces;
  const auto sets = extract_pulse_sets(m, cfg, &traces);
  CHECK(sets.positive.n_real_peaks == 1);
  CHECK(sets.negative.n_real_peaks == 0);
  REQUIRE(sets.positive.peaks.size() == 1);
  CHECK(sets.positive.peaks[0].phase == PhaseId::A);
  CHECK(circular_distance(sets.positive.peaks[0].t, 20000, 80000) <= 1);
  // Row 0 is centred on the pulse; all later rows are zero.
  const auto& pt = sets.positive.pulses_t;
  CHECK(pt(0, cfg.window_t / 2) == doctest::Approx(0.5 * 0.99).epsilon(0.02));
  for (std::size_t r = 1; r < pt.rows; ++r) {
    for (std::size_t c = 0; c < pt.cols; ++c) CHECK(pt(r, c) == 0.0);
  }
}

TEST_CASE("features have the configured shapes and are deterministic") {
  const auto cfg = small_config();
  auto m = three_phase(80000);
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 0.005);
  for (auto& ph : m.samples) {
    for (auto& v : ph) v += noise(rng);
  }
  m.samples[1][30000] += 0.4;
  m.samples[2][62000] -= 0.3;
  const auto a = preprocess_measurement(m, cfg);
  const auto b = preprocess_measurement(m, cfg);
  CHECK(a.td_pos.rows == 16);
  CHECK(a.td_pos.cols == 32);
  CHECK(a.fd_neg.rows == 16);
  CHECK(a.fd_neg.cols == 33);
  CHECK(a.td_pos == b.td_pos);
  CHECK(a.td_neg == b.td_neg);
  CHECK(a.fd_pos == b.fd_pos);
  CHECK(a.fd_neg == b.fd_neg);
  for (float v : a.td_pos.values) CHECK((v >= -1.0f && v <= 1.0f));
  for (float v : a.fd_pos.values) CHECK((v >= 0.0f && v <= 1.0f));
}

TEST_CASE("retained rows are ordered by height and the rest are zero") {
  auto cfg = small_config();
  auto m = three_phase(80000);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> amp(0.05, 0.5);
  std::uniform_int_distribution<std::size_t> pos(0, 79999);
  for (int k = 0; k < 12; ++k) m.samples[static_cast<std::size_t>(k % 3)][pos(rng)] += amp(rng);
  const auto sets = extract_pulse_sets(m, cfg);
  for (const auto* set : {&sets.positive, &sets.negative}) {
    for (std::size_t r = 1; r < set->peaks.size(); ++r) CHECK(set->peaks[r - 1].height >= set->peaks[r].height);
    for (std::size_t r = set->n_real_peaks; r < cfg.n_peaks; ++r) {
      for (std::size_t c = 0; c < cfg.window_t; ++c) CHECK(set->pulses_t(r, c) == 0.0);
    }
  }
  CHECK(sets.positive.n_real_peaks + sets.negative.n_real_peaks > 0);
}

TEST_CASE("measurements shorter than two smoothing windows are rejected") {
  auto cfg = small_config();
  const auto m = three_phase(1500);
  try {
    extract_pulse_sets(m, cfg);
    FAIL("expected WindowTooLarge");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::WindowTooLarge);
  }
}
