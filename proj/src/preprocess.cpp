#include "pdcycon/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "pdcycon/error.hpp"
#include "pdcycon/timefreq.hpp"

namespace pdcycon::preprocess {

void PreprocessConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidConfig, what); };
  if (ma_window < 1) fail("ma_window must be >= 1");
  if (!(alpha > beta && beta > 0.0)) fail("flattening requires alpha > beta > 0");
  if (knee_length < 2) fail("knee_length must be >= 2");
  if (n_peaks < 1) fail("n_peaks must be >= 1");
  if (window_t < 2 || window_t % 2 != 0) fail("window_t must be even and >= 2");
  if (window_f < 2 || window_f % 2 != 0) fail("window_f must be even and >= 2");
  if (peak_half_width < 1) fail("peak_half_width must be >= 1");
  if (!(knee_tau > 0.0)) fail("knee_tau must be positive");
  if (!(peak_min_rel_height >= 0.0)) fail("peak_min_rel_height must be non-negative");
}

std::vector<double> moving_average(std::span<const double> x, std::size_t window) {
  if (window < 1 || window > x.size()) {
    throw Error(ErrorCode::WindowTooLarge,
                "window " + std::to_string(window) + " for signal of length " + std::to_string(x.size()));
  }
  const std::size_t n = x.size();
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + x[i];

  const std::size_t left = window / 2;
  const std::size_t right = window - 1 - left;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= left ? i - left : 0;
    const std::size_t hi = std::min(n - 1, i + right);
    out[i] = (prefix[hi + 1] - prefix[lo]) / static_cast<double>(hi - lo + 1);
  }
  return out;
}

PhaseAnchors find_phase_anchors(std::span<const double> s) {
  const std::size_t n = s.size();
  if (n < 2) throw Error(ErrorCode::NoZeroCrossing, "signal shorter than 2 samples");

  bool have_up = false, have_down = false;
  double best_up = 0.0, best_down = 0.0;
  PhaseAnchors anchors;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t prev_idx = (i + n - 1) % n;
    const double prev = s[prev_idx];
    const double cur = s[i];
    const double gradient = cur - prev;
    const std::size_t at = std::abs(cur) <= std::abs(prev) ? i : prev_idx;
    if (prev < 0.0 && cur >= 0.0) {
      if (!have_up || std::abs(gradient) > best_up) {
        have_up = true;
        best_up = std::abs(gradient);
        anchors.idx0 = at;
      }
    } else if (prev > 0.0 && cur <= 0.0) {
      if (!have_down || std::abs(gradient) > best_down) {
        have_down = true;
        best_down = std::abs(gradient);
        anchors.idx180 = at;
      }
    }
  }
  if (!have_up || !have_down || anchors.idx0 == anchors.idx180) {
    throw Error(ErrorCode::NoZeroCrossing, "signal does not cross zero in both directions");
  }
  return anchors;
}

std::vector<double> phase_align(std::span<const double> x, const PhaseAnchors& anchors) {
  const std::size_t n = x.size();
  std::vector<double> out(n);
  if (n == 0) return out;
  const std::size_t shift = anchors.idx0 % n;
  for (std::size_t j = 0; j < n; ++j) out[j] = x[(j + shift) % n];
  return out;
}

std::vector<double> flatten_highpass(std::span<const double> x, double alpha, double beta) {
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  const double keep = (alpha - beta) / alpha;
  const double gain = beta / alpha;
  double z = x[0];
  out[0] = x[0] - z;
  for (std::size_t i = 1; i < x.size(); ++i) {
    z = z * keep + gain * x[i];
    out[i] = x[i] - z;
  }
  return out;
}

namespace {

// For each i, the maximum over the `width` samples strictly before i
// (-inf when none exist). Monotonic deque, O(n).
std::vector<double> trailing_max(std::span<const double> x, std::size_t width) {
  const std::size_t n = x.size();
  std::vector<double> out(n, -std::numeric_limits<double>::infinity());
  std::deque<std::size_t> dq;
  for (std::size_t i = 0; i < n; ++i) {
    while (!dq.empty() && dq.front() + width < i) dq.pop_front();
    if (!dq.empty()) out[i] = x[dq.front()];
    while (!dq.empty() && x[dq.back()] <= x[i]) dq.pop_back();
    dq.push_back(i);
  }
  return out;
}

}  // namespace

std::vector<Peak> detect_peaks(std::span<const double> x_d, std::size_t half_width, double min_height) {
  const std::size_t n = x_d.size();
  const auto before = trailing_max(x_d, half_width);
  std::vector<double> reversed(x_d.rbegin(), x_d.rend());
  const auto after_rev = trailing_max(reversed, half_width);

  std::vector<Peak> peaks;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = x_d[i];
    if (!(v > 0.0) || !(v > min_height)) continue;
    if (v > before[i] && v >= after_rev[n - 1 - i]) peaks.push_back(Peak{i, v, PhaseId::A, Half::Positive});
  }
  return peaks;
}

std::vector<double> smoothed_height_gradient(std::span<const Peak> peaks, std::size_t kernel_length) {
  if (peaks.size() < 2) return {};
  const std::size_t m = peaks.size() - 1;
  std::vector<double> g(m);
  for (std::size_t i = 0; i < m; ++i) g[i] = peaks[i + 1].height - peaks[i].height;

  // v_j = j / L, j = 1..L, normalized by its sum. Output i is entry i + L - 1
  // of the full convolution g * v, so it aggregates the gradient over ranks
  // i .. i + L - 1 with the heaviest weight on rank i.
  const std::size_t L = kernel_length;
  const double norm = static_cast<double>(L + 1) / 2.0;
  std::vector<double> s(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < L && i + k < m; ++k) {
      const double v = static_cast<double>(L - k) / static_cast<double>(L);
      acc += g[i + k] * v;
    }
    s[i] = acc / norm;
  }
  return s;
}

std::vector<Peak> knee_filter(std::span<const Peak> peaks, std::size_t kernel_length, double tau) {
  if (peaks.size() < 2) return {peaks.begin(), peaks.end()};
  const auto s = smoothed_height_gradient(peaks, kernel_length);
  double max_abs = 0.0;
  for (double v : s) max_abs = std::max(max_abs, std::abs(v));
  // A perfectly flat height curve has no knee.
  if (max_abs == 0.0) return {peaks.begin(), peaks.end()};
  const double threshold = tau * max_abs;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (std::abs(s[i]) <= threshold) return {peaks.begin(), peaks.begin() + static_cast<std::ptrdiff_t>(i)};
  }
  return {peaks.begin(), peaks.end()};
}

void sort_by_height(std::vector<Peak>& peaks) {
  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.height != b.height) return a.height > b.height;
    if (a.t != b.t) return a.t < b.t;
    return static_cast<int>(a.phase) < static_cast<int>(b.phase);
  });
}

AggregatedPeaks aggregate_three_phase(const std::array<std::vector<Peak>, kPhaseCount>& per_phase,
                                      std::size_t n_peaks) {
  AggregatedPeaks out;
  for (const auto& phase : per_phase) {
    for (const auto& p : phase) (p.half == Half::Positive ? out.positive : out.negative).push_back(p);
  }
  sort_by_height(out.positive);
  sort_by_height(out.negative);
  if (out.positive.size() > n_peaks) out.positive.resize(n_peaks);
  if (out.negative.size() > n_peaks) out.negative.resize(n_peaks);
  return out;
}

Matrix<double> extract_windows(const std::array<std::vector<double>, kPhaseCount>& x_hp,
                               std::span<const Peak> peaks, std::size_t window, std::size_t n_peaks) {
  Matrix<double> out(n_peaks, window, 0.0);
  const std::size_t rows = std::min(n_peaks, peaks.size());
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto& signal = x_hp[static_cast<std::size_t>(peaks[r].phase)];
    const auto len = static_cast<std::ptrdiff_t>(signal.size());
    const auto start = static_cast<std::ptrdiff_t>(peaks[r].t) - half;
    double* row = out.row(r);
    for (std::size_t j = 0; j < window; ++j) {
      const auto idx = start + static_cast<std::ptrdiff_t>(j);
      if (idx >= 0 && idx < len) row[j] = signal[static_cast<std::size_t>(idx)];
    }
  }
  return out;
}

PulseSets extract_pulse_sets(const RawMeasurement& m, const PreprocessConfig& cfg,
                             std::array<PhaseTrace, kPhaseCount>* traces) {
  cfg.validate();
  m.validate();
  if (m.n_samples < 2 * cfg.ma_window) {
    throw Error(ErrorCode::WindowTooLarge, "measurement " + m.id + " has " + std::to_string(m.n_samples) +
                                               " samples, needs at least 2 x ma_window = " +
                                               std::to_string(2 * cfg.ma_window));
  }

  std::array<std::vector<double>, kPhaseCount> highpass;
  std::array<std::vector<Peak>, kPhaseCount> kept;
  for (std::size_t ph = 0; ph < kPhaseCount; ++ph) {
    const auto& raw = m.samples[ph];
    const auto smoothed = moving_average(raw, cfg.ma_window);
    PhaseAnchors anchors;
    try {
      anchors = find_phase_anchors(smoothed);
    } catch (const Error& e) {
      throw Error(e.code(), "measurement " + m.id + " phase " + "ABC"[ph] + ": " + e.what());
    }
    auto aligned = phase_align(raw, anchors);
    highpass[ph] = flatten_highpass(aligned, cfg.alpha, cfg.beta);

    std::vector<double> rectified(highpass[ph].size());
    std::transform(highpass[ph].begin(), highpass[ph].end(), rectified.begin(),
                   [](double v) { return std::abs(v); });

    double amplitude = 0.0;
    for (double v : smoothed) amplitude = std::max(amplitude, std::abs(v));

    auto detected = detect_peaks(rectified, cfg.peak_half_width, cfg.peak_min_rel_height * amplitude);
    for (auto& p : detected) {
      p.phase = static_cast<PhaseId>(ph);
      p.half = p.t < m.n_samples / 2 ? Half::Positive : Half::Negative;
    }
    sort_by_height(detected);
    kept[ph] = knee_filter(detected, cfg.knee_length, cfg.knee_tau);

    if (traces) {
      auto& tr = (*traces)[ph];
      tr.anchors = anchors;
      tr.aligned = std::move(aligned);
      tr.highpass = highpass[ph];
      tr.detected = std::move(detected);
      tr.kept = kept[ph];
    }
  }

  auto aggregated = aggregate_three_phase(kept, cfg.n_peaks);
  PulseSets sets;
  auto fill = [&](HalfCyclePulseSet& set, std::vector<Peak> peaks) {
    set.pulses_t = extract_windows(highpass, peaks, cfg.window_t, cfg.n_peaks);
    set.pulses_f = extract_windows(highpass, peaks, cfg.window_f, cfg.n_peaks);
    set.n_real_peaks = peaks.size();
    set.peaks = std::move(peaks);
  };
  fill(sets.positive, std::move(aggregated.positive));
  fill(sets.negative, std::move(aggregated.negative));
  return sets;
}

namespace {

Matrix<float> to_float(const Matrix<double>& m) {
  Matrix<float> out(m.rows, m.cols);
  for (std::size_t i = 0; i < m.values.size(); ++i) out.values[i] = static_cast<float>(m.values[i]);
  return out;
}

}  // namespace

MeasurementFeatures preprocess_measurement(const RawMeasurement& m, const PreprocessConfig& cfg) {
  const auto sets = extract_pulse_sets(m, cfg);
  MeasurementFeatures f;
  f.id = m.id;
  f.label = m.label;
  f.td_pos = to_float(timefreq::normalize_symmetric(sets.positive.pulses_t));
  f.td_neg = to_float(timefreq::normalize_symmetric(sets.negative.pulses_t));
  f.fd_pos = to_float(timefreq::normalize_unit(timefreq::log_spectrogram(sets.positive.pulses_f)));
  f.fd_neg = to_float(timefreq::normalize_unit(timefreq::log_spectrogram(sets.negative.pulses_f)));
  f.n_real_pos = sets.positive.n_real_peaks;
  f.n_real_neg = sets.negative.n_real_peaks;
  return f;
}

}  // namespace pdcycon::preprocess
