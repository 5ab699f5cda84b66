#include "pdcycon/timefreq.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pdcycon/error.hpp"

namespace pdcycon::timefreq {

namespace {

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void fft_in_place(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    const std::size_t step = n / len;
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < half; ++k) {
        // twiddles from the exact angle, not from repeated multiplication
        const double angle = -2.0 * std::numbers::pi * static_cast<double>(k * step) / static_cast<double>(n);
        const std::complex<double> w(std::cos(angle), std::sin(angle));
        const auto u = a[start + k];
        const auto v = a[start + k + half] * w;
        a[start + k] = u + v;
        a[start + k + half] = u - v;
      }
    }
  }
}

template <typename Fn>
Matrix<double> minmax_map(const Matrix<double>& m, Fn fn) {
  Matrix<double> out(m.rows, m.cols, 0.0);
  if (m.values.empty()) return out;
  const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
  const double min = *lo;
  const double range = *hi - min;
  if (!(range > 0.0)) return out;
  for (std::size_t i = 0; i < m.values.size(); ++i) out.values[i] = fn((m.values[i] - min) / range);
  return out;
}

}  // namespace

std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t m = 0; m < n; ++m) {
    w[m] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(m) / static_cast<double>(n));
  }
  return w;
}

std::vector<std::complex<double>> stft_frame(std::span<const double> segment, std::span<const double> window) {
  if (segment.size() != window.size() || segment.empty()) {
    throw Error(ErrorCode::LengthMismatch, "segment length " + std::to_string(segment.size()) +
                                               " vs window length " + std::to_string(window.size()));
  }
  const std::size_t n = segment.size();
  const std::size_t bins = n / 2 + 1;

  if (is_power_of_two(n)) {
    std::vector<std::complex<double>> a(n);
    for (std::size_t m = 0; m < n; ++m) a[m] = segment[m] * window[m];
    fft_in_place(a);
    a.resize(bins);
    a[0].imag(0.0);
    if (n % 2 == 0) a[n / 2].imag(0.0);
    return a;
  }

  std::vector<double> cos_table(n), sin_table(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    cos_table[i] = std::cos(angle);
    sin_table[i] = std::sin(angle);
  }
  std::vector<std::complex<double>> out(bins);
  for (std::size_t k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t m = 0; m < n; ++m) {
      const double x = segment[m] * window[m];
      const std::size_t idx = (k * m) % n;
      re += x * cos_table[idx];
      im -= x * sin_table[idx];
    }
    out[k] = {re, im};
  }
  out[0].imag(0.0);
  if (n % 2 == 0) out[n / 2].imag(0.0);
  return out;
}

Matrix<double> log_spectrogram(const Matrix<double>& pulses_f) {
  const std::size_t bins = pulses_f.cols / 2 + 1;
  Matrix<double> out(pulses_f.rows, bins);
  const auto window = hann_window(pulses_f.cols);
  for (std::size_t r = 0; r < pulses_f.rows; ++r) {
    const auto spectrum = stft_frame({pulses_f.row(r), pulses_f.cols}, window);
    for (std::size_t k = 0; k < bins; ++k) out(r, k) = std::log(std::norm(spectrum[k]) + kLogEpsilon);
  }
  return out;
}

Matrix<double> normalize_symmetric(const Matrix<double>& m) {
  return minmax_map(m, [](double u) { return 2.0 * u - 1.0; });
}

Matrix<double> normalize_unit(const Matrix<double>& m) {
  return minmax_map(m, [](double u) { return u; });
}

}  // namespace pdcycon::timefreq
