#pragma once

#include <complex>
#include <cstddef>
#include <span>
#include <vector>

#include "pdcycon/matrix.hpp"

namespace pdcycon::timefreq {

inline constexpr double kLogEpsilon = 1e-12;

/// Periodic Hann window, w[m] = 0.5 - 0.5 cos(2 pi m / n).
std::vector<double> hann_window(std::size_t n);

/// One STFT frame: bins k = 0 .. n/2 of sum_m x[m] w[m] exp(-j 2 pi k m / n).
/// Radix-2 FFT for power-of-two lengths, table-driven DFT otherwise.
std::vector<std::complex<double>> stft_frame(std::span<const double> segment, std::span<const double> window);

/// Each row is its own frame (no hop, no overlap):
///   out(i, k) = log(|X(i, k)|^2 + eps)
Matrix<double> log_spectrogram(const Matrix<double>& pulses_f);

/// Whole-matrix min-max scaling to [-1, 1]; a constant matrix maps to zeros.
Matrix<double> normalize_symmetric(const Matrix<double>& m);
/// Whole-matrix min-max scaling to [0, 1]; a constant matrix maps to zeros.
Matrix<double> normalize_unit(const Matrix<double>& m);

}  // namespace pdcycon::timefreq
