#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "pdcycon/matrix.hpp"
#include "pdcycon/signal_io.hpp"

namespace pdcycon::preprocess {

struct PreprocessConfig {
  std::size_t ma_window = 10000;
  double alpha = 100.0;
  double beta = 1.0;
  std::size_t knee_length = 9;   // L, length of the gradient smoothing kernel
  std::size_t n_peaks = 257;     // N_p
  std::size_t window_t = 128;    // w_t
  std::size_t window_f = 512;    // w_f
  std::size_t peak_half_width = 25;
  double knee_tau = 1e-3;
  // Peaks must exceed this fraction of the phase's grid amplitude (max of the
  // smoothed signal). Keeps the low-frequency residual of the flattening
  // filter out of the pulse set.
  double peak_min_rel_height = 0.01;

  /// Throws InvalidConfig on a violated invariant.
  void validate() const;
  std::size_t freq_bins() const { return window_f / 2 + 1; }
};

struct PhaseAnchors {
  std::size_t idx0 = 0;
  std::size_t idx180 = 0;
};

enum class PhaseId { A = 0, B = 1, C = 2 };
enum class Half { Positive, Negative };

struct Peak {
  std::size_t t = 0;     // index in the phase-aligned signal
  double height = 0.0;   // |X_d| at t
  PhaseId phase = PhaseId::A;
  Half half = Half::Positive;

  bool operator==(const Peak&) const = default;
};

struct HalfCyclePulseSet {
  Matrix<double> pulses_t;  // N_p x w_t
  Matrix<double> pulses_f;  // N_p x w_f
  std::vector<Peak> peaks;  // the retained peaks, row order
  std::size_t n_real_peaks = 0;
};

struct PulseSets {
  HalfCyclePulseSet positive;
  HalfCyclePulseSet negative;
};

/// Centered moving average; near the edges the mean is taken over the part of
/// the window that overlaps the signal, so the output keeps the input length.
/// An even window takes one more sample from the left than from the right.
std::vector<double> moving_average(std::span<const double> x, std::size_t window);

/// Locates the 0° (rising) and 180° (falling) zero crossings of a smoothed
/// single-period signal. The signal is treated as circular. When several
/// crossings of one kind exist, the steepest one (first difference) wins.
PhaseAnchors find_phase_anchors(std::span<const double> smoothed);

/// Circular rotation so that index 0 carries phase 0°.
std::vector<double> phase_align(std::span<const double> x, const PhaseAnchors& anchors);

/// First-order tracker subtraction:
///   z_0 = x_0,  z_i = z_{i-1} (alpha - beta) / alpha + beta x_i / alpha,  out_i = x_i - z_i
std::vector<double> flatten_highpass(std::span<const double> x, double alpha, double beta);

/// Maximum-filter peak picking on a non-negative signal. Index i is a peak when
/// x[i] equals the maximum over [i - half_width, i + half_width], x[i] > min_height,
/// and no earlier index in that window holds the same value (leftmost plateau
/// index wins). Returned peaks carry t and height only, in index order.
std::vector<Peak> detect_peaks(std::span<const double> x_d, std::size_t half_width, double min_height = 0.0);

/// Keeps the peaks ranked before the knee of the sorted height curve.
/// `peaks` must be sorted by descending height.
std::vector<Peak> knee_filter(std::span<const Peak> peaks, std::size_t kernel_length, double tau);

/// The smoothed gradient used by knee_filter, exposed for inspection.
std::vector<double> smoothed_height_gradient(std::span<const Peak> peaks, std::size_t kernel_length);

/// Orders peaks by descending height; ties go to the earlier timestamp, then
/// phase A < B < C.
void sort_by_height(std::vector<Peak>& peaks);

struct AggregatedPeaks {
  std::vector<Peak> positive;
  std::vector<Peak> negative;
};

/// `per_phase[p]` holds every retained peak of phase p (both halves, tagged).
AggregatedPeaks aggregate_three_phase(const std::array<std::vector<Peak>, kPhaseCount>& per_phase,
                                      std::size_t n_peaks);

/// Row r holds x_hp[phase_r][t_r - w/2, t_r + w/2); samples outside the signal
/// are zero, as are rows past the number of peaks.
Matrix<double> extract_windows(const std::array<std::vector<double>, kPhaseCount>& x_hp,
                               std::span<const Peak> peaks, std::size_t window, std::size_t n_peaks);

/// Intermediate per-phase products, kept for diagnostics and tests.
struct PhaseTrace {
  PhaseAnchors anchors;
  std::vector<double> aligned;
  std::vector<double> highpass;
  std::vector<Peak> detected;  // sorted by height
  std::vector<Peak> kept;      // after knee_filter
};

/// Runs the per-phase chain and the three-phase aggregation, producing the raw
/// (unnormalized) pulse matrices of both half-cycles.
PulseSets extract_pulse_sets(const RawMeasurement& m, const PreprocessConfig& cfg,
                             std::array<PhaseTrace, kPhaseCount>* traces = nullptr);

/// Full preprocessing: pulse extraction, log-spectrograms and input
/// normalization. Deterministic.
MeasurementFeatures preprocess_measurement(const RawMeasurement& m, const PreprocessConfig& cfg);

}  // namespace pdcycon::preprocess
