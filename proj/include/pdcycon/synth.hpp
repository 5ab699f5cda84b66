#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "pdcycon/signal_io.hpp"

namespace pdcycon::synth {

struct SynthConfig {
  std::size_t n_samples = 80000;
  double sample_rate = 4.0e6;
  double grid_freq = 50.0;
  double grid_amplitude = 1.0;
  double noise_std = 0.005;
  std::size_t pd_pulse_count = 4;
  double pd_amplitude = 0.3;
  double pd_phase_jitter_deg = 1.0;
  double pulse_spacing_deg = 3.0;  // angle between consecutive bursts of one half-cycle
  double damping = 4.0e-6;         // seconds
  double carrier_freq = 2.0e5;     // Hz
  std::uint64_t seed = 1;

  /// Throws InvalidConfig.
  void validate() const;
};

/// What was injected into a labelled measurement, for tests.
struct InjectionTruth {
  std::array<bool, kPhaseCount> phases{false, false, false};
  std::vector<double> angles_pos;  // degrees relative to the phase's own 0°
  std::vector<double> angles_neg;
  std::vector<double> amplitudes;  // one per mirrored pair
};

/// Three 120°-shifted sinusoids plus white noise. For label 1, damped
/// oscillatory bursts are injected into a random non-empty subset of the
/// phases at angles phi + k * spacing and again at the mirrored angles
/// (+180° with jitter), each pair sharing one amplitude.
RawMeasurement gen_signal(int label, const SynthConfig& cfg, std::uint64_t seed, InjectionTruth* truth = nullptr);

/// Writes `n` measurements (`<id>.pdms`) and `manifest.csv` into `out_dir`.
/// Exactly round(n * pd_fraction) are labelled 1; their positions are
/// shuffled with cfg.seed, and measurement i uses derive_seed(cfg.seed, i).
Manifest gen_dataset(std::size_t n, double pd_fraction, const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace pdcycon::synth
