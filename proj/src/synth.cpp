#include "pdcycon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>

#include "pdcycon/error.hpp"
#include "pdcycon/seed.hpp"

namespace pdcycon::synth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Angular range (degrees) that bursts of the positive half may occupy; the
// margins keep the bursts and their ringing inside one half-cycle.
constexpr double kFirstAngle = 20.0;
constexpr double kLastAngle = 160.0;

void add_burst(std::vector<double>& x, double start, double amplitude, const SynthConfig& cfg) {
  const std::size_t n = x.size();
  const double tau = cfg.damping * cfg.sample_rate;  // in samples
  const auto length = static_cast<std::size_t>(std::ceil(10.0 * tau));
  const auto first = static_cast<std::size_t>(std::llround(start)) % n;
  const double w = kTwoPi * cfg.carrier_freq / cfg.sample_rate;
  for (std::size_t k = 0; k < length; ++k) {
    const double kd = static_cast<double>(k);
    x[(first + k) % n] += amplitude * std::exp(-kd / tau) * std::sin(w * kd);
  }
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (n_samples < 16) fail("synth n_samples must be at least 16");
  if (!(sample_rate > 0.0) || !(grid_freq > 0.0)) fail("sample rate and grid frequency must be positive");
  if (!(grid_amplitude > 0.0)) fail("grid amplitude must be positive");
  if (!(noise_std >= 0.0)) fail("noise_std must be non-negative");
  if (pd_pulse_count == 0) fail("pd_pulse_count must be positive");
  if (!(pd_amplitude > 0.0)) fail("pd_amplitude must be positive");
  if (!(pd_phase_jitter_deg >= 0.0) || pd_phase_jitter_deg >= 180.0) fail("pd_phase_jitter_deg must lie in [0, 180)");
  if (!(pulse_spacing_deg >= 0.0)) fail("pulse spacing must be non-negative");
  if (!(damping > 0.0) || !(carrier_freq > 0.0)) fail("damping and carrier frequency must be positive");
  if (carrier_freq >= sample_rate / 2.0) fail("carrier frequency must be below the Nyquist rate");
  if (kFirstAngle + static_cast<double>(pd_pulse_count - 1) * pulse_spacing_deg > kLastAngle) {
    fail("pd_pulse_count * pulse_spacing does not fit in one half-cycle");
  }
}

RawMeasurement gen_signal(int label, const SynthConfig& cfg, std::uint64_t seed, InjectionTruth* truth) {
  cfg.validate();
  if (label != 0 && label != 1) throw Error(ErrorCode::InvalidConfig, "label must be 0 or 1");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  RawMeasurement m;
  m.n_samples = cfg.n_samples;
  m.sample_rate_hz = cfg.sample_rate;
  m.grid_freq_hz = cfg.grid_freq;
  m.label = label;

  const double omega = kTwoPi * cfg.grid_freq / cfg.sample_rate;  // radians per sample
  const double phi0 = kTwoPi * unit(rng);
  for (std::size_t p = 0; p < kPhaseCount; ++p) {
    auto& x = m.samples[p];
    x.resize(cfg.n_samples);
    const double shift = phi0 - static_cast<double>(p) * kTwoPi / 3.0;
    for (std::size_t i = 0; i < cfg.n_samples; ++i) {
      x[i] = cfg.grid_amplitude * std::sin(omega * static_cast<double>(i) + shift);
    }
  }

  if (label == 1) {
    InjectionTruth t;
    const int mask = 1 + static_cast<int>(unit(rng) * 7.0) % 7;  // non-empty subset of {A, B, C}
    for (std::size_t p = 0; p < kPhaseCount; ++p) t.phases[p] = (mask >> p) & 1;

    const double span = static_cast<double>(cfg.pd_pulse_count - 1) * cfg.pulse_spacing_deg;
    const double phi = kFirstAngle + unit(rng) * (kLastAngle - kFirstAngle - span);
    for (std::size_t k = 0; k < cfg.pd_pulse_count; ++k) {
      const double a = phi + static_cast<double>(k) * cfg.pulse_spacing_deg;
      t.angles_pos.push_back(a);
      t.angles_neg.push_back(a + 180.0 + (2.0 * unit(rng) - 1.0) * cfg.pd_phase_jitter_deg);
      t.amplitudes.push_back(cfg.pd_amplitude * (0.7 + 0.6 * unit(rng)));
    }

    const double period = kTwoPi / omega;  // samples per grid cycle
    for (std::size_t p = 0; p < kPhaseCount; ++p) {
      if (!t.phases[p]) continue;
      // Sample at which this phase crosses zero upwards.
      const double shift = phi0 - static_cast<double>(p) * kTwoPi / 3.0;
      double zero = std::fmod(-shift, kTwoPi);
      if (zero < 0.0) zero += kTwoPi;
      const double n0 = zero / omega;
      for (std::size_t k = 0; k < cfg.pd_pulse_count; ++k) {
        add_burst(m.samples[p], n0 + t.angles_pos[k] / 360.0 * period, t.amplitudes[k], cfg);
        add_burst(m.samples[p], n0 + t.angles_neg[k] / 360.0 * period, t.amplitudes[k], cfg);
      }
    }
    if (truth) *truth = std::move(t);
  } else if (truth) {
    *truth = InjectionTruth{};
  }

  if (cfg.noise_std > 0.0) {
    for (auto& x : m.samples) {
      for (auto& v : x) v += cfg.noise_std * noise(rng);
    }
  }
  return m;
}

Manifest gen_dataset(std::size_t n, double pd_fraction, const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  if (n < 2) throw Error(ErrorCode::InvalidConfig, "dataset size must be at least 2");
  if (!(pd_fraction > 0.0 && pd_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "pd_fraction must lie strictly between 0 and 1");
  }
  cfg.validate();

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string() + ": " + ec.message());

  const auto n_pos = static_cast<std::size_t>(std::llround(static_cast<double>(n) * pd_fraction));
  std::vector<int> labels(n, 0);
  std::fill_n(labels.begin(), n_pos, 1);
  std::mt19937_64 rng(cfg.seed);
  std::shuffle(labels.begin(), labels.end(), rng);

  Manifest manifest;
  manifest.class_counts = {{0, 0}, {1, 0}};
  for (std::size_t i = 0; i < n; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "synth_%05zu", i);
    RawMeasurement m = gen_signal(labels[i], cfg, derive_seed(cfg.seed, i));
    m.id = id;
    const auto path = out_dir / (std::string(id) + ".pdms");
    write_measurement(path, m);
    manifest.entries.push_back({m.id, path, labels[i]});
    ++manifest.class_counts[labels[i]];
  }
  write_manifest(out_dir / "manifest.csv", manifest);
  return manifest;
}

}  // namespace pdcycon::synth
