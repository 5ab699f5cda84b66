#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pdcycon/matrix.hpp"

namespace pdcycon {

inline constexpr std::size_t kPhaseCount = 3;

/// One grid period of three phase waveforms. Samples are held in float64 for
/// computation; they are stored as float32 on disk.
struct RawMeasurement {
  std::string id;
  std::array<std::vector<double>, kPhaseCount> samples;
  std::size_t n_samples = 800000;
  double sample_rate_hz = 4.0e7;
  double grid_freq_hz = 50.0;
  int label = 0;  // 1 = damaged line

  /// Throws DimMismatch / MalformedRow when the invariants do not hold.
  void validate() const;
};

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;  // resolved against the manifest directory
  int label = 0;
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  std::map<int, std::size_t> class_counts;
};

/// Parses a CSV with header `id,path,label`. Relative paths are resolved
/// against the directory holding the manifest.
Manifest load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

/// Reads either the "PDMS" binary layout or a 3-column CSV (selected by a
/// `.csv` extension). Metadata (id, label) is taken from `meta`.
RawMeasurement read_measurement(const std::filesystem::path& path, const ManifestEntry& meta);
void write_measurement(const std::filesystem::path& path, const RawMeasurement& m);

/// Normalized network inputs for one measurement.
///   td_*: N_p x w_t in [-1, 1]
///   fd_*: N_p x (w_f/2 + 1) in [0, 1]
struct MeasurementFeatures {
  std::string id;
  int label = 0;
  Matrix<float> td_pos, td_neg;
  Matrix<float> fd_pos, fd_neg;
  // In-memory bookkeeping only; not part of the feature file.
  std::size_t n_real_pos = 0;
  std::size_t n_real_neg = 0;

  std::size_t n_peaks() const { return td_pos.rows; }
  std::size_t window_t() const { return td_pos.cols; }
  std::size_t freq_bins() const { return fd_pos.cols; }
};

inline constexpr std::uint16_t kFeatureFileVersion = 1;
/// magic(4) + version(2) + N_p, w_t, f_bins (3 x u32)
inline constexpr std::size_t kFeatureHeaderBytes = 18;

std::size_t feature_file_size(std::size_t n_peaks, std::size_t w_t, std::size_t f_bins);

void write_features(const std::filesystem::path& path, const MeasurementFeatures& features);
MeasurementFeatures read_features(const std::filesystem::path& path);

}  // namespace pdcycon
