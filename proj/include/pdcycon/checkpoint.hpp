#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pdcycon/tensor.hpp"

namespace pdcycon::nn {

/// One named array in a checkpoint. Optimizer moments are empty for buffers
/// that are not trained (batch-norm running statistics).
struct TensorBlob {
  std::string name;
  Shape shape;
  std::vector<double> data;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t step = 0;

  bool has_optimizer_state() const { return !m.empty(); }
};

struct Checkpoint {
  std::uint32_t fold = 0;
  std::uint64_t seed = 0;
  std::uint32_t epoch = 0;     // epoch the weights were taken after (1-based)
  double metric = 0.0;         // validation MCC at that epoch
  std::string config_text;     // resolved key=value configuration
  std::vector<TensorBlob> blobs;

  const TensorBlob* find(const std::string& name) const;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

/// Layout (little-endian):
///   "PDCK" u16 version u32 fold u64 seed u32 epoch f64 metric
///   u32 len + config text
///   u32 blob count, then per blob:
///     u16 len + name, u8 rank, rank x u32 dims, f64 data[n],
///     u8 has_optimizer [, f64 m[n], f64 v[n], u64 step]
/// The file is written to a temporary name and renamed into place.
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace pdcycon::nn
