#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pdcycon/model.hpp"
#include "pdcycon/preprocess.hpp"
#include "pdcycon/synth.hpp"
#include "pdcycon/training.hpp"

namespace pdcycon {

/// Everything a run can be configured with, set through flat `key=value`
/// lines. Blank lines and lines starting with '#' are ignored.
struct RunConfig {
  preprocess::PreprocessConfig preprocess;
  training::TrainConfig train;
  synth::SynthConfig synth;
  model::ModelConfig model_options;  // geometry fields are derived, see model()

  /// Throws InvalidConfig for unknown keys or unparsable values.
  void set(std::string_view key, std::string_view value);
  /// Accepts "key=value".
  void apply(std::string_view assignment);
  void apply_text(std::string_view text);

  /// Model configuration with the input geometry taken from `preprocess`.
  model::ModelConfig model() const;

  /// Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string to_text() const;

  /// Validates every section.
  void validate() const;

  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_text(std::string_view text);
  static std::vector<std::string> keys();
};

}  // namespace pdcycon
