#pragma once

// Flat key=value run configuration (one entry per line, `#` comments).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "clcs/data.hpp"
#include "clcs/trainer.hpp"

namespace clcs {

struct RunConfig {
  std::string name = "clcs";
  std::filesystem::path out = "runs";
  std::uint64_t seed = 0;
  std::size_t train_samples = 400;
  std::size_t test_samples = 100;
  std::size_t image_size = 64;
  double pixel_noise = 0.1;
  NoiseConfig noise = reference_noise_config();
  TrainConfig train;

  void validate() const;
  DatasetSpec dataset_spec() const;
  /// Training settings with the run seed applied.
  TrainConfig train_config() const;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigFileMissing : ConfigError {
  using ConfigError::ConfigError;
};

/// `origin` prefixes error messages (usually the file name).
RunConfig parse_run_config(const std::string& text, const std::string& origin = "config");
RunConfig load_run_config(const std::filesystem::path& path);
std::string format_run_config(const RunConfig& cfg);

/// Train and test samples for a config: one generated pool, noise applied to
/// all of it, the first train_samples forming the training split.
struct GeneratedData {
  std::vector<Sample> train;
  std::vector<Sample> test;
};
GeneratedData generate_run_data(const RunConfig& cfg);

}  // namespace clcs
