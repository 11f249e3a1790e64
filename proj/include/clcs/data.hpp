#pragma once

// Synthetic imbalanced segmentation data with component-level label noise.
//
// Scenes mimic an instrument: a large bar entering from the border (class 1),
// a medium blob at its tip (class 2) and small dots beyond the blob (class 3),
// over a textured background (class 0). Images are [3,H,W] planes in [0,1],
// quantized to 8 bits so they survive a PPM round trip unchanged.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clcs/model.hpp"
#include "clcs/tensor.hpp"

namespace clcs {

enum class ShapeKind { bar, blob, dots };

struct ClassSpec {
  std::string name;
  ShapeKind kind = ShapeKind::bar;
  double share_lo = 0.0;  // per-image pixel share range
  double share_hi = 1.0;
  std::array<double, 3> color{0.5, 0.5, 0.5};
};

struct DatasetSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::array<double, 3> background{0.35, 0.35, 0.35};
  double background_texture = 0.08;  // amplitude of smooth background variation
  double pixel_noise = 0.1;           // Gaussian sigma added per channel
  std::vector<ClassSpec> foreground;  // classes 1..C-1

  std::size_t classes() const { return foreground.size() + 1; }
  void validate() const;
};

/// Bar ~12%, blob ~4%, dots ~1% of each image.
DatasetSpec default_dataset_spec();

struct Sample {
  std::size_t id = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> image;         // 3 x H x W
  std::vector<Label> noisy_label;   // training target
  std::vector<Label> clean_label;   // evaluation only
};

/// What the training loop is allowed to see.
struct TrainingSample {
  std::size_t id = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> image;
  std::vector<Label> label;
};

std::vector<TrainingSample> training_view(std::span<const Sample> samples);

struct ConfusionPair {
  Label from = 1;
  Label to = 2;
  double probability = 0.0;
};

struct NoiseConfig {
  std::vector<double> morph_rate;  // indexed by class; background entry unused
  int max_radius = 2;
  std::vector<ConfusionPair> confusion;

  void validate(std::size_t classes) const;
};

/// Noise profile tuned so the default dataset shows roughly 17% / 32% / 44%
/// wrong pixels among those labeled bar / blob / dots.
NoiseConfig reference_noise_config();

/// Clean scenes; noisy_label starts as a copy of clean_label.
std::vector<Sample> generate_dataset(std::size_t n, const DatasetSpec& spec, std::uint64_t seed);

/// 4-connected components of each foreground class, in raster order of their
/// first pixel. Each entry lists pixel indices.
std::vector<std::vector<std::size_t>> foreground_components(std::span<const Label> label,
                                                           std::size_t height, std::size_t width);

std::vector<Label> inject_morphological_noise(std::span<const Label> label, std::size_t height,
                                              std::size_t width, const NoiseConfig& cfg,
                                              std::uint64_t seed);

std::vector<Label> inject_confusion_noise(std::span<const Label> label, std::size_t height,
                                          std::size_t width, std::span<const ConfusionPair> pairs,
                                          std::uint64_t seed);

/// Confusion flips then contour erosion/dilation on every sample; the
/// randomness of sample i depends only on (seed, i).
void apply_noise(std::vector<Sample>& samples, const NoiseConfig& cfg, std::uint64_t seed);

/// Fraction of pixels labeled c in `noisy` whose clean label is also c;
/// nullopt when no pixel is labeled c.
std::optional<double> clean_ratio(std::span<const Label> noisy, std::span<const Label> clean,
                                  Label c);

/// Dataset-wide clean_ratio per class over all samples.
std::vector<std::optional<double>> dataset_clean_ratios(std::span<const Sample> samples,
                                                        std::size_t classes);

/// Stacks images into an [N,3,H,W] tensor.
template <typename T>
Tensor<T> stack_images(std::span<const float* const> images, std::size_t height, std::size_t width);

}  // namespace clcs
