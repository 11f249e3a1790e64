#pragma once

// File formats: PPM/PGM images, the binary tensor blob, checkpoints and
// dataset directories.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "clcs/data.hpp"
#include "clcs/model.hpp"
#include "clcs/tensor.hpp"

namespace clcs {

/// Shortest round-trip decimal text for a double; stable across runs.
std::string format_real(double v);

/// Binary P6; `image` holds 3 planes in [0,1].
void write_ppm(const std::filesystem::path& path, const std::vector<float>& image,
               std::size_t height, std::size_t width);
std::vector<float> read_ppm(const std::filesystem::path& path, std::size_t& height, std::size_t& width);

/// Binary P5 with maxval 255; pixel value = class index.
void write_pgm(const std::filesystem::path& path, const std::vector<Label>& label,
               std::size_t height, std::size_t width);
std::vector<Label> read_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width);

/// u32 rank, u32 dims, then float64 values, all little-endian.
template <typename T>
void write_tensor_blob(std::ostream& os, const Tensor<T>& t);
Tensor<double> read_tensor_blob(std::istream& is);

/// `<stem>.bin` holds concatenated blobs; `<stem>.manifest` lists
/// name, byte offset and shape per parameter.
template <typename T>
void save_checkpoint(const std::filesystem::path& stem, const TwoBranchModel<T>& model);
template <typename T>
void load_checkpoint(const std::filesystem::path& stem, TwoBranchModel<T>& model);

struct DatasetFiles {
  DatasetSpec spec;
  NoiseConfig noise;
  std::uint64_t seed = 0;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Writes train/ and test/ subdirectories (`<id>.ppm`, `<id>_noisy.pgm`,
/// `<id>_clean.pgm`) plus manifest.txt.
void write_dataset(const std::filesystem::path& dir, const DatasetFiles& data);
DatasetFiles read_dataset(const std::filesystem::path& dir);

/// Writes `text` to `path`, creating parent directories; throws on failure.
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace clcs
