#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "svae/color.hpp"
#include "svae/structured/gaussian.hpp"

namespace svae::data {

/// Binary PGM (P5) or PPM (P6) with maxval 255. PGM loads as R = G = B.
/// Throws FormatError on anything else.
color::RgbImage read_pnm(const std::string& path);
color::RgbImage decode_pnm(const std::vector<std::uint8_t>& bytes);
/// Values are rounded and clamped to [0, 255].
void write_ppm(const std::string& path, const color::RgbImage& img);
void write_pgm(const std::string& path, const std::vector<double>& plane, std::size_t height,
               std::size_t width);

struct Record {
  std::string name;
  color::RgbImage rgb;
};

struct Dataset {
  std::size_t size = 0;  // square side
  bool grayscale = false;
  std::vector<Record> records;
};

/// Largest centred square.
color::RgbImage center_crop(const color::RgbImage& img);
/// Area resampling to size x size (fractional box overlaps).
color::RgbImage resize_area(const color::RgbImage& img, std::size_t size);

/// Supported files (.pgm, .ppm, .pnm) in filename order, centre-cropped and
/// resampled. Undecodable files are skipped with a warning on stderr; an
/// empty result throws ConfigError. limit = 0 loads everything.
Dataset load_folder(const std::string& path, std::size_t size, std::size_t limit = 0);

color::RgbImage flip_horizontal(const color::RgbImage& img);
inline color::RgbImage augment_flip(const color::RgbImage& img, bool coin) {
  return coin ? flip_horizontal(img) : img;
}

/// Converts an RGB record to the model representation with chroma
/// subsampled by `chroma_factor`.
color::YccImage to_ycc(const color::RgbImage& img, std::size_t chroma_factor);

enum class MeanFamily { Smooth, Shapes, Texture };
MeanFamily parse_mean_family(const std::string& name);
std::string to_string(MeanFamily family);

struct SyntheticSpec {
  std::size_t size = 16;
  MeanFamily family = MeanFamily::Smooth;
  bool grayscale = true;
  // Luma noise: precision factor with L_pp = 1 / noise_sigma and the left
  // and upper neighbour coefficients at -noise_correlation / noise_sigma.
  // Values are in [0, 255] units.
  double noise_sigma = 6.0;
  double noise_correlation = 0.45;
  std::size_t patch_size = 3;
  // Independent chroma noise (colour datasets only).
  double chroma_sigma = 2.0;
  std::uint64_t seed = 1;
};

struct SyntheticTruth {
  SyntheticSpec spec;
  /// Ground-truth luma precision factor in [0, 255] units.
  std::shared_ptr<structured::PackedCholesky> factor;
  /// Noise-free mean of each image at full resolution.
  std::vector<color::YccImage> means;
  /// E[log p(x_Y)] under the true model: 0.5 log|Lambda| - n/2 - (n/2) log 2 pi.
  double expected_log_density_y = 0.0;
  /// Same expectation for pixel values scaled by 1/255.
  double expected_log_density_y_model_units() const;
};

struct SyntheticDataset {
  Dataset dataset;
  SyntheticTruth truth;
};

/// Images x = mu* + eps. Luma noise is drawn through structured sampling
/// from the known factor; chroma noise is independent. Bitwise
/// reproducible for a fixed spec.
SyntheticDataset gen_synthetic(const SyntheticSpec& spec, std::size_t count);

/// Precision factor used by gen_synthetic.
structured::PackedCholesky synthetic_factor(const SyntheticSpec& spec);

/// Writes every record as PPM (or PGM for grayscale) named by record name.
void write_folder(const Dataset& dataset, const std::string& dir);
/// Binary ground-truth file: spec, serialized factor, means.
void save_truth(const SyntheticTruth& truth, const std::string& path);
SyntheticTruth load_truth(const std::string& path);

}  // namespace svae::data
