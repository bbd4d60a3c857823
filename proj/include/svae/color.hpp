#pragma once

#include <cstddef>
#include <vector>

namespace svae::color {

/// Planar RGB image, values in [0, 255]. data = [R plane, G plane, B plane].
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), data(3 * h * w, 0.0) {}
  std::size_t pixels() const { return height * width; }
  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
};

/// Full-resolution Y with Cb/Cr planes stored at 1/factor resolution.
struct YccImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t factor = 1;
  std::vector<double> y;
  std::vector<double> cb;
  std::vector<double> cr;

  std::size_t chroma_height() const { return height / factor; }
  std::size_t chroma_width() const { return width / factor; }
};

// Full-range BT.601.
inline constexpr double kYr = 0.299, kYg = 0.587, kYb = 0.114;
inline constexpr double kCb = 0.564, kCr = 0.713;

/// Factor-1 conversion, outputs clamped to [0, 255].
YccImage rgb_to_ycbcr(const RgbImage& img);
/// Inverse transform, clamped to [0, 255]. UsageError for subsampled input.
RgbImage ycbcr_to_rgb(const YccImage& img);

/// Area-averages chroma by `factor` on top of the current subsampling.
/// ConfigError unless the chroma dimensions divide evenly.
YccImage downsample_chroma(const YccImage& img, std::size_t factor);
/// Bilinear upsampling to full resolution. `factor` must equal img.factor.
YccImage upsample_chroma(const YccImage& img, std::size_t factor);

/// Area-average downsampling of one plane by an integer factor.
std::vector<double> downsample_plane(const std::vector<double>& plane, std::size_t height,
                                     std::size_t width, std::size_t factor);
/// Bilinear upsampling of one plane by an integer factor; samples sit at
/// pixel centres and the border is clamped.
std::vector<double> upsample_plane(const std::vector<double>& plane, std::size_t height,
                                   std::size_t width, std::size_t factor);

/// Chroma factor for square images of side `size`: chroma ends at 16x16,
/// with a minimum factor of 1.
std::size_t default_chroma_factor(std::size_t size);

}  // namespace svae::color
