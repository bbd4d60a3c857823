#include "svae/color.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "svae/errors.hpp"

namespace svae::color {

namespace {

double clamp255(double v) { return std::clamp(v, 0.0, 255.0); }

}  // namespace

YccImage rgb_to_ycbcr(const RgbImage& img) {
  const auto n = img.pixels();
  YccImage out{img.height, img.width, 1, std::vector<double>(n), std::vector<double>(n),
               std::vector<double>(n)};
  const double* r = img.data.data();
  const double* g = r + n;
  const double* b = g + n;
  for (std::size_t i = 0; i < n; ++i) {
    const double y = kYr * r[i] + kYg * g[i] + kYb * b[i];
    out.y[i] = clamp255(y);
    out.cb[i] = clamp255(128.0 + (b[i] - y) * kCb);
    out.cr[i] = clamp255(128.0 + (r[i] - y) * kCr);
  }
  return out;
}

RgbImage ycbcr_to_rgb(const YccImage& img) {
  if (img.factor != 1) throw UsageError("ycbcr_to_rgb needs full-resolution chroma; upsample first");
  RgbImage out(img.height, img.width);
  const auto n = out.pixels();
  for (std::size_t i = 0; i < n; ++i) {
    const double y = img.y[i];
    const double r = y + (img.cr[i] - 128.0) / kCr;
    const double b = y + (img.cb[i] - 128.0) / kCb;
    const double g = (y - kYr * r - kYb * b) / kYg;
    out.data[i] = clamp255(r);
    out.data[n + i] = clamp255(g);
    out.data[2 * n + i] = clamp255(b);
  }
  return out;
}

std::vector<double> downsample_plane(const std::vector<double>& plane, std::size_t height,
                                     std::size_t width, std::size_t factor) {
  if (factor == 0 || height % factor != 0 || width % factor != 0) {
    throw ConfigError("cannot downsample " + std::to_string(height) + "x" + std::to_string(width) +
                      " by factor " + std::to_string(factor));
  }
  const auto oh = height / factor, ow = width / factor;
  std::vector<double> out(oh * ow, 0.0);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t dy = 0; dy < factor; ++dy) {
        for (std::size_t dx = 0; dx < factor; ++dx) s += plane[(y * factor + dy) * width + x * factor + dx];
      }
      out[y * ow + x] = s * inv;
    }
  }
  return out;
}

std::vector<double> upsample_plane(const std::vector<double>& plane, std::size_t height,
                                   std::size_t width, std::size_t factor) {
  if (factor == 1) return plane;
  const auto oh = height * factor, ow = width * factor;
  std::vector<double> out(oh * ow);
  auto coord = [factor](std::size_t o, std::size_t n, std::size_t& i0, std::size_t& i1, double& t) {
    double u = (static_cast<double>(o) + 0.5) / static_cast<double>(factor) - 0.5;
    u = std::clamp(u, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(u));
    i1 = std::min(i0 + 1, n - 1);
    t = u - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < oh; ++y) {
    std::size_t y0, y1;
    double ty;
    coord(y, height, y0, y1, ty);
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t x0, x1;
      double tx;
      coord(x, width, x0, x1, tx);
      const double top = plane[y0 * width + x0] * (1 - tx) + plane[y0 * width + x1] * tx;
      const double bot = plane[y1 * width + x0] * (1 - tx) + plane[y1 * width + x1] * tx;
      out[y * ow + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

YccImage downsample_chroma(const YccImage& img, std::size_t factor) {
  YccImage out = img;
  out.cb = downsample_plane(img.cb, img.chroma_height(), img.chroma_width(), factor);
  out.cr = downsample_plane(img.cr, img.chroma_height(), img.chroma_width(), factor);
  out.factor = img.factor * factor;
  return out;
}

YccImage upsample_chroma(const YccImage& img, std::size_t factor) {
  if (factor != img.factor) {
    throw UsageError("upsample factor " + std::to_string(factor) + " does not match image factor " +
                     std::to_string(img.factor));
  }
  YccImage out = img;
  out.cb = upsample_plane(img.cb, img.chroma_height(), img.chroma_width(), factor);
  out.cr = upsample_plane(img.cr, img.chroma_height(), img.chroma_width(), factor);
  out.factor = 1;
  return out;
}

std::size_t default_chroma_factor(std::size_t size) { return std::max<std::size_t>(1, size / 16); }

}  // namespace svae::color
