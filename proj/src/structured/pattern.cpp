#include "svae/structured/pattern.hpp"

#include <string>

#include "svae/errors.hpp"

namespace svae::structured {

std::size_t slot_count_for(std::size_t patch_size) {
  if (patch_size == 0 || patch_size % 2 == 0) {
    throw ConfigError("patch size must be odd and positive, got " + std::to_string(patch_size));
  }
  return (patch_size * patch_size - 1) / 2 + 1;
}

SparsityPattern SparsityPattern::build(std::size_t height, std::size_t width,
                                       std::size_t patch_size, std::size_t dilation) {
  slot_count_for(patch_size);
  if (dilation == 0) throw ConfigError("dilation must be positive");
  if (height == 0 || width == 0) throw ConfigError("sparsity pattern needs a non-empty image");

  SparsityPattern pat;
  pat.height_ = height;
  pat.width_ = width;
  pat.patch_size_ = patch_size;
  pat.dilation_ = dilation;

  const int radius = static_cast<int>(patch_size / 2);
  const int d = static_cast<int>(dilation);
  pat.slot_offsets_.push_back({0, 0});
  for (int dy = -radius; dy <= 0; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dy == 0 && dx >= 0) break;
      pat.slot_offsets_.push_back({dy * d, dx * d});
    }
  }

  pat.row_ptr_.reserve(height * width + 1);
  pat.row_ptr_.push_back(0);
  const auto h = static_cast<long>(height), w = static_cast<long>(width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      // Slots 1..K-1 are already in raster order, so columns come out sorted.
      for (std::size_t s = 1; s < pat.slot_offsets_.size(); ++s) {
        const long qy = y + pat.slot_offsets_[s].dy, qx = x + pat.slot_offsets_[s].dx;
        if (qy < 0 || qx < 0 || qx >= w) continue;
        pat.columns_.push_back(static_cast<std::size_t>(qy * w + qx));
        pat.slots_.push_back(static_cast<std::uint32_t>(s));
      }
      pat.columns_.push_back(static_cast<std::size_t>(y * w + x));
      pat.slots_.push_back(0);
      pat.row_ptr_.push_back(pat.columns_.size());
    }
  }
  return pat;
}

std::span<const std::size_t> SparsityPattern::columns(std::size_t p) const {
  return std::span<const std::size_t>(columns_).subspan(row_ptr_[p], row_ptr_[p + 1] - row_ptr_[p]);
}

std::span<const std::uint32_t> SparsityPattern::slots(std::size_t p) const {
  return std::span<const std::uint32_t>(slots_).subspan(row_ptr_[p], row_ptr_[p + 1] - row_ptr_[p]);
}

bool SparsityPattern::same_geometry(const SparsityPattern& other) const {
  return height_ == other.height_ && width_ == other.width_ &&
         patch_size_ == other.patch_size_ && dilation_ == other.dilation_;
}

}  // namespace svae::structured
