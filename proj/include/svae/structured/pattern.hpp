#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace svae::structured {

struct NeighborOffset {
  int dy = 0;
  int dx = 0;
  bool operator==(const NeighborOffset&) const = default;
};

/// Non-zero structure of a lower-triangular factor L over an image in raster
/// order.
///
/// Row p of L may be non-zero at pixels q <= p inside the (dilated)
/// patch_size x patch_size window centred on p. The window's preceding half
/// is enumerated once as a table of *slots*: slot 0 is the pixel itself (the
/// diagonal), slots 1..K-1 are the preceding offsets in raster order, with
/// K = (patch_size^2 - 1) / 2 + 1. Network outputs and basis rows use this
/// slot order. Per pixel, in-bounds entries are listed by increasing column,
/// which puts the diagonal last; out-of-image offsets are dropped.
class SparsityPattern {
 public:
  /// Throws ConfigError for an even or zero patch size, zero dilation, or an
  /// empty image.
  static SparsityPattern build(std::size_t height, std::size_t width, std::size_t patch_size,
                               std::size_t dilation = 1);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t patch_size() const { return patch_size_; }
  std::size_t dilation() const { return dilation_; }
  std::size_t pixel_count() const { return height_ * width_; }
  std::size_t slot_count() const { return slot_offsets_.size(); }
  std::size_t nonzero_count() const { return columns_.size(); }

  std::span<const NeighborOffset> slot_offsets() const { return slot_offsets_; }

  std::size_t row_begin(std::size_t p) const { return row_ptr_[p]; }
  std::size_t row_end(std::size_t p) const { return row_ptr_[p + 1]; }
  /// Columns of row p, strictly increasing, ending with p.
  std::span<const std::size_t> columns(std::size_t p) const;
  /// Slot index of each entry of row p, aligned with columns(p).
  std::span<const std::uint32_t> slots(std::size_t p) const;

  std::span<const std::size_t> all_columns() const { return columns_; }
  std::span<const std::uint32_t> all_slots() const { return slots_; }

  /// Same geometry (dimensions, patch size, dilation).
  bool same_geometry(const SparsityPattern& other) const;

 private:
  std::size_t height_ = 0, width_ = 0, patch_size_ = 1, dilation_ = 1;
  std::vector<NeighborOffset> slot_offsets_;
  std::vector<std::size_t> row_ptr_;
  std::vector<std::size_t> columns_;
  std::vector<std::uint32_t> slots_;
};

/// Slot count for a patch size without building a pattern.
std::size_t slot_count_for(std::size_t patch_size);

}  // namespace svae::structured
