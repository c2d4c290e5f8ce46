#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "evl/event_model.hpp"
#include "evl/sparse_grid.hpp"
#include "evl/tensor.hpp"

namespace evl {

/// Per-pixel event counts split by polarity: channel 0 counts +1 events,
/// channel 1 counts -1 events.
struct PolarityHistogram {
  int width = 0;
  int height = 0;
  std::vector<std::uint32_t> counts;  ///< [2][height][width]

  std::uint32_t at(int channel, int y, int x) const {
    return counts[(static_cast<std::size_t>(channel) * height + y) * width + x];
  }
  std::uint64_t total(int channel) const;
  std::uint64_t total() const { return total(0) + total(1); }

  friend bool operator==(const PolarityHistogram&, const PolarityHistogram&) = default;
};

inline constexpr std::uint32_t kDefaultHistogramClip = 8;

PolarityHistogram build_histogram(const EventStream& window);

/// Maps each count c to min(c, clip) / clip. Result has shape {2, H, W}.
Tensor normalize_histogram(const PolarityHistogram& h, std::uint32_t clip = kDefaultHistogramClip);

/// Active sites are the pixels where either channel of a {C, H, W} image is
/// non-zero, ordered by (y, x).
SparseGrid to_sparse_grid(const Tensor& image);

/// Inverse of to_sparse_grid: a {C, H, W} image with zeros off the sites.
Tensor densify(const SparseGrid& grid);

/// Writes one channel as binary PGM, scaled so the largest count is white.
void write_histogram_pgm(const std::filesystem::path& path, const PolarityHistogram& h, int channel);

}  // namespace evl
