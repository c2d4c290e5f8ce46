#pragma once

#include <compare>
#include <cstdint>
#include <vector>

#include "evl/tensor.hpp"

namespace evl {

struct Coord {
  int y = 0;
  int x = 0;
  friend auto operator<=>(const Coord&, const Coord&) = default;
};

/// Active-site feature map. `features` has shape {sites.size(), channels};
/// row i holds the feature vector at sites[i]. Sites are sorted by (y, x).
struct SparseGrid {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<Coord> sites;
  Tensor features;

  std::size_t size() const { return sites.size(); }
  bool empty() const { return sites.empty(); }
};

}  // namespace evl
