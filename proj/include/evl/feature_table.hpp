#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "evl/tensor.hpp"

namespace evl {

/// One feature vector per sample with its class label.
/// EVFT layout: "EVFT", u32 rows, u32 dim, then per row u32 label followed
/// by dim f64 values; little-endian.
struct FeatureTable {
  std::vector<std::uint32_t> labels;
  Tensor features;  ///< {rows, dim}

  std::size_t rows() const { return labels.size(); }
  std::size_t dim() const { return features.rank() == 2 ? features.dim(1) : 0; }
  std::span<const double> row(std::size_t i) const { return features.values().subspan(i * dim(), dim()); }

  /// Rows whose label is in `classes`, in original order.
  FeatureTable subset(std::span<const std::uint32_t> classes) const;

  friend bool operator==(const FeatureTable&, const FeatureTable&) = default;
};

class FeatureTableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> write_evft(const FeatureTable& table);
FeatureTable parse_evft(std::span<const std::uint8_t> bytes);
void write_evft_file(const std::filesystem::path& path, const FeatureTable& table);
FeatureTable read_evft_file(const std::filesystem::path& path);

}  // namespace evl
