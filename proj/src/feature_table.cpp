#include "evl/feature_table.hpp"

#include <algorithm>

#include "evl/binary_io.hpp"

namespace evl {

namespace {
constexpr std::string_view kMagic = "EVFT";
}

FeatureTable FeatureTable::subset(std::span<const std::uint32_t> classes) const {
  FeatureTable out;
  std::vector<double> values;
  for (std::size_t i = 0; i < rows(); ++i) {
    if (std::find(classes.begin(), classes.end(), labels[i]) == classes.end()) continue;
    out.labels.push_back(labels[i]);
    auto r = row(i);
    values.insert(values.end(), r.begin(), r.end());
  }
  out.features = Tensor({out.labels.size(), dim()}, std::move(values));
  return out;
}

std::vector<std::uint8_t> write_evft(const FeatureTable& table) {
  ByteWriter out;
  out.put_bytes(kMagic);
  out.put_u32(static_cast<std::uint32_t>(table.rows()));
  out.put_u32(static_cast<std::uint32_t>(table.dim()));
  for (std::size_t i = 0; i < table.rows(); ++i) {
    out.put_u32(table.labels[i]);
    for (double v : table.row(i)) out.put_f64(v);
  }
  return out.take();
}

FeatureTable parse_evft(std::span<const std::uint8_t> bytes) {
  ByteReader in(bytes);
  try {
    if (in.get_bytes(kMagic.size()) != kMagic) throw FeatureTableError("EVFT: bad magic at byte offset 0");
    const std::uint32_t rows = in.get_u32();
    const std::uint32_t dim = in.get_u32();
    if (in.remaining() != static_cast<std::size_t>(rows) * (4 + 8 * static_cast<std::size_t>(dim)))
      throw FeatureTableError("EVFT: payload size does not match " + std::to_string(rows) + " rows x " +
                              std::to_string(dim) + " dims");
    FeatureTable t;
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(rows) * dim);
    for (std::uint32_t r = 0; r < rows; ++r) {
      t.labels.push_back(in.get_u32());
      for (std::uint32_t d = 0; d < dim; ++d) values.push_back(in.get_f64());
    }
    t.features = Tensor({rows, dim}, std::move(values));
    return t;
  } catch (const TruncatedInput& e) {
    throw FeatureTableError(std::string("EVFT: ") + e.what());
  }
}

void write_evft_file(const std::filesystem::path& path, const FeatureTable& table) {
  write_file(path, write_evft(table));
}

FeatureTable read_evft_file(const std::filesystem::path& path) { return parse_evft(read_file(path)); }

}  // namespace evl
