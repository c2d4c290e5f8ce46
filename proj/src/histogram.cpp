#include "evl/histogram.hpp"

#include <algorithm>
#include <fmt/format.h>

#include "evl/binary_io.hpp"

namespace evl {

std::uint64_t PolarityHistogram::total(int channel) const {
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  std::uint64_t s = 0;
  for (std::size_t i = 0; i < plane; ++i) s += counts[channel * plane + i];
  return s;
}

PolarityHistogram build_histogram(const EventStream& window) {
  PolarityHistogram h{window.width(), window.height(),
                      std::vector<std::uint32_t>(2 * static_cast<std::size_t>(window.width()) * window.height())};
  const std::size_t plane = static_cast<std::size_t>(h.width) * h.height;
  for (const auto& e : window.events()) {
    const std::size_t channel = e.polarity > 0 ? 0 : 1;
    ++h.counts[channel * plane + static_cast<std::size_t>(e.y) * h.width + e.x];
  }
  return h;
}

Tensor normalize_histogram(const PolarityHistogram& h, std::uint32_t clip) {
  if (clip < 1) throw std::invalid_argument("histogram clip must be >= 1");
  Tensor img({2, static_cast<std::size_t>(h.height), static_cast<std::size_t>(h.width)});
  const double inv = 1.0 / clip;
  for (std::size_t i = 0; i < h.counts.size(); ++i) img[i] = std::min(h.counts[i], clip) * inv;
  return img;
}

SparseGrid to_sparse_grid(const Tensor& image) {
  if (image.rank() != 3) throw ShapeMismatch("to_sparse_grid expects {C,H,W}, got " + to_string(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  SparseGrid grid;
  grid.width = static_cast<int>(w);
  grid.height = static_cast<int>(h);
  grid.channels = static_cast<int>(c);
  std::vector<double> feats;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      bool active = false;
      for (std::size_t ch = 0; ch < c; ++ch) active = active || image[(ch * h + y) * w + x] != 0.0;
      if (!active) continue;
      grid.sites.push_back({static_cast<int>(y), static_cast<int>(x)});
      for (std::size_t ch = 0; ch < c; ++ch) feats.push_back(image[(ch * h + y) * w + x]);
    }
  grid.features = Tensor({grid.sites.size(), c}, std::move(feats));
  return grid;
}

Tensor densify(const SparseGrid& grid) {
  const std::size_t c = grid.channels, h = grid.height, w = grid.width;
  Tensor img({c, h, w});
  for (std::size_t i = 0; i < grid.sites.size(); ++i) {
    const auto [y, x] = grid.sites[i];
    for (std::size_t ch = 0; ch < c; ++ch) img[(ch * h + y) * w + x] = grid.features[i * c + ch];
  }
  return img;
}

void write_histogram_pgm(const std::filesystem::path& path, const PolarityHistogram& h, int channel) {
  if (channel < 0 || channel > 1) throw std::invalid_argument("histogram channel must be 0 or 1");
  const std::size_t plane = static_cast<std::size_t>(h.width) * h.height;
  std::uint32_t peak = 1;
  for (std::size_t i = 0; i < plane; ++i) peak = std::max(peak, h.counts[channel * plane + i]);
  ByteWriter out;
  out.put_bytes(fmt::format("P5\n{} {}\n255\n", h.width, h.height));
  for (std::size_t i = 0; i < plane; ++i)
    out.put_u8(static_cast<std::uint8_t>((255ull * h.counts[channel * plane + i]) / peak));
  write_file(path, out.bytes());
}

}  // namespace evl
