#pragma once

#include <random>

#include "evl/autodiff.hpp"
#include "evl/histogram.hpp"
#include "evl/sparse_conv.hpp"

namespace evl::test {

/// Random grid; every stored vector has at least one non-zero channel.
inline SparseGrid random_grid(std::mt19937_64& rng, int width, int height, int channels, double density) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  SparseGrid g{width, height, channels, {}, Tensor()};
  std::vector<double> feats;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      if (u(rng) >= density) continue;
      g.sites.push_back({y, x});
      for (int c = 0; c < channels; ++c) feats.push_back(c == 0 ? 0.1 + u(rng) : val(rng));
    }
  g.features = Tensor({g.sites.size(), static_cast<std::size_t>(channels)}, std::move(feats));
  return g;
}

/// Dense zero-padded convolution of the densified grid, read back at the
/// active sites. Returns {n_sites, Cout}.
inline Tensor dense_conv_at_sites(const SparseGrid& grid, const SparseConvLayer& layer) {
  const std::size_t k = static_cast<std::size_t>(layer.kernel());
  const std::size_t cin = layer.weight.value.dim(2), cout = layer.weight.value.dim(3);
  Tensor wd({cout, cin, k, k});
  for (std::size_t ky = 0; ky < k; ++ky)
    for (std::size_t kx = 0; kx < k; ++kx)
      for (std::size_t ci = 0; ci < cin; ++ci)
        for (std::size_t co = 0; co < cout; ++co)
          wd[((co * cin + ci) * k + ky) * k + kx] = layer.weight.value[((ky * k + kx) * cin + ci) * cout + co];

  const std::size_t h = static_cast<std::size_t>(grid.height), w = static_cast<std::size_t>(grid.width);
  Tensor dense({1, cin, h, w});
  for (std::size_t i = 0; i < grid.sites.size(); ++i)
    for (std::size_t c = 0; c < cin; ++c)
      dense[(c * h + static_cast<std::size_t>(grid.sites[i].y)) * w + static_cast<std::size_t>(grid.sites[i].x)] =
          grid.features.at(i, c);

  Tape tape;
  const Tensor out =
      conv2d_dense(tape.constant(dense), tape.constant(wd), tape.constant(layer.bias.value), 1, k / 2).value();
  Tensor at_sites({grid.sites.size(), cout});
  for (std::size_t i = 0; i < grid.sites.size(); ++i)
    for (std::size_t c = 0; c < cout; ++c)
      at_sites.at(i, c) =
          out[(c * h + static_cast<std::size_t>(grid.sites[i].y)) * w + static_cast<std::size_t>(grid.sites[i].x)];
  return at_sites;
}

}  // namespace evl::test
