#include "evl/sparse_conv.hpp"

#include <algorithm>
#include <string>
#include <unordered_map>

namespace evl {

namespace {

std::uint64_t coord_key(int y, int x) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(y)) << 32) | static_cast<std::uint32_t>(x);
}

}  // namespace

std::size_t RuleBook::pair_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += p.size();
  return n;
}

RuleBook build_rulebook(std::span<const Coord> sites, int kernel) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("rulebook kernel size must be odd and positive");
  std::unordered_map<std::uint64_t, std::uint32_t> index;
  index.reserve(sites.size() * 2);
  for (std::size_t i = 0; i < sites.size(); ++i) index.emplace(coord_key(sites[i].y, sites[i].x), static_cast<std::uint32_t>(i));

  RuleBook rb;
  rb.kernel = kernel;
  rb.n_sites = sites.size();
  rb.pairs.resize(static_cast<std::size_t>(kernel) * kernel);
  const int r = kernel / 2;
  for (int ky = 0; ky < kernel; ++ky)
    for (int kx = 0; kx < kernel; ++kx) {
      auto& list = rb.pairs[static_cast<std::size_t>(ky) * kernel + kx];
      for (std::size_t o = 0; o < sites.size(); ++o) {
        auto it = index.find(coord_key(sites[o].y + ky - r, sites[o].x + kx - r));
        if (it != index.end()) list.emplace_back(it->second, static_cast<std::uint32_t>(o));
      }
    }
  return rb;
}

SparseConvLayer::SparseConvLayer(std::uint32_t id_base, int kernel, std::size_t in_channels,
                                 std::size_t out_channels, std::mt19937_64& rng) {
  if (kernel < 1 || kernel % 2 == 0) throw std::invalid_argument("sparse conv kernel size must be odd");
  const auto k = static_cast<std::size_t>(kernel);
  const std::size_t fan_in = k * k * in_channels;
  weight = Parameter(id_base, uniform_init({k, k, in_channels, out_channels}, fan_in, rng));
  bias = Parameter(id_base + 1, uniform_init({out_channels}, fan_in, rng));
}

Var submanifold_conv(Var features, SparseConvLayer& layer, const RuleBook& rb) {
  const Shape& fs = features.shape();
  if (fs.size() != 2 || fs[1] != layer.in_channels())
    throw ShapeMismatch("submanifold_conv", fs, layer.weight.value.shape());
  if (rb.kernel != layer.kernel() || rb.n_sites != fs[0])
    throw RuleBookMismatch("rulebook built for " + std::to_string(rb.n_sites) + " sites, kernel " +
                           std::to_string(rb.kernel) + "; got " + std::to_string(fs[0]) + " sites, kernel " +
                           std::to_string(layer.kernel()));
  Tape& tape = features.tape();
  Var w = tape.parameter(layer.weight);
  Var b = tape.parameter(layer.bias);
  const std::size_t n = fs[0], cin = fs[1], cout = layer.out_channels();

  const Tensor& x = features.value();
  const Tensor& wt = w.value();
  const Tensor& bv = b.value();
  Tensor out({n, cout});
  for (std::size_t o = 0; o < n; ++o) std::copy(bv.data(), bv.data() + cout, out.data() + o * cout);
  for (std::size_t off = 0; off < rb.pairs.size(); ++off) {
    const double* wo = wt.data() + off * cin * cout;
    for (const auto& [i, o] : rb.pairs[off]) {
      const double* xi = x.data() + static_cast<std::size_t>(i) * cin;
      double* yo = out.data() + static_cast<std::size_t>(o) * cout;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double a = xi[ci];
        if (a == 0.0) continue;
        const double* wr = wo + ci * cout;
        for (std::size_t co = 0; co < cout; ++co) yo[co] += a * wr[co];
      }
    }
  }

  const std::size_t ix = features.index(), iw = w.index(), ib = b.index();
  return tape.record(std::move(out), [ix, iw, ib, &rb, n, cin, cout](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& xv = t.value(ix);
    const Tensor& wv = t.value(iw);
    Tensor& dx = t.grad(ix);
    Tensor& dw = t.grad(iw);
    Tensor& db = t.grad(ib);
    for (std::size_t o = 0; o < n; ++o)
      for (std::size_t co = 0; co < cout; ++co) db[co] += g[o * cout + co];
    for (std::size_t off = 0; off < rb.pairs.size(); ++off) {
      const double* wo = wv.data() + off * cin * cout;
      double* dwo = dw.data() + off * cin * cout;
      for (const auto& [i, o] : rb.pairs[off]) {
        const double* go = g.data() + static_cast<std::size_t>(o) * cout;
        const double* xi = xv.data() + static_cast<std::size_t>(i) * cin;
        double* dxi = dx.data() + static_cast<std::size_t>(i) * cin;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* wr = wo + ci * cout;
          double* dwr = dwo + ci * cout;
          const double a = xi[ci];
          double acc = 0.0;
          for (std::size_t co = 0; co < cout; ++co) {
            acc += wr[co] * go[co];
            dwr[co] += a * go[co];
          }
          dxi[ci] += acc;
        }
      }
    }
  });
}

SparseGrid submanifold_conv(const SparseGrid& grid, SparseConvLayer& layer, const RuleBook& rb) {
  Tape tape;
  Var out = submanifold_conv(tape.constant(grid.features), layer, rb);
  SparseGrid result;
  result.width = grid.width;
  result.height = grid.height;
  result.channels = static_cast<int>(layer.out_channels());
  result.sites = grid.sites;
  result.features = out.value();
  return result;
}

Var sparse_global_pool(Var features, std::span<const std::size_t> offsets) {
  const Shape& fs = features.shape();
  if (fs.size() != 2) throw ShapeMismatch("sparse_global_pool expects {n, C}, got " + to_string(fs));
  if (offsets.size() < 2 || offsets.back() != fs[0] || offsets.front() != 0)
    throw ShapeMismatch("sparse_global_pool: segment offsets do not cover " + std::to_string(fs[0]) + " rows");
  const std::size_t batch = offsets.size() - 1, c = fs[1];
  std::vector<std::size_t> segs(offsets.begin(), offsets.end());
  const Tensor& x = features.value();
  Tensor out({batch, c});
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t count = segs[b + 1] - segs[b];
    if (count == 0) continue;
    for (std::size_t r = segs[b]; r < segs[b + 1]; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] += x[r * c + ch];
    for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] /= static_cast<double>(count);
  }
  const std::size_t ix = features.index();
  return features.tape().record(std::move(out), [ix, segs, batch, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad(ix);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t count = segs[b + 1] - segs[b];
      if (count == 0) continue;
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t r = segs[b]; r < segs[b + 1]; ++r)
        for (std::size_t ch = 0; ch < c; ++ch) dx[r * c + ch] += g[b * c + ch] * inv;
    }
  });
}

Tensor sparse_global_pool(const SparseGrid& grid) {
  Tape tape;
  const std::size_t offsets[] = {0, grid.size()};
  Tensor features = grid.empty() ? Tensor({0, static_cast<std::size_t>(grid.channels)}) : grid.features;
  Var pooled = sparse_global_pool(tape.constant(features), offsets);
  return pooled.value().reshaped({static_cast<std::size_t>(grid.channels)});
}

SparseBatch make_sparse_batch(std::span<const SparseGrid> grids, int kernel) {
  if (grids.empty()) throw std::invalid_argument("make_sparse_batch: no grids");
  const std::size_t c = static_cast<std::size_t>(grids[0].channels);
  SparseBatch batch;
  batch.offsets.push_back(0);
  batch.rulebook.kernel = kernel;
  batch.rulebook.pairs.resize(static_cast<std::size_t>(kernel) * kernel);
  std::vector<double> feats;
  for (const auto& g : grids) {
    if (static_cast<std::size_t>(g.channels) != c) throw ShapeMismatch("make_sparse_batch: channel counts differ");
    const auto base = static_cast<std::uint32_t>(batch.offsets.back());
    RuleBook rb = build_rulebook(g, kernel);
    for (std::size_t off = 0; off < rb.pairs.size(); ++off)
      for (const auto& [i, o] : rb.pairs[off]) batch.rulebook.pairs[off].emplace_back(base + i, base + o);
    auto v = g.features.values();
    feats.insert(feats.end(), v.begin(), v.end());
    batch.offsets.push_back(batch.offsets.back() + g.size());
  }
  batch.rulebook.n_sites = batch.offsets.back();
  batch.features = Tensor({batch.offsets.back(), c}, std::move(feats));
  return batch;
}

SparseEncoder::SparseEncoder(const EncoderConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  std::mt19937_64 rng(seed);
  conv1_ = SparseConvLayer(1, cfg.kernel, cfg.in_channels, cfg.conv1_channels, rng);
  conv2_ = SparseConvLayer(3, cfg.kernel, cfg.conv1_channels, cfg.conv2_channels, rng);
  fc_ = Linear(5, cfg.conv2_channels, cfg.feature_dim, rng);
}

Var SparseEncoder::forward(Tape& tape, const SparseBatch& batch) {
  Var x = tape.constant(batch.features);
  x = relu(submanifold_conv(x, conv1_, batch.rulebook));
  x = relu(submanifold_conv(x, conv2_, batch.rulebook));
  x = sparse_global_pool(x, batch.offsets);
  return fc_.forward(tape, x);
}

Tensor SparseEncoder::encode(std::span<const SparseGrid> grids) {
  Tape tape;
  return forward(tape, make_sparse_batch(grids, cfg_.kernel)).value();
}

std::vector<Parameter*> SparseEncoder::parameters() {
  std::vector<Parameter*> out;
  conv1_.collect(out);
  conv2_.collect(out);
  fc_.collect(out);
  return out;
}

std::vector<const Parameter*> SparseEncoder::parameters() const {
  auto ps = const_cast<SparseEncoder*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

}  // namespace evl
