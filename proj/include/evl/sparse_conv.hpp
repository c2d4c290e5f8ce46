#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "evl/autodiff.hpp"
#include "evl/nn.hpp"
#include "evl/sparse_grid.hpp"

namespace evl {

/// Gather/scatter plan for a submanifold convolution. For kernel offset
/// index `o = ky * kernel + kx`, pairs[o] lists (input site, output site)
/// with input = output + (ky - r, kx - r), r = kernel / 2. Input and output
/// active sets coincide.
struct RuleBook {
  int kernel = 1;
  std::size_t n_sites = 0;
  std::vector<std::vector<std::pair<std::uint32_t, std::uint32_t>>> pairs;

  std::size_t pair_count() const;
};

class RuleBookMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

RuleBook build_rulebook(std::span<const Coord> sites, int kernel);
inline RuleBook build_rulebook(const SparseGrid& grid, int kernel) { return build_rulebook(grid.sites, kernel); }

/// Submanifold convolution weights: weight {k, k, Cin, Cout}, bias {Cout}.
struct SparseConvLayer {
  SparseConvLayer() = default;
  SparseConvLayer(std::uint32_t id_base, int kernel, std::size_t in_channels, std::size_t out_channels,
                  std::mt19937_64& rng);

  int kernel() const { return static_cast<int>(weight.value.dim(0)); }
  std::size_t in_channels() const { return weight.value.dim(2); }
  std::size_t out_channels() const { return weight.value.dim(3); }
  void collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&weight, &bias}); }

  Parameter weight;
  Parameter bias;
};

/// features {n_sites, Cin} -> {n_sites, Cout}; out = bias + sum over
/// rulebook pairs of in[i] * W[offset]. Recorded on the features' tape; `rb`
/// is referenced by the backward pass and must outlive it.
Var submanifold_conv(Var features, SparseConvLayer& layer, const RuleBook& rb);

/// Value-level convenience: same active set, new features.
SparseGrid submanifold_conv(const SparseGrid& grid, SparseConvLayer& layer, const RuleBook& rb);

/// Channel-wise mean over the rows of each segment [offsets[b], offsets[b+1]).
/// Returns {B, C}; an empty segment pools to zeros.
Var sparse_global_pool(Var features, std::span<const std::size_t> offsets);
Tensor sparse_global_pool(const SparseGrid& grid);

/// Several grids stacked into one site list so a batch shares a single
/// rulebook per kernel size.
struct SparseBatch {
  std::vector<std::size_t> offsets;  ///< B + 1 entries
  Tensor features;                   ///< {total_sites, C}
  RuleBook rulebook;

  std::size_t batch_size() const { return offsets.size() - 1; }
};

SparseBatch make_sparse_batch(std::span<const SparseGrid> grids, int kernel);

struct EncoderConfig {
  std::size_t in_channels = 2;
  std::size_t conv1_channels = 16;
  std::size_t conv2_channels = 32;
  int kernel = 3;
  std::size_t feature_dim = 64;
};

/// Two relu submanifold convolutions, global mean pool, fully connected
/// projection to feature_dim.
class SparseEncoder {
 public:
  SparseEncoder() = default;
  SparseEncoder(const EncoderConfig& cfg, std::uint64_t seed);

  /// `batch` must stay alive until backward has run.
  Var forward(Tape& tape, const SparseBatch& batch);
  /// Forward pass without keeping the tape; returns {B, feature_dim}.
  Tensor encode(std::span<const SparseGrid> grids);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  const EncoderConfig& config() const { return cfg_; }

 private:
  EncoderConfig cfg_;
  SparseConvLayer conv1_;
  SparseConvLayer conv2_;
  Linear fc_;
};

}  // namespace evl
