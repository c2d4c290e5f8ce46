#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "evl/autodiff.hpp"

namespace evl {

void zero_grads(std::span<Parameter* const> params);

/// theta <- theta - lr * grad
void sgd_step(std::span<Parameter* const> params, double lr);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are keyed by position in the
/// parameter list given at construction.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig cfg = {});

  void step();
  void zero_grad() { zero_grads(params_); }

  std::uint64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }
  std::span<Parameter* const> params() const { return params_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  AdamConfig cfg_;
  std::uint64_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// EVCK checkpoints: "EVCK", then per parameter u32 id, u32 rank,
// u32 extents[rank], f64 values; little-endian.
// ---------------------------------------------------------------------------

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> save_parameters(std::span<const Parameter* const> params);
/// Loads values into `params`, matched by id; shapes must agree and every
/// parameter must be present.
void load_parameters(std::span<const std::uint8_t> bytes, std::span<Parameter* const> params);

void save_checkpoint(const std::filesystem::path& path, std::span<const Parameter* const> params);
void load_checkpoint(const std::filesystem::path& path, std::span<Parameter* const> params);

}  // namespace evl
