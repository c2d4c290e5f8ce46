#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "evl/autodiff.hpp"

namespace evl {

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

/// Fully connected layer y = x W + b with W of shape {in, out}.
struct Linear {
  Linear() = default;
  Linear(std::uint32_t id_base, std::size_t in, std::size_t out, std::mt19937_64& rng);

  Var forward(Tape& tape, Var x);
  std::size_t in_features() const { return weight.value.dim(0); }
  std::size_t out_features() const { return weight.value.dim(1); }
  void collect(std::vector<Parameter*>& out) { out.insert(out.end(), {&weight, &bias}); }

  Parameter weight;
  Parameter bias;
};

}  // namespace evl
