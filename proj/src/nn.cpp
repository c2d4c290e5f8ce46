#include "evl/nn.hpp"

#include <cmath>

namespace evl {

Tensor uniform_init(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Linear::Linear(std::uint32_t id_base, std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(id_base, uniform_init({in, out}, in, rng)), bias(id_base + 1, uniform_init({out}, in, rng)) {}

Var Linear::forward(Tape& tape, Var x) { return add(matmul(x, tape.parameter(weight)), tape.parameter(bias)); }

}  // namespace evl
