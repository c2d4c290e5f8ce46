#pragma once

#include <cmath>
#include <vector>

#include "evl/tensor.hpp"

namespace evl::test {

/// Anchor-by-anchor NT-Xent: rows i and i + N are positives, self excluded.
inline double nt_xent_double_loop(const Tensor& z, double temperature) {
  const std::size_t rows = z.dim(0), d = z.dim(1), n = rows / 2;
  std::vector<double> unit(z.values().begin(), z.values().end());
  for (std::size_t i = 0; i < rows; ++i) {
    double norm = 0.0;
    for (std::size_t k = 0; k < d; ++k) norm += unit[i * d + k] * unit[i * d + k];
    norm = std::sqrt(norm);
    for (std::size_t k = 0; k < d; ++k) unit[i * d + k] /= norm;
  }
  auto sim = [&](std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += unit[a * d + k] * unit[b * d + k];
    return s / temperature;
  };
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const std::size_t positive = i < n ? i + n : i - n;
    double denom = 0.0;
    for (std::size_t j = 0; j < rows; ++j)
      if (j != i) denom += std::exp(sim(i, j));
    total += -std::log(std::exp(sim(i, positive)) / denom);
  }
  return total / static_cast<double>(rows);
}

}  // namespace evl::test
