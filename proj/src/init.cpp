#include "unmt/init.hpp"

#include <cmath>

namespace unmt {

Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  const Real bound = std::sqrt(6.0 / static_cast<Real>(rows + cols));
  std::uniform_real_distribution<Real> dist(-bound, bound);
  std::vector<Real> values(rows * cols);
  for (auto& v : values) v = dist(rng);
  return Tensor::from_values({rows, cols}, std::move(values), true);
}

Tensor zeros_param(Shape shape) { return Tensor::zeros(std::move(shape), true); }

Tensor ones_param(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

}  // namespace unmt
