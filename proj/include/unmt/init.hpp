#pragma once

#include "unmt/ops.hpp"

namespace unmt {

// Glorot-uniform trainable matrix.
Tensor xavier_uniform(std::size_t rows, std::size_t cols, Rng& rng);
Tensor zeros_param(Shape shape);
Tensor ones_param(Shape shape);

}  // namespace unmt
