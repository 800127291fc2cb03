#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "unmt/tensor.hpp"

namespace unmt {

using Rng = std::mt19937_64;

enum class Mode { Train, Eval };

// Packed variable-length sequences: row ranges of a [total x width] matrix.
struct Segments {
  std::vector<std::size_t> offsets;
  std::vector<std::size_t> lengths;

  static Segments from_lengths(std::span<const std::size_t> lengths);
  static Segments uniform(std::size_t count, std::size_t length);
  std::size_t count() const { return lengths.size(); }
  std::size_t total() const;
  std::size_t max_length() const;
};

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x[N x in] * w[in x out] + b[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a[N x d] + row[d] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, Real factor);
Tensor add_scalar(const Tensor& a, Real value);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// Softmax over the last dimension. A row whose entries are all -inf maps to
// an all-zero row so fully masked attention rows stay finite.
Tensor softmax_lastdim(const Tensor& t);
Tensor log_softmax_lastdim(const Tensor& t);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = 1e-6);

struct BatchNormState {
  std::vector<Real> running_mean;
  std::vector<Real> running_var;
  Real momentum = 0.1;
  Real eps = 1e-5;
  std::size_t updates = 0;

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
};

// Normalises each column over the rows (the batch axis). Train mode uses
// batch statistics and updates the running ones; eval mode uses the latter.
Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormState& state,
                  Mode mode);

// Inverted dropout; identity in eval mode or when rate is 0.
Tensor dropout(const Tensor& x, Real rate, Rng& rng, Mode mode);

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);
// Sum of a[i] * weights[i] with constant weights.
Tensor weighted_sum(const Tensor& a, std::span<const Real> weights);

// Mean token-level cross-entropy of logits[N x V] against class ids.
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);
// out[i] = t[i, index[i]], shape [N].
Tensor pick(const Tensor& t, std::span<const int> index);
// out[i] = table[ids[i], :].
Tensor rows_gather(const Tensor& table, std::span<const int> ids);

// Row-segment reductions of x[total x d] -> [count x d].
Tensor segment_sum(const Tensor& x, const Segments& segments);
Tensor segment_mean(const Tensor& x, const Segments& segments);
Tensor segment_max(const Tensor& x, const Segments& segments);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);

// x holds `count` blocks of `length` rows; each block yields length-window+1
// rows, every row the concatenation of `window` consecutive input rows.
Tensor unfold_windows(const Tensor& x, std::size_t length, std::size_t window);

}  // namespace unmt
