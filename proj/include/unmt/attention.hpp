#pragma once

#include <optional>
#include <vector>

#include "unmt/ops.hpp"

namespace unmt {

enum class MaskDirection { Forward, Backward };

// Which (query, key) pairs inside one sequence may interact.
enum class MaskKind { None, ForwardStrict, ForwardRelaxed, BackwardStrict, BackwardRelaxed };

// Query-major positional mask: entry (q, p) is 0 when query q may attend key
// p and -inf otherwise. With the forward mask a position only looks at
// earlier positions (p < q, or p <= q when relaxed); the backward mask is the
// transpose. The textbook form indexes M_ij with i as the key and j as the
// query, so "0 iff i < j" becomes "0 iff p < q" here.
struct DirectionalMask {
  std::size_t length = 0;
  MaskDirection direction = MaskDirection::Forward;
  bool strict = true;
  Tensor matrix;

  MaskKind kind() const;
  bool allows(std::size_t query, std::size_t key) const;
};

DirectionalMask forward_mask(std::size_t n, bool strict = true);
DirectionalMask backward_mask(std::size_t n, bool strict = true);

MaskKind mask_kind(MaskDirection direction, bool strict);
bool mask_allows(MaskKind kind, std::size_t query, std::size_t key);

// softmax(Q K^T / sqrt(d_k) + mask) V for a single sequence, composed from
// primitive ops.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const DirectionalMask* mask = nullptr);

// Fused multi-head attention over packed segments. Query segment i attends
// key segment i only; `mask` is applied with positions relative to each
// segment. Masked pairs get exactly zero weight and a fully masked query row
// yields a zero context vector. If `weights` is non-null it receives the
// attention probabilities, segment by segment and head by head, each block
// stored row-major as [query x key].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Segments& query_segments,
                 const Segments& key_segments, std::size_t heads, MaskKind mask,
                 std::vector<Real>* weights = nullptr);

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  std::size_t heads = 1;

  static AttentionParams init(std::size_t width, std::size_t heads, Rng& rng);
  std::size_t width() const { return wq.dim(0); }
  std::vector<Tensor> tensors() const { return {wq, bq, wk, bk, wv, bv, wo, bo}; }
  static std::vector<const char*> tensor_names() {
    return {"wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"};
  }
};

struct LayerNormParams {
  Tensor gain, bias;
  static LayerNormParams init(std::size_t width);
  std::vector<Tensor> tensors() const { return {gain, bias}; }
};

// Residual dropout settings threaded through the sublayers.
struct DropoutContext {
  Real rate = 0;
  Mode mode = Mode::Eval;
  Rng* rng = nullptr;

  Tensor apply(const Tensor& x) const;
};

// Self-attention of a single sequence x[n x d].
Tensor multi_head(const Tensor& x, const AttentionParams& params,
                  const DirectionalMask* mask = nullptr);
// Self-attention over packed sequences.
Tensor multi_head(const Tensor& x, const Segments& segments, const AttentionParams& params,
                  MaskKind mask);
// Queries attend to a separate memory (encoder-decoder attention).
Tensor multi_head_cross(const Tensor& queries, const Segments& query_segments,
                        const Tensor& memory, const Segments& memory_segments,
                        const AttentionParams& params);

struct DirectionalBlockParams {
  AttentionParams forward;
  AttentionParams backward;
  LayerNormParams forward_norm;
  LayerNormParams backward_norm;

  static DirectionalBlockParams init(std::size_t width, std::size_t heads, Rng& rng);
};

// Forward-masked self-attention sublayer feeding a backward-masked one, each
// with residual connection and layer normalisation. `directional = false`
// drops both masks (plain self-attention with the same layout).
Tensor directional_block(const Tensor& x, const Segments& segments,
                         const DirectionalBlockParams& params, bool strict = true,
                         bool directional = true, const DropoutContext& dropout = {});

// The output of the forward sublayer alone.
Tensor forward_sublayer(const Tensor& x, const Segments& segments,
                        const DirectionalBlockParams& params, bool strict = true,
                        const DropoutContext& dropout = {});

// Sinusoidal encoding [n x d]: even columns sin(pos / 10000^(2i/d)), odd
// columns the matching cos.
Tensor positional_encoding(std::size_t n, std::size_t d);

}  // namespace unmt
