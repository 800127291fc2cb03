#include "unmt/attention.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <memory>

#include "unmt/errors.hpp"
#include "unmt/init.hpp"

namespace unmt {
namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();

Eigen::Index idx(std::size_t v) { return static_cast<Eigen::Index>(v); }

}  // namespace

MaskKind mask_kind(MaskDirection direction, bool strict) {
  if (direction == MaskDirection::Forward) {
    return strict ? MaskKind::ForwardStrict : MaskKind::ForwardRelaxed;
  }
  return strict ? MaskKind::BackwardStrict : MaskKind::BackwardRelaxed;
}

bool mask_allows(MaskKind kind, std::size_t query, std::size_t key) {
  switch (kind) {
    case MaskKind::None:
      return true;
    case MaskKind::ForwardStrict:
      return key < query;
    case MaskKind::ForwardRelaxed:
      return key <= query;
    case MaskKind::BackwardStrict:
      return key > query;
    case MaskKind::BackwardRelaxed:
      return key >= query;
  }
  return false;
}

MaskKind DirectionalMask::kind() const { return mask_kind(direction, strict); }

bool DirectionalMask::allows(std::size_t query, std::size_t key) const {
  return mask_allows(kind(), query, key);
}

namespace {

DirectionalMask make_mask(std::size_t n, MaskDirection direction, bool strict) {
  if (n == 0) throw DimensionError("positional mask needs length >= 1");
  DirectionalMask mask{n, direction, strict, {}};
  Buffer values(n * n);
  const MaskKind kind = mask.kind();
  for (std::size_t q = 0; q < n; ++q)
    for (std::size_t p = 0; p < n; ++p) values[q * n + p] = mask_allows(kind, q, p) ? 0.0 : kNegInf;
  mask.matrix = Tensor::from_buffer({n, n}, std::move(values));
  return mask;
}

}  // namespace

DirectionalMask forward_mask(std::size_t n, bool strict) {
  return make_mask(n, MaskDirection::Forward, strict);
}

DirectionalMask backward_mask(std::size_t n, bool strict) {
  return make_mask(n, MaskDirection::Backward, strict);
}

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const DirectionalMask* mask) {
  if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) {
    throw DimensionError("scaled_dot_attention expects matrices");
  }
  if (q.cols() != k.cols()) throw DimensionError("scaled_dot_attention: query/key widths differ");
  if (k.rows() != v.rows()) throw DimensionError("scaled_dot_attention: key/value lengths differ");
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<Real>(q.cols())));
  if (mask) {
    if (mask->length != q.rows() || mask->length != k.rows()) {
      throw DimensionError("scaled_dot_attention: mask length does not match the sequence");
    }
    scores = add(scores, mask->matrix);
  }
  return matmul(softmax_lastdim(scores), v);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Segments& query_segments,
                 const Segments& key_segments, std::size_t heads, MaskKind mask,
                 std::vector<Real>* weights) {
  const std::size_t d = q.cols();
  if (k.cols() != d || v.cols() != d) throw DimensionError("attention: widths differ");
  if (heads == 0 || d % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (query_segments.count() != key_segments.count()) {
    throw DimensionError("attention: query and key segment counts differ");
  }
  if (k.rows() != v.rows()) throw DimensionError("attention: key/value row counts differ");
  for (std::size_t s = 0; s < query_segments.count(); ++s) {
    if (query_segments.offsets[s] + query_segments.lengths[s] > q.rows() ||
        key_segments.offsets[s] + key_segments.lengths[s] > k.rows()) {
      throw DimensionError("attention: segments exceed the packed rows");
    }
  }
  const std::size_t dk = d / heads;
  const Real factor = 1.0 / std::sqrt(static_cast<Real>(dk));
  const std::size_t nq = q.rows(), nk = k.rows();

  // Probability blocks, one per (segment, head).
  auto probs = std::make_shared<Buffer>();
  std::vector<std::size_t> block_offsets;
  {
    std::size_t total = 0;
    for (std::size_t s = 0; s < query_segments.count(); ++s) {
      block_offsets.push_back(total);
      total += heads * query_segments.lengths[s] * key_segments.lengths[s];
    }
    probs->assign(total, 0.0);
  }

  ConstMatMap qm(q.values().data(), idx(nq), idx(d));
  ConstMatMap km(k.values().data(), idx(nk), idx(d));
  ConstMatMap vm(v.values().data(), idx(nk), idx(d));
  Buffer out(nq * d, 0.0);
  MatMap om(out.data(), idx(nq), idx(d));

  for (std::size_t s = 0; s < query_segments.count(); ++s) {
    const std::size_t qo = query_segments.offsets[s], ql = query_segments.lengths[s];
    const std::size_t ko = key_segments.offsets[s], kl = key_segments.lengths[s];
    if (ql == 0 || kl == 0) continue;
    for (std::size_t h = 0; h < heads; ++h) {
      MatMap p(probs->data() + block_offsets[s] + h * ql * kl, idx(ql), idx(kl));
      p.noalias() = qm.block(idx(qo), idx(h * dk), idx(ql), idx(dk)) *
                    km.block(idx(ko), idx(h * dk), idx(kl), idx(dk)).transpose();
      for (std::size_t i = 0; i < ql; ++i) {
        Real mx = kNegInf;
        for (std::size_t j = 0; j < kl; ++j) {
          if (mask_allows(mask, i, j)) {
            p(idx(i), idx(j)) *= factor;
            mx = std::max(mx, p(idx(i), idx(j)));
          }
        }
        if (mx == kNegInf) {
          p.row(idx(i)).setZero();
          continue;
        }
        Real z = 0;
        for (std::size_t j = 0; j < kl; ++j) {
          Real& e = p(idx(i), idx(j));
          e = mask_allows(mask, i, j) ? std::exp(e - mx) : 0.0;
          z += e;
        }
        p.row(idx(i)) /= z;
      }
      om.block(idx(qo), idx(h * dk), idx(ql), idx(dk)).noalias() =
          p * vm.block(idx(ko), idx(h * dk), idx(kl), idx(dk));
    }
  }
  if (weights) weights->assign(probs->begin(), probs->end());

  return Tensor::make_result(
      {nq, d}, std::move(out), {q, k, v},
      [probs, block_offsets, query_segments, key_segments, heads, dk, d, nq, nk,
       factor](Node& self) {
        auto gq = self.parents[0]->requires_grad ? self.parents[0]->grad_buffer() : std::span<Real>{};
        auto gk = self.parents[1]->requires_grad ? self.parents[1]->grad_buffer() : std::span<Real>{};
        auto gv = self.parents[2]->requires_grad ? self.parents[2]->grad_buffer() : std::span<Real>{};
        ConstMatMap qm(self.parents[0]->data->data(), idx(nq), idx(d));
        ConstMatMap km(self.parents[1]->data->data(), idx(nk), idx(d));
        ConstMatMap vm(self.parents[2]->data->data(), idx(nk), idx(d));
        ConstMatMap dout(self.grad.data(), idx(nq), idx(d));
        RowMat dp, ds;
        for (std::size_t s = 0; s < query_segments.count(); ++s) {
          const std::size_t qo = query_segments.offsets[s], ql = query_segments.lengths[s];
          const std::size_t ko = key_segments.offsets[s], kl = key_segments.lengths[s];
          if (ql == 0 || kl == 0) continue;
          for (std::size_t h = 0; h < heads; ++h) {
            ConstMatMap p(probs->data() + block_offsets[s] + h * ql * kl, idx(ql), idx(kl));
            auto d_o = dout.block(idx(qo), idx(h * dk), idx(ql), idx(dk));
            if (!gv.empty()) {
              MatMap(gv.data(), idx(nk), idx(d)).block(idx(ko), idx(h * dk), idx(kl), idx(dk)).noalias() +=
                  p.transpose() * d_o;
            }
            if (gq.empty() && gk.empty()) continue;
            dp.noalias() = d_o * vm.block(idx(ko), idx(h * dk), idx(kl), idx(dk)).transpose();
            ds = p.cwiseProduct(dp);
            Eigen::Matrix<Real, Eigen::Dynamic, 1> row_dot = ds.rowwise().sum();
            ds -= p.cwiseProduct(row_dot.replicate(1, idx(kl)));
            ds *= factor;
            if (!gq.empty()) {
              MatMap(gq.data(), idx(nq), idx(d)).block(idx(qo), idx(h * dk), idx(ql), idx(dk)).noalias() +=
                  ds * km.block(idx(ko), idx(h * dk), idx(kl), idx(dk));
            }
            if (!gk.empty()) {
              MatMap(gk.data(), idx(nk), idx(d)).block(idx(ko), idx(h * dk), idx(kl), idx(dk)).noalias() +=
                  ds.transpose() * qm.block(idx(qo), idx(h * dk), idx(ql), idx(dk));
            }
          }
        }
      });
}

AttentionParams AttentionParams::init(std::size_t width, std::size_t heads, Rng& rng) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("model width " + std::to_string(width) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  AttentionParams p;
  p.heads = heads;
  p.wq = xavier_uniform(width, width, rng);
  p.bq = zeros_param({width});
  p.wk = xavier_uniform(width, width, rng);
  p.bk = zeros_param({width});
  p.wv = xavier_uniform(width, width, rng);
  p.bv = zeros_param({width});
  p.wo = xavier_uniform(width, width, rng);
  p.bo = zeros_param({width});
  return p;
}

LayerNormParams LayerNormParams::init(std::size_t width) {
  return {ones_param({width}), zeros_param({width})};
}

Tensor DropoutContext::apply(const Tensor& x) const {
  if (mode == Mode::Eval || rate <= 0) return x;
  if (!rng) throw ContractError("dropout in train mode needs a random source");
  return dropout(x, rate, *rng, mode);
}

namespace {

void check_params(const Tensor& x, const AttentionParams& params) {
  if (x.cols() != params.width()) {
    throw DimensionError("attention input width " + std::to_string(x.cols()) +
                         " does not match model width " + std::to_string(params.width()));
  }
  if (params.heads == 0 || params.width() % params.heads != 0) {
    throw ConfigError("attention width not divisible by head count");
  }
}

}  // namespace

Tensor multi_head(const Tensor& x, const Segments& segments, const AttentionParams& params,
                  MaskKind mask) {
  check_params(x, params);
  Tensor q = linear(x, params.wq, params.bq);
  Tensor k = linear(x, params.wk, params.bk);
  Tensor v = linear(x, params.wv, params.bv);
  Tensor ctx = attention(q, k, v, segments, segments, params.heads, mask);
  return linear(ctx, params.wo, params.bo);
}

Tensor multi_head(const Tensor& x, const AttentionParams& params, const DirectionalMask* mask) {
  if (mask && mask->length != x.rows()) {
    throw DimensionError("mask length does not match the sequence");
  }
  const Segments single = Segments::uniform(1, x.rows());
  return multi_head(x, single, params, mask ? mask->kind() : MaskKind::None);
}

Tensor multi_head_cross(const Tensor& queries, const Segments& query_segments,
                        const Tensor& memory, const Segments& memory_segments,
                        const AttentionParams& params) {
  check_params(queries, params);
  check_params(memory, params);
  Tensor q = linear(queries, params.wq, params.bq);
  Tensor k = linear(memory, params.wk, params.bk);
  Tensor v = linear(memory, params.wv, params.bv);
  Tensor ctx = attention(q, k, v, query_segments, memory_segments, params.heads, MaskKind::None);
  return linear(ctx, params.wo, params.bo);
}

DirectionalBlockParams DirectionalBlockParams::init(std::size_t width, std::size_t heads, Rng& rng) {
  DirectionalBlockParams p;
  p.forward = AttentionParams::init(width, heads, rng);
  p.backward = AttentionParams::init(width, heads, rng);
  p.forward_norm = LayerNormParams::init(width);
  p.backward_norm = LayerNormParams::init(width);
  return p;
}

Tensor forward_sublayer(const Tensor& x, const Segments& segments,
                        const DirectionalBlockParams& params, bool strict,
                        const DropoutContext& dropout) {
  Tensor a = multi_head(x, segments, params.forward, mask_kind(MaskDirection::Forward, strict));
  return layer_norm(add(x, dropout.apply(a)), params.forward_norm.gain, params.forward_norm.bias);
}

Tensor directional_block(const Tensor& x, const Segments& segments,
                         const DirectionalBlockParams& params, bool strict, bool directional,
                         const DropoutContext& dropout) {
  const MaskKind fwd = directional ? mask_kind(MaskDirection::Forward, strict) : MaskKind::None;
  const MaskKind bwd = directional ? mask_kind(MaskDirection::Backward, strict) : MaskKind::None;
  Tensor a = multi_head(x, segments, params.forward, fwd);
  Tensor h = layer_norm(add(x, dropout.apply(a)), params.forward_norm.gain,
                        params.forward_norm.bias);
  Tensor b = multi_head(h, segments, params.backward, bwd);
  return layer_norm(add(h, dropout.apply(b)), params.backward_norm.gain,
                    params.backward_norm.bias);
}

Tensor positional_encoding(std::size_t n, std::size_t d) {
  if (d % 2 != 0) throw ConfigError("positional encoding needs an even width, got " + std::to_string(d));
  Buffer values(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; i += 2) {
      const Real angle =
          static_cast<Real>(pos) / std::pow(10000.0, static_cast<Real>(i) / static_cast<Real>(d));
      values[pos * d + i] = std::sin(angle);
      values[pos * d + i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_buffer({n, d}, std::move(values));
}

}  // namespace unmt
