#include "unmt/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "unmt/errors.hpp"

namespace unmt {
namespace {

using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

constexpr Real kNegInf = -std::numeric_limits<Real>::infinity();

ConstMatMap as_matrix(std::span<const Real> v, std::size_t rows, std::size_t cols) {
  return ConstMatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MatMap as_matrix(std::span<Real> v, std::size_t rows, std::size_t cols) {
  return MatMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Gradient buffer of the i-th parent, or an empty span when it needs none.
std::span<Real> parent_grad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  if (!p->requires_grad) return {};
  return p->grad_buffer();
}

std::span<const Real> parent_values(const Node& self, std::size_t i) {
  return *self.parents[i]->data;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

template <class Forward, class Derivative>
Tensor unary(const Tensor& a, Forward f, Derivative df) {
  auto in = a.values();
  Buffer out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a}, [df](Node& self) {
    auto g = parent_grad(self, 0);
    auto x = parent_values(self, 0);
    const auto& y = *self.data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(x[i], y[i]);
  });
}

void check_finite_input(std::span<const Real> v, const char* op) {
  for (Real x : v) {
    if (std::isnan(x)) throw NumericError(std::string(op) + ": NaN input");
  }
}

void check_segments(const Segments& s, std::size_t rows, const char* op) {
  if (s.offsets.size() != s.lengths.size()) {
    throw DimensionError(std::string(op) + ": malformed segments");
  }
  for (std::size_t i = 0; i < s.count(); ++i) {
    if (s.offsets[i] + s.lengths[i] > rows) {
      throw DimensionError(std::string(op) + ": segment exceeds " + std::to_string(rows) + " rows");
    }
  }
}

}  // namespace

Segments Segments::from_lengths(std::span<const std::size_t> lengths) {
  Segments s;
  s.lengths.assign(lengths.begin(), lengths.end());
  s.offsets.resize(lengths.size());
  std::size_t offset = 0;
  for (std::size_t i = 0; i < lengths.size(); ++i) {
    s.offsets[i] = offset;
    offset += lengths[i];
  }
  return s;
}

Segments Segments::uniform(std::size_t count, std::size_t length) {
  std::vector<std::size_t> lengths(count, length);
  return from_lengths(lengths);
}

std::size_t Segments::total() const {
  return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
}

std::size_t Segments::max_length() const {
  return lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  Buffer out(m * n);
  as_matrix(std::span<Real>(out), m, n).noalias() =
      as_matrix(a.values(), m, k) * as_matrix(b.values(), k, n);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& self) {
    auto dc = as_matrix(std::span<const Real>(self.grad), m, n);
    if (auto ga = parent_grad(self, 0); !ga.empty()) {
      as_matrix(ga, m, k).noalias() += dc * as_matrix(parent_values(self, 1), k, n).transpose();
    }
    if (auto gb = parent_grad(self, 1); !gb.empty()) {
      as_matrix(gb, k, n).noalias() += as_matrix(parent_values(self, 0), m, k).transpose() * dc;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Buffer out(r * c);
  as_matrix(std::span<Real>(out), c, r) = as_matrix(a.values(), r, c).transpose();
  return Tensor::make_result({c, r}, std::move(out), {a}, [r, c](Node& self) {
    auto g = parent_grad(self, 0);
    as_matrix(g, r, c) += as_matrix(std::span<const Real>(self.grad), c, r).transpose();
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(1);
  if (w.dim(0) != in) {
    throw DimensionError("linear: input width " + std::to_string(in) + " vs weight " +
                         shape_string(w.shape()));
  }
  const bool has_bias = b.defined();
  if (has_bias && b.numel() != out_dim) {
    throw DimensionError("linear: bias " + shape_string(b.shape()) + " for width " +
                         std::to_string(out_dim));
  }
  Buffer out(n * out_dim);
  auto y = as_matrix(std::span<Real>(out), n, out_dim);
  y.noalias() = as_matrix(x.values(), n, in) * as_matrix(w.values(), in, out_dim);
  if (has_bias) y.rowwise() += as_matrix(b.values(), 1, out_dim).row(0);
  std::vector<Tensor> parents{x, w};
  if (has_bias) parents.push_back(b);
  return Tensor::make_result(
      {n, out_dim}, std::move(out), std::move(parents), [n, in, out_dim, has_bias](Node& self) {
        auto dy = as_matrix(std::span<const Real>(self.grad), n, out_dim);
        if (auto gx = parent_grad(self, 0); !gx.empty()) {
          as_matrix(gx, n, in).noalias() +=
              dy * as_matrix(parent_values(self, 1), in, out_dim).transpose();
        }
        if (auto gw = parent_grad(self, 1); !gw.empty()) {
          as_matrix(gw, in, out_dim).noalias() +=
              as_matrix(parent_values(self, 0), n, in).transpose() * dy;
        }
        if (has_bias) {
          if (auto gb = parent_grad(self, 2); !gb.empty()) {
            as_matrix(gb, 1, out_dim) += dy.colwise().sum();
          }
        }
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto x = a.values(), y = b.values();
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      auto g = parent_grad(self, p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto x = a.values(), y = b.values();
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto x = a.values(), y = b.values();
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
    auto xa = parent_values(self, 0), xb = parent_values(self, 1);
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * xb[i];
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * xa[i];
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  const std::size_t n = a.rows(), d = a.cols();
  if (row.numel() != d) {
    throw DimensionError("add_row: row " + shape_string(row.shape()) + " vs " +
                         shape_string(a.shape()));
  }
  auto x = a.values(), r = row.values();
  Buffer out(x.size());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] + r[j];
  return Tensor::make_result(a.shape(), std::move(out), {a, row}, [n, d](Node& self) {
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    auto gr = parent_grad(self, 1);
    if (!gr.empty()) {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gr[j] += self.grad[i * d + j];
    }
  });
}

Tensor scale(const Tensor& a, Real factor) {
  return unary(
      a, [factor](Real x) { return x * factor; }, [factor](Real, Real) { return factor; });
}

Tensor add_scalar(const Tensor& a, Real value) {
  return unary(
      a, [value](Real x) { return x + value; }, [](Real, Real) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary(
      a, [](Real x) { return x > 0 ? x : 0.0; }, [](Real x, Real) { return x > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a,
      [](Real x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const Real e = std::exp(x);
        return e / (1.0 + e);
      },
      [](Real, Real y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](Real x) { return std::tanh(x); }, [](Real, Real y) { return 1.0 - y * y; });
}

Tensor exp(const Tensor& a) {
  return unary(
      a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, [](Real x) { return std::log(x); }, [](Real x, Real) { return 1.0 / x; });
}

Tensor softmax_lastdim(const Tensor& t) {
  const std::size_t n = t.rows(), d = t.cols();
  if (d == 0) throw DimensionError("softmax over an empty dimension");
  auto x = t.values();
  check_finite_input(x, "softmax");
  Buffer out(x.size(), 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = x.data() + i * d;
    Real* o = out.data() + i * d;
    const Real mx = *std::max_element(row, row + d);
    if (mx == kNegInf) continue;  // fully masked row stays zero
    Real z = 0;
    for (std::size_t j = 0; j < d; ++j) z += (o[j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < d; ++j) o[j] /= z;
  }
  return Tensor::make_result(t.shape(), std::move(out), {t}, [n, d](Node& self) {
    auto g = parent_grad(self, 0);
    const auto& y = *self.data;
    for (std::size_t i = 0; i < n; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < d; ++j) dot += self.grad[i * d + j] * y[i * d + j];
      for (std::size_t j = 0; j < d; ++j)
        g[i * d + j] += y[i * d + j] * (self.grad[i * d + j] - dot);
    }
  });
}

Tensor log_softmax_lastdim(const Tensor& t) {
  const std::size_t n = t.rows(), d = t.cols();
  if (d == 0) throw DimensionError("log_softmax over an empty dimension");
  auto x = t.values();
  check_finite_input(x, "log_softmax");
  Buffer out(x.size(), kNegInf);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = x.data() + i * d;
    Real* o = out.data() + i * d;
    const Real mx = *std::max_element(row, row + d);
    if (mx == kNegInf) continue;
    Real z = 0;
    for (std::size_t j = 0; j < d; ++j) z += std::exp(row[j] - mx);
    const Real lse = mx + std::log(z);
    for (std::size_t j = 0; j < d; ++j) o[j] = row[j] - lse;
  }
  return Tensor::make_result(t.shape(), std::move(out), {t}, [n, d](Node& self) {
    auto g = parent_grad(self, 0);
    const auto& y = *self.data;
    for (std::size_t i = 0; i < n; ++i) {
      if (y[i * d] == kNegInf && std::all_of(y.begin() + i * d, y.begin() + (i + 1) * d,
                                             [](Real v) { return v == kNegInf; })) {
        continue;
      }
      Real total = 0;
      for (std::size_t j = 0; j < d; ++j) total += self.grad[i * d + j];
      for (std::size_t j = 0; j < d; ++j)
        g[i * d + j] += self.grad[i * d + j] - std::exp(y[i * d + j]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
  const std::size_t n = x.rows(), d = x.cols();
  if (d == 0) throw DimensionError("layer_norm over an empty dimension");
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm: gain/bias do not match width " + std::to_string(d));
  }
  auto in = x.values(), g = gain.values(), b = bias.values();
  Buffer out(in.size());
  // Normalised values and inverse deviations are kept for the backward pass.
  auto xhat = std::make_shared<Buffer>(in.size());
  auto inv_std = std::make_shared<Buffer>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real* row = in.data() + i * d;
    Real mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<Real>(d);
    Real var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Real>(d);
    const Real inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[i] = inv;
    for (std::size_t j = 0; j < d; ++j) {
      const Real h = (row[j] - mu) * inv;
      (*xhat)[i * d + j] = h;
      out[i * d + j] = h * g[j] + b[j];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias}, [n, d, xhat, inv_std](Node& self) {
        auto gx = parent_grad(self, 0);
        auto ggain = parent_grad(self, 1);
        auto gbias = parent_grad(self, 2);
        auto gv = parent_values(self, 1);
        Buffer dxhat(d);
        for (std::size_t i = 0; i < n; ++i) {
          const Real* dy = self.grad.data() + i * d;
          const Real* h = xhat->data() + i * d;
          if (!ggain.empty())
            for (std::size_t j = 0; j < d; ++j) ggain[j] += dy[j] * h[j];
          if (!gbias.empty())
            for (std::size_t j = 0; j < d; ++j) gbias[j] += dy[j];
          if (gx.empty()) continue;
          Real sum_dxhat = 0, sum_dxhat_h = 0;
          for (std::size_t j = 0; j < d; ++j) {
            dxhat[j] = dy[j] * gv[j];
            sum_dxhat += dxhat[j];
            sum_dxhat_h += dxhat[j] * h[j];
          }
          const Real inv = (*inv_std)[i];
          const Real dn = static_cast<Real>(d);
          for (std::size_t j = 0; j < d; ++j) {
            gx[i * d + j] += inv / dn * (dn * dxhat[j] - sum_dxhat - h[j] * sum_dxhat_h);
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, BatchNormState& state,
                  Mode mode) {
  const std::size_t n = x.rows(), c = x.cols();
  if (gain.numel() != c || bias.numel() != c) {
    throw DimensionError("batch_norm: gain/bias do not match " + std::to_string(c) + " channels");
  }
  if (state.running_mean.size() != c) {
    throw DimensionError("batch_norm: running statistics hold " +
                         std::to_string(state.running_mean.size()) + " channels, input has " +
                         std::to_string(c));
  }
  auto in = x.values(), g = gain.values(), b = bias.values();
  Buffer out(in.size());
  auto xhat = std::make_shared<Buffer>(in.size());
  auto inv_std = std::make_shared<Buffer>(c);

  if (mode == Mode::Eval) {
    for (std::size_t j = 0; j < c; ++j)
      (*inv_std)[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const Real h = (in[i * c + j] - state.running_mean[j]) * (*inv_std)[j];
        (*xhat)[i * c + j] = h;
        out[i * c + j] = h * g[j] + b[j];
      }
    return Tensor::make_result(
        x.shape(), std::move(out), {x, gain, bias}, [n, c, xhat, inv_std](Node& self) {
          auto gx = parent_grad(self, 0);
          auto ggain = parent_grad(self, 1);
          auto gbias = parent_grad(self, 2);
          auto gv = parent_values(self, 1);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
              const Real dy = self.grad[i * c + j];
              if (!gx.empty()) gx[i * c + j] += dy * gv[j] * (*inv_std)[j];
              if (!ggain.empty()) ggain[j] += dy * (*xhat)[i * c + j];
              if (!gbias.empty()) gbias[j] += dy;
            }
        });
  }

  if (n < 2) throw DimensionError("batch_norm: degenerate batch of " + std::to_string(n) + " row");
  Buffer mu(c, 0.0), var(c, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) mu[j] += in[i * c + j];
  for (auto& m : mu) m /= static_cast<Real>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const Real dv = in[i * c + j] - mu[j];
      var[j] += dv * dv;
    }
  for (auto& v : var) v /= static_cast<Real>(n);
  for (std::size_t j = 0; j < c; ++j) {
    (*inv_std)[j] = 1.0 / std::sqrt(var[j] + state.eps);
    // Running variance tracks the unbiased estimate.
    const Real unbiased = var[j] * static_cast<Real>(n) / static_cast<Real>(n - 1);
    state.running_mean[j] = (1 - state.momentum) * state.running_mean[j] + state.momentum * mu[j];
    state.running_var[j] = (1 - state.momentum) * state.running_var[j] + state.momentum * unbiased;
  }
  ++state.updates;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const Real h = (in[i * c + j] - mu[j]) * (*inv_std)[j];
      (*xhat)[i * c + j] = h;
      out[i * c + j] = h * g[j] + b[j];
    }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gain, bias}, [n, c, xhat, inv_std](Node& self) {
        auto gx = parent_grad(self, 0);
        auto ggain = parent_grad(self, 1);
        auto gbias = parent_grad(self, 2);
        auto gv = parent_values(self, 1);
        const Real dn = static_cast<Real>(n);
        for (std::size_t j = 0; j < c; ++j) {
          Real sum_dxhat = 0, sum_dxhat_h = 0;
          for (std::size_t i = 0; i < n; ++i) {
            const Real dy = self.grad[i * c + j];
            const Real h = (*xhat)[i * c + j];
            if (!ggain.empty()) ggain[j] += dy * h;
            if (!gbias.empty()) gbias[j] += dy;
            sum_dxhat += dy * gv[j];
            sum_dxhat_h += dy * gv[j] * h;
          }
          if (gx.empty()) continue;
          const Real inv = (*inv_std)[j];
          for (std::size_t i = 0; i < n; ++i) {
            const Real dxh = self.grad[i * c + j] * gv[j];
            gx[i * c + j] += inv / dn * (dn * dxh - sum_dxhat - (*xhat)[i * c + j] * sum_dxhat_h);
          }
        }
      });
}

Tensor dropout(const Tensor& x, Real rate, Rng& rng, Mode mode) {
  if (mode == Mode::Eval || rate <= 0) return x;
  if (rate >= 1) throw ConfigError("dropout rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  const Real factor = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<Buffer>(x.numel());
  for (auto& m : *mask) m = keep(rng) ? factor : 0.0;
  auto in = x.values();
  Buffer out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] * (*mask)[i];
  return Tensor::make_result(x.shape(), std::move(out), {x}, [mask](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
  });
}

Tensor sum(const Tensor& t) {
  auto v = t.values();
  const Real total = std::accumulate(v.begin(), v.end(), 0.0);
  return Tensor::make_result({}, {total}, {t}, [](Node& self) {
    auto g = parent_grad(self, 0);
    for (auto& x : g) x += self.grad[0];
  });
}

Tensor mean(const Tensor& t) {
  if (t.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(t), 1.0 / static_cast<Real>(t.numel()));
}

Tensor weighted_sum(const Tensor& a, std::span<const Real> weights) {
  if (weights.size() != a.numel()) throw DimensionError("weighted_sum: weight count mismatch");
  auto v = a.values();
  Real total = 0;
  for (std::size_t i = 0; i < v.size(); ++i) total += v[i] * weights[i];
  auto w = std::make_shared<Buffer>(weights.begin(), weights.end());
  return Tensor::make_result({}, {total}, {a}, [w](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * (*w)[i];
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
  const std::size_t n = logits.rows(), v = logits.cols();
  if (targets.size() != n) throw DimensionError("cross_entropy: target count mismatch");
  if (n == 0) throw DataError("cross_entropy: no targets");
  auto x = logits.values();
  check_finite_input(x, "cross_entropy");
  auto probs = std::make_shared<Buffer>(x.size());
  auto tgt = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  Real loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int t = targets[i];
    if (t < 0 || static_cast<std::size_t>(t) >= v) {
      throw DataError("cross_entropy: class id " + std::to_string(t) + " out of range");
    }
    const Real* row = x.data() + i * v;
    const Real mx = *std::max_element(row, row + v);
    Real z = 0;
    for (std::size_t j = 0; j < v; ++j) z += ((*probs)[i * v + j] = std::exp(row[j] - mx));
    for (std::size_t j = 0; j < v; ++j) (*probs)[i * v + j] /= z;
    loss -= row[t] - mx - std::log(z);
  }
  loss /= static_cast<Real>(n);
  return Tensor::make_result({}, {loss}, {logits}, [n, v, probs, tgt](Node& self) {
    auto g = parent_grad(self, 0);
    const Real s = self.grad[0] / static_cast<Real>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < v; ++j) g[i * v + j] += s * (*probs)[i * v + j];
      g[i * v + static_cast<std::size_t>((*tgt)[i])] -= s;
    }
  });
}

Tensor pick(const Tensor& t, std::span<const int> index) {
  const std::size_t n = t.rows(), v = t.cols();
  if (index.size() != n) throw DimensionError("pick: index count mismatch");
  auto x = t.values();
  auto idx = std::make_shared<std::vector<int>>(index.begin(), index.end());
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (index[i] < 0 || static_cast<std::size_t>(index[i]) >= v) {
      throw DataError("pick: column " + std::to_string(index[i]) + " out of range");
    }
    out[i] = x[i * v + static_cast<std::size_t>(index[i])];
  }
  return Tensor::make_result({n}, std::move(out), {t}, [v, idx](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < idx->size(); ++i)
      g[i * v + static_cast<std::size_t>((*idx)[i])] += self.grad[i];
  });
}

Tensor rows_gather(const Tensor& table, std::span<const int> ids) {
  require_matrix(table, "rows_gather");
  const std::size_t rows = table.dim(0), d = table.dim(1);
  auto src = table.values();
  Buffer out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= rows) {
      throw DataError("token id " + std::to_string(ids[i]) + " outside table of " +
                      std::to_string(rows) + " rows");
    }
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(ids[i] * d), d,
                out.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  auto idx = std::make_shared<std::vector<int>>(ids.begin(), ids.end());
  return Tensor::make_result({ids.size(), d}, std::move(out), {table}, [d, idx](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < idx->size(); ++i)
      for (std::size_t j = 0; j < d; ++j)
        g[static_cast<std::size_t>((*idx)[i]) * d + j] += self.grad[i * d + j];
  });
}

Tensor segment_sum(const Tensor& x, const Segments& segments) {
  const std::size_t d = x.cols();
  check_segments(segments, x.rows(), "segment_sum");
  auto in = x.values();
  Buffer out(segments.count() * d, 0.0);
  for (std::size_t s = 0; s < segments.count(); ++s)
    for (std::size_t r = 0; r < segments.lengths[s]; ++r)
      for (std::size_t j = 0; j < d; ++j) out[s * d + j] += in[(segments.offsets[s] + r) * d + j];
  return Tensor::make_result({segments.count(), d}, std::move(out), {x},
                             [d, segments](Node& self) {
                               auto g = parent_grad(self, 0);
                               for (std::size_t s = 0; s < segments.count(); ++s)
                                 for (std::size_t r = 0; r < segments.lengths[s]; ++r)
                                   for (std::size_t j = 0; j < d; ++j)
                                     g[(segments.offsets[s] + r) * d + j] += self.grad[s * d + j];
                             });
}

Tensor segment_mean(const Tensor& x, const Segments& segments) {
  const std::size_t d = x.cols();
  check_segments(segments, x.rows(), "segment_mean");
  for (auto len : segments.lengths)
    if (len == 0) throw DimensionError("segment_mean over an empty segment");
  auto in = x.values();
  Buffer out(segments.count() * d, 0.0);
  for (std::size_t s = 0; s < segments.count(); ++s) {
    const Real inv = 1.0 / static_cast<Real>(segments.lengths[s]);
    for (std::size_t r = 0; r < segments.lengths[s]; ++r)
      for (std::size_t j = 0; j < d; ++j)
        out[s * d + j] += in[(segments.offsets[s] + r) * d + j] * inv;
  }
  return Tensor::make_result({segments.count(), d}, std::move(out), {x},
                             [d, segments](Node& self) {
                               auto g = parent_grad(self, 0);
                               for (std::size_t s = 0; s < segments.count(); ++s) {
                                 const Real inv = 1.0 / static_cast<Real>(segments.lengths[s]);
                                 for (std::size_t r = 0; r < segments.lengths[s]; ++r)
                                   for (std::size_t j = 0; j < d; ++j)
                                     g[(segments.offsets[s] + r) * d + j] +=
                                         self.grad[s * d + j] * inv;
                               }
                             });
}

Tensor segment_max(const Tensor& x, const Segments& segments) {
  const std::size_t d = x.cols();
  check_segments(segments, x.rows(), "segment_max");
  auto in = x.values();
  Buffer out(segments.count() * d);
  auto argmax = std::make_shared<std::vector<std::size_t>>(segments.count() * d);
  for (std::size_t s = 0; s < segments.count(); ++s) {
    if (segments.lengths[s] == 0) throw DimensionError("segment_max over an empty segment");
    for (std::size_t j = 0; j < d; ++j) {
      std::size_t best = segments.offsets[s];
      for (std::size_t r = 1; r < segments.lengths[s]; ++r) {
        const std::size_t row = segments.offsets[s] + r;
        if (in[row * d + j] > in[best * d + j]) best = row;
      }
      (*argmax)[s * d + j] = best;
      out[s * d + j] = in[best * d + j];
    }
  }
  return Tensor::make_result({segments.count(), d}, std::move(out), {x}, [d, argmax](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t k = 0; k < argmax->size(); ++k) g[(*argmax)[k] * d + k % d] += self.grad[k];
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t n = parts[0].rows();
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.cols());
    total += p.cols();
  }
  Buffer out(n * total);
  std::size_t col = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto v = parts[k].values();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(i * widths[k]), widths[k],
                  out.begin() + static_cast<std::ptrdiff_t>(i * total + col));
    col += widths[k];
  }
  return Tensor::make_result({n, total}, std::move(out), {parts.begin(), parts.end()},
                             [n, total, widths](Node& self) {
                               std::size_t c = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 auto g = parent_grad(self, k);
                                 if (!g.empty())
                                   for (std::size_t i = 0; i < n; ++i)
                                     for (std::size_t j = 0; j < widths[k]; ++j)
                                       g[i * widths[k] + j] += self.grad[i * total + c + j];
                                 c += widths[k];
                               }
                             });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t d = parts[0].cols();
  Buffer out;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    if (p.cols() != d) throw DimensionError("concat_rows: widths differ");
    auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
    sizes.push_back(v.size());
  }
  const std::size_t n = out.size() / std::max<std::size_t>(d, 1);
  return Tensor::make_result({n, d}, std::move(out), {parts.begin(), parts.end()},
                             [sizes](Node& self) {
                               std::size_t offset = 0;
                               for (std::size_t k = 0; k < sizes.size(); ++k) {
                                 auto g = parent_grad(self, k);
                                 for (std::size_t i = 0; i < g.size(); ++i)
                                   g[i] += self.grad[offset + i];
                                 offset += sizes[k];
                               }
                             });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  const std::size_t d = x.cols();
  if (begin + count > x.rows()) throw DimensionError("slice_rows out of range");
  auto v = x.values();
  Buffer out(v.begin() + static_cast<std::ptrdiff_t>(begin * d),
                        v.begin() + static_cast<std::ptrdiff_t>((begin + count) * d));
  return Tensor::make_result({count, d}, std::move(out), {x}, [begin, d](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
  });
}

Tensor unfold_windows(const Tensor& x, std::size_t length, std::size_t window) {
  const std::size_t k = x.cols();
  if (window == 0 || window > length) {
    throw ConfigError("window " + std::to_string(window) + " does not fit length " +
                      std::to_string(length));
  }
  if (length == 0 || x.rows() % length != 0) {
    throw DimensionError("unfold_windows: rows are not a multiple of the block length");
  }
  const std::size_t blocks = x.rows() / length;
  const std::size_t per = length - window + 1;
  const std::size_t width = window * k;
  auto v = x.values();
  Buffer out(blocks * per * width);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t i = 0; i < per; ++i)
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>((b * length + i) * k), width,
                  out.begin() + static_cast<std::ptrdiff_t>((b * per + i) * width));
  return Tensor::make_result(
      {blocks * per, width}, std::move(out), {x}, [blocks, per, width, length, k](Node& self) {
        auto g = parent_grad(self, 0);
        for (std::size_t b = 0; b < blocks; ++b)
          for (std::size_t i = 0; i < per; ++i)
            for (std::size_t j = 0; j < width; ++j)
              g[(b * length + i) * k + j] += self.grad[(b * per + i) * width + j];
      });
}

}  // namespace unmt
