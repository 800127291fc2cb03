#include "unmt/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <numeric>
#include <sstream>

#include "unmt/errors.hpp"

namespace unmt {
namespace {

std::atomic<NodeId> next_node_id{1};
thread_local bool grad_mode = true;

std::shared_ptr<Node> new_node(Shape shape, Buffer values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  auto node = std::make_shared<Node>();
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(shape);
  node->data = std::make_shared<Buffer>(std::move(values));
  node->requires_grad = requires_grad;
  return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

std::span<Real> Node::grad_buffer() {
  if (grad.empty()) grad.assign(data->size(), 0.0);
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return Tensor(new_node(std::move(shape), Buffer(n, value), requires_grad));
}

Tensor Tensor::from_values(Shape shape, const std::vector<Real>& values, bool requires_grad) {
  return from_buffer(std::move(shape), Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::from_buffer(Shape shape, Buffer values, bool requires_grad) {
  return Tensor(new_node(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Real>> rows, bool requires_grad) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<Real> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return from_values({r, c}, std::move(values), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<Real> values, bool requires_grad) {
  return from_buffer({values.size()}, Buffer(values), requires_grad);
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from_buffer({}, Buffer{value}, requires_grad);
}

Tensor Tensor::make_result(Shape shape, Buffer values, std::vector<Tensor> parents,
                           std::function<void(Node&)> backward) {
  const bool track =
      grad_mode && std::any_of(parents.begin(), parents.end(),
                               [](const Tensor& p) { return p.defined() && p.requires_grad(); });
  auto node = new_node(std::move(shape), std::move(values), track);
  if (track) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward);
  }
  return Tensor(std::move(node));
}

NodeId Tensor::id() const {
  if (!node_) throw ContractError("undefined tensor");
  return node_->id;
}

const Shape& Tensor::shape() const {
  if (!node_) throw ContractError("undefined tensor");
  return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size()) throw DimensionError("axis out of range for " + shape_string(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return values().size(); }

std::size_t Tensor::rows() const {
  const auto& s = shape();
  if (s.empty()) return 1;
  return std::accumulate(s.begin(), s.end() - 1, std::size_t{1}, std::multiplies<>());
}

std::size_t Tensor::cols() const {
  const auto& s = shape();
  return s.empty() ? 1 : s.back();
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

std::span<const Real> Tensor::values() const {
  if (!node_) throw ContractError("undefined tensor");
  return *node_->data;
}

std::span<Real> Tensor::mutable_values() {
  if (!node_) throw ContractError("undefined tensor");
  return *node_->data;
}

Real Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return values()[0];
}

Real Tensor::at(std::size_t row, std::size_t col) const {
  if (row >= rows() || col >= cols()) throw DimensionError("index out of range");
  return values()[row * cols() + col];
}

Tensor Tensor::detach() const {
  auto node = std::make_shared<Node>();
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = shape();
  node->data = node_->data;
  return Tensor(std::move(node));
}

Tensor Tensor::clone(bool requires_grad) const {
  return from_buffer(shape(), Buffer(values().begin(), values().end()), requires_grad);
}

Tensor Tensor::reshape(Shape new_shape) const {
  if (shape_numel(new_shape) != numel()) {
    throw DimensionError("cannot reshape " + shape_string(shape()) + " to " +
                         shape_string(new_shape));
  }
  // Shares the storage; only the shape differs.
  auto node = std::make_shared<Node>();
  node->id = next_node_id.fetch_add(1, std::memory_order_relaxed);
  node->shape = std::move(new_shape);
  node->data = node_->data;
  Tensor out(std::move(node));
  if (grad_mode && requires_grad()) {
    out.node_->requires_grad = true;
    out.node_->parents = {node_};
    out.node_->backward_fn = [](Node& self) {
      auto g = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    };
  }
  return out;
}

bool grad_enabled() noexcept { return grad_mode; }

NoGradGuard::NoGradGuard() : previous_(grad_mode) { grad_mode = false; }
NoGradGuard::~NoGradGuard() { grad_mode = previous_; }

}  // namespace unmt
