#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace unmt {

using Real = double;
using Shape = std::vector<std::size_t>;
using NodeId = std::uint64_t;

// Over-aligned storage. Vectorised kernels peel a scalar head up to the first
// aligned element, so unaligned buffers make sums depend on the heap address.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

using Buffer = std::vector<Real, AlignedAllocator<Real>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// A vertex of the autodiff graph. Leaves have no backward function; op
// results keep their parents alive until the graph is dropped.
struct Node {
  NodeId id = 0;
  Shape shape;
  std::shared_ptr<Buffer> data;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
  // Scratch gradient, only populated while backward() runs.
  Buffer grad;

  bool is_leaf() const noexcept { return !backward_fn; }
  // Zero-initialised on first access.
  std::span<Real> grad_buffer();
  std::span<const Real> values() const { return *data; }
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_values(Shape shape, const std::vector<Real>& values, bool requires_grad = false);
  static Tensor from_buffer(Shape shape, Buffer values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<Real>> rows,
                       bool requires_grad = false);
  static Tensor vector(std::initializer_list<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  // Builds an op result. The backward closure is attached only when grad
  // mode is on and some parent requires a gradient.
  static Tensor make_result(Shape shape, Buffer values,
                            std::vector<Tensor> parents,
                            std::function<void(Node&)> backward);

  bool defined() const noexcept { return static_cast<bool>(node_); }
  NodeId id() const;
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;
  // Product of all leading dimensions; the tensor viewed as rows() x cols().
  std::size_t rows() const;
  std::size_t cols() const;
  bool requires_grad() const;

  std::span<const Real> values() const;
  // Writable view for leaves (initialisation, optimizer updates).
  std::span<Real> mutable_values();
  Real item() const;
  Real at(std::size_t row, std::size_t col) const;
  Real operator[](std::size_t i) const { return values()[i]; }

  // Shares storage, cuts the graph.
  Tensor detach() const;
  // Deep copy of the values into a fresh leaf.
  Tensor clone(bool requires_grad = false) const;
  Tensor reshape(Shape shape) const;

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}
  std::shared_ptr<Node> node_;
};

bool grad_enabled() noexcept;

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace unmt
