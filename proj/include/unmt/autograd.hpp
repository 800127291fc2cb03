#pragma once

#include <map>

#include "unmt/tensor.hpp"

namespace unmt {

// Gradients of one backward pass, keyed by leaf node id.
class GradientMap {
 public:
  using Storage = std::map<NodeId, Tensor>;

  const Tensor* find(const Tensor& leaf) const;
  // Throws ContractError if the leaf has no entry.
  const Tensor& at(const Tensor& leaf) const;
  bool contains(const Tensor& leaf) const { return find(leaf) != nullptr; }
  std::size_t size() const { return grads_.size(); }
  bool empty() const { return grads_.empty(); }

  void insert(NodeId id, Tensor grad) { grads_.insert_or_assign(id, std::move(grad)); }
  void merge_add(const GradientMap& other);

  Storage::const_iterator begin() const { return grads_.begin(); }
  Storage::const_iterator end() const { return grads_.end(); }

 private:
  Storage grads_;
};

// Reverse-mode sweep from a scalar loss. Traversal order is a deterministic
// function of the graph, so repeated calls return bit-identical maps.
GradientMap backward(const Tensor& loss);

}  // namespace unmt
