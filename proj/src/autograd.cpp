#include "unmt/autograd.hpp"

#include <unordered_set>
#include <utility>

#include "unmt/errors.hpp"

namespace unmt {

const Tensor* GradientMap::find(const Tensor& leaf) const {
  auto it = grads_.find(leaf.id());
  return it == grads_.end() ? nullptr : &it->second;
}

const Tensor& GradientMap::at(const Tensor& leaf) const {
  const Tensor* g = find(leaf);
  if (!g) throw ContractError("no gradient for tensor " + std::to_string(leaf.id()));
  return *g;
}

void GradientMap::merge_add(const GradientMap& other) {
  for (const auto& [id, grad] : other) {
    auto it = grads_.find(id);
    if (it == grads_.end()) {
      grads_.emplace(id, grad.clone());
    } else {
      auto dst = it->second.mutable_values();
      auto src = grad.values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

GradientMap backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss");
  }
  GradientMap result;
  const auto& root = loss.node();
  if (!root->requires_grad) return result;

  // Iterative post-order DFS; parents are visited in declaration order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) {
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad.clear();
  root->grad_buffer()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->is_leaf()) continue;
    if (n->grad.empty()) continue;
    n->backward_fn(*n);
  }
  for (Node* n : order) {
    if (n->is_leaf()) {
      Buffer g = n->grad.empty() ? Buffer(n->data->size(), 0.0)
                                            : std::move(n->grad);
      result.insert(n->id, Tensor::from_buffer(n->shape, std::move(g)));
    }
    n->grad.clear();
    n->grad.shrink_to_fit();
  }
  return result;
}

}  // namespace unmt
