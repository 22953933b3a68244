#include "core/tensor.h"

#include <unordered_set>

namespace avfuse {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1)
    throw DimensionError("backward() requires a scalar, got " + shape_str(shape()));

  // Iterative post-order DFS over parent links; the resulting list is the
  // graph in topological order, visited exactly once per node.
  std::vector<TensorImpl<T>*> topo;
  std::unordered_set<TensorImpl<T>*> visited;
  std::vector<std::pair<TensorImpl<T>*, size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl<T>* p = node->parents[next++].get();
      if (!visited.count(p)) {
        visited.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  impl_->ensure_grad();
  impl_->grad[0] = T(1);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl<T>* node = *it;
    if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace avfuse
