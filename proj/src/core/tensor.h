#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "core/common.h"
#include "core/mem.h"

namespace avfuse {

// Dense row-major tensor with reverse-mode autodiff.
//
// Every operation produces fresh storage; there are no views or aliasing
// across autodiff boundaries. The graph is the implicit DAG of parent
// links recorded by each op; backward() linearizes it once in reverse
// topological order and accumulates gradients additively across fan-out.
template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first accumulation
  bool requires_grad = false;

  // autograd node: parents + closure that routes this node's grad to them
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void(TensorImpl<T>&)> backward_fn;

  TensorImpl(Shape s, bool rg) : shape(std::move(s)), requires_grad(rg) {
    data.resize(static_cast<size_t>(numel_of(shape)), T(0));
    mem::on_alloc(data.size() * sizeof(T));
  }

  ~TensorImpl() {
    mem::on_free(data.size() * sizeof(T));
    mem::on_free(grad.size() * sizeof(T));
  }

  TensorImpl(const TensorImpl&) = delete;
  TensorImpl& operator=(const TensorImpl&) = delete;

  index_t numel() const { return static_cast<index_t>(data.size()); }

  void ensure_grad() {
    if (grad.empty()) {
      grad.resize(data.size(), T(0));
      mem::on_alloc(grad.size() * sizeof(T));
    }
  }
};

// Thread-local switch that disables graph recording (inference mode).
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::make_shared<TensorImpl<T>>(std::move(shape), requires_grad));
  }

  static Tensor full(Shape shape, T value) {
    Tensor t = zeros(std::move(shape));
    for (T& v : t.impl_->data) v = value;
    return t;
  }

  static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
    if (static_cast<index_t>(values.size()) != numel_of(shape))
      throw DimensionError("from: " + std::to_string(values.size()) +
                           " values for shape " + shape_str(shape));
    Tensor t = zeros(std::move(shape), requires_grad);
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor scalar(T value) { return from({}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  index_t dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    return impl_->shape[static_cast<size_t>(i)];
  }
  index_t numel() const { return impl_->numel(); }
  bool requires_grad() const { return impl_->requires_grad; }

  std::span<const T> data() const { return impl_->data; }
  std::span<T> data_mut() { return impl_->data; }
  bool has_grad() const { return !impl_->grad.empty(); }
  std::span<const T> grad() const {
    static const std::vector<T> kEmpty;
    return impl_->grad.empty() ? std::span<const T>(kEmpty) : std::span<const T>(impl_->grad);
  }

  T item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }

  // Element access by multi-index (tests and small utilities).
  T at(std::initializer_list<index_t> idx) const {
    return impl_->data[static_cast<size_t>(flat_index(idx))];
  }
  void set(std::initializer_list<index_t> idx, T v) {
    impl_->data[static_cast<size_t>(flat_index(idx))] = v;
  }

  // Leaf copy with no history; gradient flow stops here.
  Tensor detach() const {
    Tensor t = zeros(shape());
    t.impl_->data = impl_->data;
    return t;
  }

  void set_requires_grad(bool rg) {
    if (rg && impl_->backward_fn)
      throw Error("set_requires_grad on non-leaf tensor");
    impl_->requires_grad = rg;
  }

  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }

  // Runs reverse-mode autodiff from this scalar.
  void backward() const;

  std::shared_ptr<TensorImpl<T>> impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

 private:
  index_t flat_index(std::initializer_list<index_t> idx) const {
    const Shape& s = impl_->shape;
    if (idx.size() != s.size()) throw IndexError("index rank mismatch");
    index_t flat = 0;
    size_t k = 0;
    for (index_t i : idx) {
      if (i < 0 || i >= s[k]) throw IndexError("index out of range");
      flat = flat * s[k] + i;
      ++k;
    }
    return flat;
  }

  std::shared_ptr<TensorImpl<T>> impl_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace avfuse
