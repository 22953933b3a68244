#pragma once

#include <span>
#include <vector>

#include "core/tensor.h"

namespace avfuse {

// Operator set required by the encoder and decoders. All ops allocate fresh
// output storage and record backward closures when gradients are enabled
// and any input requires them.

// Elementwise with numpy-style broadcasting (gradients reduce over
// broadcast axes).
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T s);

// GELU, tanh approximation.
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

// Full reductions to a rank-0 scalar.
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);

// Mean over one axis (axis removed from the shape).
template <typename T> Tensor<T> mean_axis(const Tensor<T>& a, int axis);

// Mean over all elements of the squared difference.
template <typename T> Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target);

// Batched matrix product [..,m,k] x [..,k,n] -> [..,m,n]; leading batch
// dimensions broadcast.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Numerically stabilized softmax along `axis`.
template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis);

// Layer normalization over the last axis, then affine per-element gain/bias.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);

// Structural ops (always copies, never views).
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape new_shape);
template <typename T> Tensor<T> transpose(const Tensor<T>& a, int d0, int d1);
template <typename T> Tensor<T> concat(std::span<const Tensor<T>> parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, index_t start, index_t len);

// Row selection on [n,d]; backward routes gradients to source rows only.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<index_t>& idx);

// Inverse placement: rows [k,d] scattered into [n,d] zeros. Duplicate
// indices are rejected.
template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& rows, const std::vector<index_t>& idx, index_t n);

// Batched variants over [B,N,D] with one index list per sample.
template <typename T>
Tensor<T> gather_tokens(const Tensor<T>& x, const std::vector<std::vector<index_t>>& idx);
template <typename T>
Tensor<T> scatter_tokens(const Tensor<T>& rows, const std::vector<std::vector<index_t>>& idx,
                         index_t n_tokens);

// x [..,n,in] @ W [in,out] + b [out]; pass an undefined bias to skip it.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

}  // namespace avfuse
