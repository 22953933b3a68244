#include "core/ops.h"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <unordered_set>

namespace avfuse {

namespace {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
bool track(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor<T>* t : inputs)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

int normalize_axis(int axis, int rank, const char* op) {
  int ax = axis < 0 ? axis + rank : axis;
  if (ax < 0 || ax >= rank)
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for rank " + std::to_string(rank));
  return ax;
}

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (size_t i = 0; i < r; ++i) {
    index_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    index_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) +
                           " with " + shape_str(b));
    out[i] = std::max(da, db);
  }
  return out;
}

std::vector<index_t> row_major_strides(const Shape& s) {
  std::vector<index_t> st(s.size());
  index_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

// Strides of `s` right-aligned to `out`; broadcast dimensions get stride 0.
std::vector<index_t> aligned_strides(const Shape& s, const Shape& out) {
  std::vector<index_t> st(out.size(), 0);
  auto own = row_major_strides(s);
  size_t off = out.size() - s.size();
  for (size_t i = 0; i < s.size(); ++i)
    st[off + i] = (s[i] == 1 && out[off + i] != 1) ? 0 : own[i];
  return st;
}

// Odometer walk over `out`, maintaining offsets for two aligned operands.
template <typename F>
void for_each2(const Shape& out, const std::vector<index_t>& sa,
               const std::vector<index_t>& sb, F&& fn) {
  index_t n = numel_of(out);
  size_t r = out.size();
  if (r == 0) {
    if (n == 1) fn(index_t(0), index_t(0), index_t(0));
    return;
  }
  std::vector<index_t> idx(r, 0);
  index_t ao = 0, bo = 0;
  for (index_t flat = 0; flat < n; ++flat) {
    fn(flat, ao, bo);
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      ao += sa[d];
      bo += sb[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      ao -= sa[d] * out[d];
      bo -= sb[d] * out[d];
    }
  }
}

// One-operand odometer: walks `shape` in row-major order while maintaining
// an offset computed with the given per-dimension strides.
template <typename F>
void for_each1(const Shape& shape, const std::vector<index_t>& strides, F&& fn) {
  index_t n = numel_of(shape);
  size_t r = shape.size();
  if (r == 0) {
    if (n == 1) fn(index_t(0), index_t(0));
    return;
  }
  std::vector<index_t> idx(r, 0);
  index_t off = 0;
  for (index_t flat = 0; flat < n; ++flat) {
    fn(flat, off);
    for (size_t d = r; d-- > 0;) {
      ++idx[d];
      off += strides[d];
      if (idx[d] < shape[d]) break;
      idx[d] = 0;
      off -= strides[d] * shape[d];
    }
  }
}

template <typename T, typename FV, typename PA, typename PB>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, const char* name,
                           FV fv, PA pa, PB pb) {
  Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
  auto sa = aligned_strides(a.shape(), out_shape);
  auto sb = aligned_strides(b.shape(), out_shape);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  {
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data_mut().data();
    for_each2(out_shape, sa, sb,
              [&](index_t f, index_t ao, index_t bo) { od[f] = fv(ad[ao], bd[bo]); });
  }
  if (track<T>({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ai, bi};
    out.impl()->backward_fn = [ai, bi, sa, sb, out_shape, pa, pb](TensorImpl<T>& self) {
      const T* ad = ai->data.data();
      const T* bd = bi->data.data();
      const T* g = self.grad.data();
      const bool need_a = ai->requires_grad;
      const bool need_b = bi->requires_grad;
      if (need_a) ai->ensure_grad();
      if (need_b) bi->ensure_grad();
      for_each2(out_shape, sa, sb, [&](index_t f, index_t ao, index_t bo) {
        if (need_a) ai->grad[static_cast<size_t>(ao)] += g[f] * pa(ad[ao], bd[bo]);
        if (need_b) bi->grad[static_cast<size_t>(bo)] += g[f] * pb(ad[ao], bd[bo]);
      });
    };
  }
  return out;
}

template <typename T, typename FV, typename DV>
Tensor<T> unary_op(const Tensor<T>& a, FV fv, DV dv) {
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  const T* ad = a.data().data();
  T* od = out.data_mut().data();
  index_t n = a.numel();
  for (index_t i = 0; i < n; ++i) od[i] = fv(ad[i]);
  if (track<T>({&a})) {
    auto ai = a.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ai};
    out.impl()->backward_fn = [ai, dv](TensorImpl<T>& self) {
      ai->ensure_grad();
      const T* ad = ai->data.data();
      const T* g = self.grad.data();
      for (size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += g[i] * dv(ad[i]);
    };
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary<T>(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
      [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary<T>(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
      [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return broadcast_binary<T>(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; },
      [](T x, T) { return x; });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return unary_op<T>(a, [s](T x) { return x * s; }, [s](T) { return s; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  const T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  const T k = static_cast<T>(0.044715);
  return unary_op<T>(
      a,
      [c, k](T x) {
        T u = c * (x + k * x * x * x);
        return T(0.5) * x * (T(1) + std::tanh(u));
      },
      [c, k](T x) {
        T u = c * (x + k * x * x * x);
        T th = std::tanh(u);
        T sech2 = T(1) - th * th;
        return T(0.5) * (T(1) + th) + T(0.5) * x * sech2 * c * (T(1) + T(3) * k * x * x);
      });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  Tensor<T> out = Tensor<T>::zeros(Shape{});
  T acc = T(0);
  for (T v : a.data()) acc += v;
  out.data_mut()[0] = acc;
  if (track<T>({&a})) {
    auto ai = a.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ai};
    out.impl()->backward_fn = [ai](TensorImpl<T>& self) {
      ai->ensure_grad();
      T g = self.grad[0];
      for (T& v : ai->grad) v += g;
    };
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  Tensor<T> s = sum(a);
  return scale(s, T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, int axis) {
  int ax = normalize_axis(axis, a.rank(), "mean_axis");
  const Shape& s = a.shape();
  index_t n = s[static_cast<size_t>(ax)];
  index_t inner = 1;
  for (size_t i = static_cast<size_t>(ax) + 1; i < s.size(); ++i) inner *= s[i];
  index_t outer = a.numel() / (n * inner);
  Shape out_shape;
  for (size_t i = 0; i < s.size(); ++i)
    if (static_cast<int>(i) != ax) out_shape.push_back(s[i]);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T* ad = a.data().data();
  T* od = out.data_mut().data();
  const T inv = T(1) / static_cast<T>(n);
  for (index_t o = 0; o < outer; ++o)
    for (index_t i = 0; i < inner; ++i) {
      T acc = T(0);
      for (index_t j = 0; j < n; ++j) acc += ad[(o * n + j) * inner + i];
      od[o * inner + i] = acc * inv;
    }
  if (track<T>({&a})) {
    auto ai = a.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ai};
    out.impl()->backward_fn = [ai, outer, n, inner, inv](TensorImpl<T>& self) {
      ai->ensure_grad();
      const T* g = self.grad.data();
      for (index_t o = 0; o < outer; ++o)
        for (index_t i = 0; i < inner; ++i) {
          T gv = g[o * inner + i] * inv;
          for (index_t j = 0; j < n; ++j) ai->grad[static_cast<size_t>((o * n + j) * inner + i)] += gv;
        }
    };
  }
  return out;
}

template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
  Tensor<T> d = sub(pred, target);
  return mean(mul(d, d));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw DimensionError("matmul: operands must have rank >= 2, got " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  index_t m = a.dim(-2), k = a.dim(-1);
  index_t k2 = b.dim(-2), n = b.dim(-1);
  if (k != k2)
    throw DimensionError("matmul: inner dimensions disagree: " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
  Shape ba(a.shape().begin(), a.shape().end() - 2);
  Shape bb(b.shape().begin(), b.shape().end() - 2);
  Shape bout = broadcast_shapes(ba, bb, "matmul");
  auto sa = aligned_strides(ba, bout);
  auto sb = aligned_strides(bb, bout);
  Shape out_shape = bout;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  {
    const T* ad = a.data().data();
    const T* bd = b.data().data();
    T* od = out.data_mut().data();
    for_each2(bout, sa, sb, [&](index_t f, index_t ao, index_t bo) {
      Eigen::Map<const EMat<T>> A(ad + ao * m * k, m, k);
      Eigen::Map<const EMat<T>> B(bd + bo * k * n, k, n);
      Eigen::Map<EMat<T>> C(od + f * m * n, m, n);
      C.noalias() = A * B;
    });
  }
  if (track<T>({&a, &b})) {
    auto ai = a.impl();
    auto bi = b.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ai, bi};
    out.impl()->backward_fn = [ai, bi, sa, sb, bout, m, k, n](TensorImpl<T>& self) {
      const bool need_a = ai->requires_grad;
      const bool need_b = bi->requires_grad;
      if (need_a) ai->ensure_grad();
      if (need_b) bi->ensure_grad();
      const T* ad = ai->data.data();
      const T* bd = bi->data.data();
      const T* gd = self.grad.data();
      for_each2(bout, sa, sb, [&](index_t f, index_t ao, index_t bo) {
        Eigen::Map<const EMat<T>> A(ad + ao * m * k, m, k);
        Eigen::Map<const EMat<T>> B(bd + bo * k * n, k, n);
        Eigen::Map<const EMat<T>> G(gd + f * m * n, m, n);
        if (need_a) {
          Eigen::Map<EMat<T>> dA(ai->grad.data() + ao * m * k, m, k);
          dA.noalias() += G * B.transpose();
        }
        if (need_b) {
          Eigen::Map<EMat<T>> dB(bi->grad.data() + bo * k * n, k, n);
          dB.noalias() += A.transpose() * G;
        }
      });
    };
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a, int axis) {
  int ax = normalize_axis(axis, a.rank(), "softmax");
  const Shape& s = a.shape();
  index_t n = s[static_cast<size_t>(ax)];
  index_t inner = 1;
  for (size_t i = static_cast<size_t>(ax) + 1; i < s.size(); ++i) inner *= s[i];
  index_t outer = a.numel() / (n * inner);
  Tensor<T> out = Tensor<T>::zeros(s);
  const T* ad = a.data().data();
  T* od = out.data_mut().data();
  for (index_t o = 0; o < outer; ++o)
    for (index_t i = 0; i < inner; ++i) {
      const index_t base = o * n * inner + i;
      T mx = ad[base];
      for (index_t j = 1; j < n; ++j) mx = std::max(mx, ad[base + j * inner]);
      T acc = T(0);
      for (index_t j = 0; j < n; ++j) {
        T e = std::exp(ad[base + j * inner] - mx);
        od[base + j * inner] = e;
        acc += e;
      }
      T inv = T(1) / acc;
      for (index_t j = 0; j < n; ++j) od[base + j * inner] *= inv;
    }
  if (track<T>({&a})) {
    auto ai = a.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ai};
    out.impl()->backward_fn = [ai, outer, n, inner](TensorImpl<T>& self) {
      ai->ensure_grad();
      const T* y = self.data.data();
      const T* g = self.grad.data();
      for (index_t o = 0; o < outer; ++o)
        for (index_t i = 0; i < inner; ++i) {
          const index_t base = o * n * inner + i;
          T dot = T(0);
          for (index_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
          for (index_t j = 0; j < n; ++j) {
            const index_t p = base + j * inner;
            ai->grad[static_cast<size_t>(p)] += y[p] * (g[p] - dot);
          }
        }
    };
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: input must have rank >= 1");
  index_t d = x.dim(-1);
  if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d)
    throw DimensionError("layer_norm: gain/bias must have shape [" + std::to_string(d) +
                         "], got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
  if (!(eps > T(0))) throw ConfigError("layer_norm: eps must be positive");
  index_t rows = x.numel() / d;
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto mu = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  auto istd = std::make_shared<std::vector<T>>(static_cast<size_t>(rows));
  const T* xd = x.data().data();
  const T* gd = gain.data().data();
  const T* bd = bias.data().data();
  T* od = out.data_mut().data();
  for (index_t r = 0; r < rows; ++r) {
    const T* row = xd + r * d;
    T m = T(0);
    for (index_t j = 0; j < d; ++j) m += row[j];
    m /= static_cast<T>(d);
    T v = T(0);
    for (index_t j = 0; j < d; ++j) {
      T c = row[j] - m;
      v += c * c;
    }
    v /= static_cast<T>(d);
    T is = T(1) / std::sqrt(v + eps);
    (*mu)[static_cast<size_t>(r)] = m;
    (*istd)[static_cast<size_t>(r)] = is;
    for (index_t j = 0; j < d; ++j) od[r * d + j] = (row[j] - m) * is * gd[j] + bd[j];
  }
  if (track<T>({&x, &gain, &bias})) {
    auto xi = x.impl();
    auto gi = gain.impl();
    auto bi = bias.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {xi, gi, bi};
    out.impl()->backward_fn = [xi, gi, bi, mu, istd, rows, d](TensorImpl<T>& self) {
      const bool need_x = xi->requires_grad;
      const bool need_g = gi->requires_grad;
      const bool need_b = bi->requires_grad;
      if (need_x) xi->ensure_grad();
      if (need_g) gi->ensure_grad();
      if (need_b) bi->ensure_grad();
      const T* xd = xi->data.data();
      const T* gd = gi->data.data();
      const T* g = self.grad.data();
      const T invd = T(1) / static_cast<T>(d);
      for (index_t r = 0; r < rows; ++r) {
        const T m = (*mu)[static_cast<size_t>(r)];
        const T is = (*istd)[static_cast<size_t>(r)];
        const T* row = xd + r * d;
        const T* grow = g + r * d;
        if (need_g || need_b) {
          for (index_t j = 0; j < d; ++j) {
            T xhat = (row[j] - m) * is;
            if (need_g) gi->grad[static_cast<size_t>(j)] += grow[j] * xhat;
            if (need_b) bi->grad[static_cast<size_t>(j)] += grow[j];
          }
        }
        if (need_x) {
          T t1 = T(0), t2 = T(0);
          for (index_t j = 0; j < d; ++j) {
            T xhat = (row[j] - m) * is;
            T dxh = grow[j] * gd[j];
            t1 += dxh;
            t2 += dxh * xhat;
          }
          for (index_t j = 0; j < d; ++j) {
            T xhat = (row[j] - m) * is;
            T dxh = grow[j] * gd[j];
            xi->grad[static_cast<size_t>(r * d + j)] +=
                is * (dxh - t1 * invd - xhat * t2 * invd);
          }
        }
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape new_shape) {
  index_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < new_shape.size(); ++i) {
    if (new_shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one -1 dimension");
      infer = static_cast<int>(i);
    } else {
      known *= new_shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.numel() % known != 0)
      throw DimensionError("reshape: cannot infer dimension for " + shape_str(a.shape()));
    new_shape[static_cast<size_t>(infer)] = a.numel() / known;
  } else if (known != a.numel()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(new_shape) +
                         " changes element count");
  }
  Tensor<T> out = Tensor<T>::zeros(new_shape);
  std::copy(a.data().begin(), a.data().end(), out.data_mut().begin());
  if (track<T>({&a})) {
    auto ai = a.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ai};
    out.impl()->backward_fn = [ai](TensorImpl<T>& self) {
      ai->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) ai->grad[i] += self.grad[i];
    };
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int d0, int d1) {
  int r = a.rank();
  int i0 = normalize_axis(d0, r, "transpose");
  int i1 = normalize_axis(d1, r, "transpose");
  Shape out_shape = a.shape();
  std::swap(out_shape[static_cast<size_t>(i0)], out_shape[static_cast<size_t>(i1)]);
  auto out_strides = row_major_strides(out_shape);
  // stride of the output location as a function of the source index
  std::vector<index_t> map(static_cast<size_t>(r));
  for (int d = 0; d < r; ++d) {
    int od = d == i0 ? i1 : d == i1 ? i0 : d;
    map[static_cast<size_t>(d)] = out_strides[static_cast<size_t>(od)];
  }
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T* ad = a.data().data();
  T* od = out.data_mut().data();
  for_each1(a.shape(), map, [&](index_t flat, index_t off) { od[off] = ad[flat]; });
  if (track<T>({&a})) {
    auto ai = a.impl();
    Shape src_shape = a.shape();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ai};
    out.impl()->backward_fn = [ai, src_shape, map](TensorImpl<T>& self) {
      ai->ensure_grad();
      const T* g = self.grad.data();
      for_each1(src_shape, map,
                [&](index_t flat, index_t off) { ai->grad[static_cast<size_t>(flat)] += g[off]; });
    };
  }
  return out;
}

template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  int r = parts[0].rank();
  int ax = normalize_axis(axis, r, "concat");
  Shape out_shape = parts[0].shape();
  index_t total = 0;
  for (const Tensor<T>& p : parts) {
    if (p.rank() != r) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < r; ++d)
      if (d != ax && p.dim(d) != out_shape[static_cast<size_t>(d)])
        throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(parts[0].shape()));
    total += p.dim(ax);
  }
  out_shape[static_cast<size_t>(ax)] = total;
  index_t inner = 1;
  for (int d = ax + 1; d < r; ++d) inner *= out_shape[static_cast<size_t>(d)];
  index_t outer = numel_of(out_shape) / (total * inner);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  T* od = out.data_mut().data();
  index_t written = 0;
  for (const Tensor<T>& p : parts) {
    index_t ni = p.dim(ax);
    const T* pd = p.data().data();
    for (index_t o = 0; o < outer; ++o)
      std::copy(pd + o * ni * inner, pd + (o + 1) * ni * inner,
                od + (o * total + written) * inner);
    written += ni;
  }
  bool any = false;
  for (const Tensor<T>& p : parts)
    if (p.requires_grad()) any = true;
  if (grad_enabled() && any) {
    std::vector<std::shared_ptr<TensorImpl<T>>> impls;
    std::vector<index_t> sizes;
    for (const Tensor<T>& p : parts) {
      impls.push_back(p.impl());
      sizes.push_back(p.dim(ax));
    }
    out.impl()->requires_grad = true;
    out.impl()->parents = impls;
    out.impl()->backward_fn = [impls, sizes, outer, inner, total](TensorImpl<T>& self) {
      const T* g = self.grad.data();
      index_t written = 0;
      for (size_t pi = 0; pi < impls.size(); ++pi) {
        auto& p = impls[pi];
        index_t ni = sizes[pi];
        if (p->requires_grad) {
          p->ensure_grad();
          for (index_t o = 0; o < outer; ++o) {
            const T* src = g + (o * total + written) * inner;
            T* dst = p->grad.data() + o * ni * inner;
            for (index_t t = 0; t < ni * inner; ++t) dst[t] += src[t];
          }
        }
        written += ni;
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, int axis, index_t start, index_t len) {
  int ax = normalize_axis(axis, a.rank(), "slice");
  index_t n = a.dim(ax);
  if (start < 0 || len < 0 || start + len > n)
    throw IndexError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + len) + ") out of bounds for dimension " +
                     std::to_string(n));
  Shape out_shape = a.shape();
  out_shape[static_cast<size_t>(ax)] = len;
  index_t inner = 1;
  for (int d = ax + 1; d < a.rank(); ++d) inner *= a.dim(d);
  index_t outer = a.numel() / (n * inner);
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  const T* ad = a.data().data();
  T* od = out.data_mut().data();
  for (index_t o = 0; o < outer; ++o)
    std::copy(ad + (o * n + start) * inner, ad + (o * n + start + len) * inner,
              od + o * len * inner);
  if (track<T>({&a})) {
    auto ai = a.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ai};
    out.impl()->backward_fn = [ai, outer, inner, n, start, len](TensorImpl<T>& self) {
      ai->ensure_grad();
      const T* g = self.grad.data();
      for (index_t o = 0; o < outer; ++o) {
        T* dst = ai->grad.data() + (o * n + start) * inner;
        const T* src = g + o * len * inner;
        for (index_t t = 0; t < len * inner; ++t) dst[t] += src[t];
      }
    };
  }
  return out;
}

namespace {

void check_rows_indices(const std::vector<index_t>& idx, index_t n, bool reject_dup,
                        const char* op) {
  std::unordered_set<index_t> seen;
  for (index_t i : idx) {
    if (i < 0 || i >= n)
      throw IndexError(std::string(op) + ": index " + std::to_string(i) +
                       " out of range [0," + std::to_string(n) + ")");
    if (reject_dup && !seen.insert(i).second)
      throw IndexError(std::string(op) + ": duplicate index " + std::to_string(i));
  }
}

}  // namespace

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<index_t>& idx) {
  if (x.rank() != 2) throw DimensionError("gather_rows: expected rank 2, got " + shape_str(x.shape()));
  index_t n = x.dim(0), d = x.dim(1);
  check_rows_indices(idx, n, false, "gather_rows");
  Tensor<T> out = Tensor<T>::zeros({static_cast<index_t>(idx.size()), d});
  const T* xd = x.data().data();
  T* od = out.data_mut().data();
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(xd + idx[r] * d, xd + (idx[r] + 1) * d, od + static_cast<index_t>(r) * d);
  if (track<T>({&x})) {
    auto xi = x.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {xi};
    out.impl()->backward_fn = [xi, idx, d](TensorImpl<T>& self) {
      xi->ensure_grad();
      const T* g = self.grad.data();
      for (size_t r = 0; r < idx.size(); ++r) {
        T* dst = xi->grad.data() + idx[r] * d;
        const T* src = g + static_cast<index_t>(r) * d;
        for (index_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scatter_rows(const Tensor<T>& rows, const std::vector<index_t>& idx, index_t n) {
  if (rows.rank() != 2)
    throw DimensionError("scatter_rows: expected rank 2, got " + shape_str(rows.shape()));
  if (static_cast<index_t>(idx.size()) != rows.dim(0))
    throw DimensionError("scatter_rows: " + std::to_string(idx.size()) + " indices for " +
                         std::to_string(rows.dim(0)) + " rows");
  index_t d = rows.dim(1);
  check_rows_indices(idx, n, true, "scatter_rows");
  Tensor<T> out = Tensor<T>::zeros({n, d});
  const T* rd = rows.data().data();
  T* od = out.data_mut().data();
  for (size_t r = 0; r < idx.size(); ++r)
    std::copy(rd + static_cast<index_t>(r) * d, rd + static_cast<index_t>(r + 1) * d,
              od + idx[r] * d);
  if (track<T>({&rows})) {
    auto ri = rows.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ri};
    out.impl()->backward_fn = [ri, idx, d](TensorImpl<T>& self) {
      ri->ensure_grad();
      const T* g = self.grad.data();
      for (size_t r = 0; r < idx.size(); ++r) {
        const T* src = g + idx[r] * d;
        T* dst = ri->grad.data() + static_cast<index_t>(r) * d;
        for (index_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  }
  return out;
}

template <typename T>
Tensor<T> gather_tokens(const Tensor<T>& x, const std::vector<std::vector<index_t>>& idx) {
  if (x.rank() != 3)
    throw DimensionError("gather_tokens: expected rank 3, got " + shape_str(x.shape()));
  index_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  if (static_cast<index_t>(idx.size()) != b)
    throw DimensionError("gather_tokens: " + std::to_string(idx.size()) +
                         " index lists for batch " + std::to_string(b));
  index_t k = idx.empty() ? 0 : static_cast<index_t>(idx[0].size());
  for (const auto& l : idx) {
    if (static_cast<index_t>(l.size()) != k)
      throw DimensionError("gather_tokens: ragged index lists");
    check_rows_indices(l, n, false, "gather_tokens");
  }
  Tensor<T> out = Tensor<T>::zeros({b, k, d});
  const T* xd = x.data().data();
  T* od = out.data_mut().data();
  for (index_t s = 0; s < b; ++s)
    for (index_t r = 0; r < k; ++r)
      std::copy(xd + (s * n + idx[static_cast<size_t>(s)][static_cast<size_t>(r)]) * d,
                xd + (s * n + idx[static_cast<size_t>(s)][static_cast<size_t>(r)] + 1) * d,
                od + (s * k + r) * d);
  if (track<T>({&x})) {
    auto xi = x.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {xi};
    out.impl()->backward_fn = [xi, idx, b, n, k, d](TensorImpl<T>& self) {
      xi->ensure_grad();
      const T* g = self.grad.data();
      for (index_t s = 0; s < b; ++s)
        for (index_t r = 0; r < k; ++r) {
          T* dst = xi->grad.data() +
                   (s * n + idx[static_cast<size_t>(s)][static_cast<size_t>(r)]) * d;
          const T* src = g + (s * k + r) * d;
          for (index_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    };
  }
  return out;
}

template <typename T>
Tensor<T> scatter_tokens(const Tensor<T>& rows, const std::vector<std::vector<index_t>>& idx,
                         index_t n_tokens) {
  if (rows.rank() != 3)
    throw DimensionError("scatter_tokens: expected rank 3, got " + shape_str(rows.shape()));
  index_t b = rows.dim(0), k = rows.dim(1), d = rows.dim(2);
  if (static_cast<index_t>(idx.size()) != b)
    throw DimensionError("scatter_tokens: " + std::to_string(idx.size()) +
                         " index lists for batch " + std::to_string(b));
  for (const auto& l : idx) {
    if (static_cast<index_t>(l.size()) != k)
      throw DimensionError("scatter_tokens: ragged index lists");
    check_rows_indices(l, n_tokens, true, "scatter_tokens");
  }
  Tensor<T> out = Tensor<T>::zeros({b, n_tokens, d});
  const T* rd = rows.data().data();
  T* od = out.data_mut().data();
  for (index_t s = 0; s < b; ++s)
    for (index_t r = 0; r < k; ++r)
      std::copy(rd + (s * k + r) * d, rd + (s * k + r + 1) * d,
                od + (s * n_tokens + idx[static_cast<size_t>(s)][static_cast<size_t>(r)]) * d);
  if (track<T>({&rows})) {
    auto ri = rows.impl();
    out.impl()->requires_grad = true;
    out.impl()->parents = {ri};
    out.impl()->backward_fn = [ri, idx, b, k, d, n_tokens](TensorImpl<T>& self) {
      ri->ensure_grad();
      const T* g = self.grad.data();
      for (index_t s = 0; s < b; ++s)
        for (index_t r = 0; r < k; ++r) {
          const T* src = g + (s * n_tokens + idx[static_cast<size_t>(s)][static_cast<size_t>(r)]) * d;
          T* dst = ri->grad.data() + (s * k + r) * d;
          for (index_t j = 0; j < d; ++j) dst[j] += src[j];
        }
    };
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> y = matmul(x, w);
  if (b.defined()) y = add(y, b);
  return y;
}

#define AVFUSE_INSTANTIATE_OPS(T)                                                          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                        \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                            \
  template Tensor<T> sum<T>(const Tensor<T>&);                                             \
  template Tensor<T> mean<T>(const Tensor<T>&);                                            \
  template Tensor<T> mean_axis<T>(const Tensor<T>&, int);                                  \
  template Tensor<T> mse<T>(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> softmax<T>(const Tensor<T>&, int);                                    \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,   \
                                   T);                                                     \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                  \
  template Tensor<T> transpose<T>(const Tensor<T>&, int, int);                             \
  template Tensor<T> concat<T>(std::span<const Tensor<T>>, int);                           \
  template Tensor<T> slice<T>(const Tensor<T>&, int, index_t, index_t);                    \
  template Tensor<T> gather_rows<T>(const Tensor<T>&, const std::vector<index_t>&);        \
  template Tensor<T> scatter_rows<T>(const Tensor<T>&, const std::vector<index_t>&,        \
                                     index_t);                                             \
  template Tensor<T> gather_tokens<T>(const Tensor<T>&,                                    \
                                      const std::vector<std::vector<index_t>>&);           \
  template Tensor<T> scatter_tokens<T>(const Tensor<T>&,                                   \
                                       const std::vector<std::vector<index_t>>&, index_t); \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);

AVFUSE_INSTANTIATE_OPS(float)
AVFUSE_INSTANTIATE_OPS(double)

#undef AVFUSE_INSTANTIATE_OPS

}  // namespace avfuse
