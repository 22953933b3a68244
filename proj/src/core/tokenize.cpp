#include "core/tokenize.h"

#include <cmath>

namespace avfuse {

namespace {

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& x, index_t patch, const char* what) {
  if (x.rank() != 4)
    throw DimensionError(std::string(what) + ": expected [B,C,H,W], got " + shape_str(x.shape()));
  index_t b = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  index_t gr = h / patch, gc = w / patch;
  index_t n = gr * gc, pd = patch * patch * c;
  Tensor<T> out = Tensor<T>::zeros({b, n, pd});
  const T* xd = x.data().data();
  T* od = out.data_mut().data();
  for (index_t s = 0; s < b; ++s)
    for (index_t r = 0; r < gr; ++r)
      for (index_t col = 0; col < gc; ++col) {
        T* dst = od + (s * n + r * gc + col) * pd;
        for (index_t ch = 0; ch < c; ++ch)
          for (index_t i = 0; i < patch; ++i)
            for (index_t j = 0; j < patch; ++j)
              *dst++ = xd[((s * c + ch) * h + r * patch + i) * w + col * patch + j];
      }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> image_patches(const Tensor<T>& image, index_t patch) {
  if (image.rank() != 4)
    throw DimensionError("image_patches: expected [B,C,H,W], got " + shape_str(image.shape()));
  index_t h = image.dim(2), w = image.dim(3);
  if (patch <= 0 || h % patch != 0 || w % patch != 0)
    throw ConfigError("image_patches: " + std::to_string(h) + "x" + std::to_string(w) +
                      " not divisible by patch " + std::to_string(patch));
  return extract_patches(image, patch, "image_patches");
}

template <typename T>
Tensor<T> unpatchify_image(const Tensor<T>& patches, index_t grid_rows, index_t grid_cols,
                           index_t patch, index_t channels) {
  if (patches.rank() != 3)
    throw DimensionError("unpatchify_image: expected [B,N,pd], got " + shape_str(patches.shape()));
  index_t b = patches.dim(0), n = patches.dim(1), pd = patches.dim(2);
  if (n != grid_rows * grid_cols || pd != patch * patch * channels)
    throw DimensionError("unpatchify_image: patch layout mismatch for " +
                         shape_str(patches.shape()));
  index_t h = grid_rows * patch, w = grid_cols * patch;
  Tensor<T> out = Tensor<T>::zeros({b, channels, h, w});
  const T* pdat = patches.data().data();
  T* od = out.data_mut().data();
  for (index_t s = 0; s < b; ++s)
    for (index_t r = 0; r < grid_rows; ++r)
      for (index_t col = 0; col < grid_cols; ++col) {
        const T* src = pdat + (s * n + r * grid_cols + col) * pd;
        for (index_t ch = 0; ch < channels; ++ch)
          for (index_t i = 0; i < patch; ++i)
            for (index_t j = 0; j < patch; ++j)
              od[((s * channels + ch) * h + r * patch + i) * w + col * patch + j] = *src++;
      }
  return out;
}

template <typename T>
Tensor<T> spectrogram_patches(const Tensor<T>& spec, index_t patch) {
  if (spec.rank() != 4 || spec.dim(1) != 1)
    throw DimensionError("spectrogram_patches: expected [B,1,Fb,T], got " +
                         shape_str(spec.shape()));
  index_t fb = spec.dim(2), t = spec.dim(3);
  if (patch <= 0 || fb % patch != 0)
    throw ConfigError("spectrogram_patches: " + std::to_string(fb) +
                      " frequency bands not divisible by patch " + std::to_string(patch));
  index_t t_pad = ((t + patch - 1) / patch) * patch;
  if (t_pad == t) return extract_patches(spec, patch, "spectrogram_patches");
  index_t b = spec.dim(0);
  Tensor<T> padded = Tensor<T>::zeros({b, 1, fb, t_pad});
  const T* sd = spec.data().data();
  T* pd = padded.data_mut().data();
  for (index_t s = 0; s < b; ++s)
    for (index_t f = 0; f < fb; ++f)
      std::copy(sd + (s * fb + f) * t, sd + (s * fb + f + 1) * t, pd + (s * fb + f) * t_pad);
  return extract_patches(padded, patch, "spectrogram_patches");
}

template <typename T>
Tensor<T> unpatchify_spectrogram(const Tensor<T>& patches, index_t grid_rows,
                                 index_t grid_cols, index_t patch, index_t t_orig) {
  Tensor<T> full = unpatchify_image(patches, grid_rows, grid_cols, patch, 1);
  index_t t_pad = grid_cols * patch;
  if (t_orig == t_pad) return full;
  if (t_orig > t_pad)
    throw DimensionError("unpatchify_spectrogram: t_orig exceeds padded width");
  return slice(full, 3, 0, t_orig);
}

template <typename T>
TokenBatch<T> patchify_image(const Tensor<T>& image, index_t patch, const Tensor<T>& w,
                             const Tensor<T>& b) {
  Tensor<T> raw = image_patches(image, patch);
  TokenBatch<T> tb;
  tb.raw = raw;
  tb.tokens = linear(raw, w, b);
  tb.modality = Modality::kVisual;
  tb.grid_rows = image.dim(2) / patch;
  tb.grid_cols = image.dim(3) / patch;
  tb.patch = patch;
  return tb;
}

template <typename T>
TokenBatch<T> patchify_spectrogram(const Tensor<T>& spec, index_t patch, const Tensor<T>& w,
                                   const Tensor<T>& b) {
  Tensor<T> raw = spectrogram_patches(spec, patch);
  TokenBatch<T> tb;
  tb.raw = raw;
  tb.tokens = linear(raw, w, b);
  tb.modality = Modality::kAudio;
  tb.grid_rows = spec.dim(2) / patch;
  tb.grid_cols = (spec.dim(3) + patch - 1) / patch;
  tb.patch = patch;
  return tb;
}

template <typename T>
Tensor<T> sincos_pos_embed(index_t rows, index_t cols, index_t dim) {
  if (dim % 4 != 0)
    throw ConfigError("sincos_pos_embed: dim " + std::to_string(dim) +
                      " must be divisible by 4");
  index_t n = rows * cols;
  index_t half = dim / 2;     // per-axis budget
  index_t quarter = dim / 4;  // sin/cos pairs per axis
  Tensor<T> out = Tensor<T>::zeros({n, dim});
  T* od = out.data_mut().data();
  for (index_t r = 0; r < rows; ++r)
    for (index_t c = 0; c < cols; ++c) {
      T* row = od + (r * cols + c) * dim;
      for (index_t i = 0; i < quarter; ++i) {
        double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
        row[i] = static_cast<T>(std::sin(static_cast<double>(r) * omega));
        row[quarter + i] = static_cast<T>(std::cos(static_cast<double>(r) * omega));
        row[half + i] = static_cast<T>(std::sin(static_cast<double>(c) * omega));
        row[half + quarter + i] = static_cast<T>(std::cos(static_cast<double>(c) * omega));
      }
    }
  return out;
}

template <typename T>
void add_pos_embed(TokenBatch<T>& batch) {
  batch.pos_embed = sincos_pos_embed<T>(batch.grid_rows, batch.grid_cols,
                                        batch.tokens.dim(2));
  batch.tokens = add(batch.tokens, batch.pos_embed);
}

#define AVFUSE_INSTANTIATE_TOKENIZE(T)                                                     \
  template Tensor<T> image_patches<T>(const Tensor<T>&, index_t);                          \
  template Tensor<T> unpatchify_image<T>(const Tensor<T>&, index_t, index_t, index_t,      \
                                         index_t);                                         \
  template Tensor<T> spectrogram_patches<T>(const Tensor<T>&, index_t);                    \
  template Tensor<T> unpatchify_spectrogram<T>(const Tensor<T>&, index_t, index_t,         \
                                               index_t, index_t);                          \
  template TokenBatch<T> patchify_image<T>(const Tensor<T>&, index_t, const Tensor<T>&,    \
                                           const Tensor<T>&);                              \
  template TokenBatch<T> patchify_spectrogram<T>(const Tensor<T>&, index_t,                \
                                                 const Tensor<T>&, const Tensor<T>&);      \
  template Tensor<T> sincos_pos_embed<T>(index_t, index_t, index_t);                       \
  template void add_pos_embed<T>(TokenBatch<T>&);

AVFUSE_INSTANTIATE_TOKENIZE(float)
AVFUSE_INSTANTIATE_TOKENIZE(double)

#undef AVFUSE_INSTANTIATE_TOKENIZE

}  // namespace avfuse
