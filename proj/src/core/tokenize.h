#pragma once

#include "core/ops.h"
#include "core/tensor.h"

namespace avfuse {

enum class Modality { kVisual, kAudio, kFusion };

// Per-modality token sequence with its grid metadata. `raw` keeps the
// pre-projection patch contents around; masked-reconstruction targets are
// read from it.
template <typename T>
struct TokenBatch {
  Tensor<T> tokens;  // [B, N, D]
  Tensor<T> raw;     // [B, N, patch_dim], no gradient history
  Modality modality = Modality::kVisual;
  index_t grid_rows = 0;
  index_t grid_cols = 0;
  index_t patch = 0;
  Tensor<T> pos_embed;  // [N, D] when attached

  index_t batch() const { return tokens.dim(0); }
  index_t n_tokens() const { return tokens.dim(1); }
};

// Flattened patch grid of an image batch [B,C,H,W] -> [B, N, patch*patch*C],
// patches in row-major grid order, elements in (channel, py, px) order.
template <typename T>
Tensor<T> image_patches(const Tensor<T>& image, index_t patch);

// Inverse of image_patches for a full patch set.
template <typename T>
Tensor<T> unpatchify_image(const Tensor<T>& patches, index_t grid_rows, index_t grid_cols,
                           index_t patch, index_t channels);

// Spectrogram batch [B,1,Fb,T]; the time axis is zero-padded up to the next
// patch multiple before gridding.
template <typename T>
Tensor<T> spectrogram_patches(const Tensor<T>& spec, index_t patch);

// Inverse of spectrogram_patches; drops the padded tail to restore t_orig.
template <typename T>
Tensor<T> unpatchify_spectrogram(const Tensor<T>& patches, index_t grid_rows,
                                 index_t grid_cols, index_t patch, index_t t_orig);

// Patch tokens through a learned linear projection, with grid metadata.
template <typename T>
TokenBatch<T> patchify_image(const Tensor<T>& image, index_t patch, const Tensor<T>& w,
                             const Tensor<T>& b);

template <typename T>
TokenBatch<T> patchify_spectrogram(const Tensor<T>& spec, index_t patch, const Tensor<T>& w,
                                   const Tensor<T>& b);

// Fixed 2D sine-cosine positional embedding, [rows*cols, D]. Deterministic;
// D must be divisible by 4.
template <typename T>
Tensor<T> sincos_pos_embed(index_t rows, index_t cols, index_t dim);

// Attaches the grid's positional embedding and adds it onto the tokens.
template <typename T>
void add_pos_embed(TokenBatch<T>& batch);

}  // namespace avfuse
