#pragma once

#include <vector>

#include "core/rng.h"
#include "core/tokenize.h"

namespace avfuse {

// Disjoint visible/masked partition of one token sequence.
struct MaskPlan {
  index_t n_tokens = 0;
  std::vector<index_t> visible;  // sorted
  std::vector<index_t> masked;   // sorted
  double ratio = 0.0;
};

// Uniform random partition without replacement; |masked| = round(ratio * n).
MaskPlan sample_mask(index_t n_tokens, double ratio, Rng& rng);

template <typename T>
struct MaskedTokens {
  TokenBatch<T> visible;  // tokens [B,|V|,D], positional embeddings kept
  Tensor<T> targets;      // [B,|M|,patch_dim] raw patch contents, in M order
};

// Applies per-sample plans to a batch. All plans must partition the batch's
// token count and agree on |V| (they do when ratio and N match).
template <typename T>
MaskedTokens<T> apply_mask(const TokenBatch<T>& batch, std::span<const MaskPlan> plans);

}  // namespace avfuse
