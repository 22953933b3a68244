#include "core/masking.h"

#include <algorithm>
#include <cmath>

namespace avfuse {

MaskPlan sample_mask(index_t n_tokens, double ratio, Rng& rng) {
  if (n_tokens < 0) throw ConfigError("sample_mask: negative token count");
  if (!(ratio >= 0.0 && ratio < 1.0))
    throw ConfigError("sample_mask: ratio must lie in [0,1), got " + std::to_string(ratio));
  MaskPlan plan;
  plan.n_tokens = n_tokens;
  plan.ratio = ratio;
  index_t n_mask = static_cast<index_t>(std::lround(ratio * static_cast<double>(n_tokens)));
  std::vector<index_t> perm = rng.permutation(n_tokens);
  plan.masked.assign(perm.begin(), perm.begin() + n_mask);
  plan.visible.assign(perm.begin() + n_mask, perm.end());
  std::sort(plan.masked.begin(), plan.masked.end());
  std::sort(plan.visible.begin(), plan.visible.end());
  return plan;
}

template <typename T>
MaskedTokens<T> apply_mask(const TokenBatch<T>& batch, std::span<const MaskPlan> plans) {
  index_t b = batch.batch(), n = batch.n_tokens();
  if (static_cast<index_t>(plans.size()) != b)
    throw DimensionError("apply_mask: " + std::to_string(plans.size()) + " plans for batch " +
                         std::to_string(b));
  for (const MaskPlan& p : plans)
    if (p.n_tokens != n)
      throw DimensionError("apply_mask: plan covers " + std::to_string(p.n_tokens) +
                           " tokens, batch has " + std::to_string(n));
  std::vector<std::vector<index_t>> vis_idx, msk_idx;
  vis_idx.reserve(plans.size());
  msk_idx.reserve(plans.size());
  for (const MaskPlan& p : plans) {
    vis_idx.push_back(p.visible);
    msk_idx.push_back(p.masked);
  }
  MaskedTokens<T> out;
  out.visible = batch;
  out.visible.tokens = gather_tokens(batch.tokens, vis_idx);
  if (batch.raw.defined()) out.visible.raw = gather_tokens(batch.raw, vis_idx);
  if (!plans.empty() && !plans[0].masked.empty()) {
    out.targets = gather_tokens(batch.raw.detach(), msk_idx);
  } else {
    out.targets = Tensor<T>::zeros({b, 0, batch.raw.defined() ? batch.raw.dim(2) : 0});
  }
  return out;
}

template MaskedTokens<float> apply_mask<float>(const TokenBatch<float>&,
                                               std::span<const MaskPlan>);
template MaskedTokens<double> apply_mask<double>(const TokenBatch<double>&,
                                                 std::span<const MaskPlan>);

}  // namespace avfuse
