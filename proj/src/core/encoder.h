#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/ops.h"
#include "core/params.h"

namespace avfuse {

enum class FusionMode { kNone, kToken, kDense, kFactorized };

FusionMode parse_fusion_mode(const std::string& s);
std::string to_string(FusionMode m);

struct FusionConfig {
  int layers = 4;              // L
  index_t dim = 64;            // D, shared across branches
  int heads = 4;
  index_t attn_dim = 16;       // per-head similarity dim on the fusion path
  index_t fusion_tokens = 16;  // F
  index_t agg_tokens_a = 8;
  index_t agg_tokens_v = 8;
  double mlp_ratio_modality = 4.0;
  double mlp_ratio_fusion = 1.0;
  FusionMode fusion_mode = FusionMode::kFactorized;
  std::vector<int> fusion_layers;  // 1-based, sorted subset of {1..L}

  // Test hook: factorized fusion consumes the modality tokens directly
  // instead of updating aggregation tokens.
  bool agg_identity_hook = false;

  static std::vector<int> all_layers(int l);
  bool is_fusion_layer(int layer) const;
  void validate() const;
};

template <typename T>
struct LayerNormParams {
  Tensor<T> g, b;
};

template <typename T>
struct AttnParams {
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename T>
struct MlpParams {
  Tensor<T> w1, b1, w2, b2;
};

template <typename T>
struct SelfBlockParams {
  LayerNormParams<T> ln1, ln2;
  AttnParams<T> attn;
  MlpParams<T> mlp;
};

template <typename T>
struct CrossBlockParams {
  LayerNormParams<T> ln_q, ln_kv, ln2;
  AttnParams<T> attn;
  MlpParams<T> mlp;
};

// Optional capture of attention probability tensors [B,h,Nq,Nk].
template <typename T>
using AttnTrace = std::vector<Tensor<T>>;

// Scaled dot-product multi-head attention. Weight matrices are applied on
// the right of row-vector tokens; per-head similarity runs in dk dims and
// values in dv dims.
template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                               const AttnParams<T>& p, int heads, index_t dk, index_t dv,
                               AttnTrace<T>* trace = nullptr);

template <typename T>
Tensor<T> mlp_forward(const Tensor<T>& x, const MlpParams<T>& p);

// Pre-norm transformer block. Queries are the N modality tokens; keys and
// values span those tokens concatenated with the fusion tokens when
// `fusion_prev` is defined, reducing to plain self-attention otherwise.
template <typename T>
Tensor<T> modality_block(const Tensor<T>& x, const Tensor<T>& fusion_prev,
                         const SelfBlockParams<T>& p, int heads,
                         AttnTrace<T>* trace = nullptr);

// MBT-style baseline: fusion tokens self-attend over [X_mm; X_v; X_a].
template <typename T>
Tensor<T> token_fusion_block(const Tensor<T>& x_mm, const Tensor<T>& x_v,
                             const Tensor<T>& x_a, const SelfBlockParams<T>& p, int heads,
                             index_t attn_dim, AttnTrace<T>* trace = nullptr);

// Cross-attention block with residual and residual MLP (pre-norm).
template <typename T>
Tensor<T> cross_attention(const Tensor<T>& queries, const Tensor<T>& keys_values,
                          const CrossBlockParams<T>& p, int heads, index_t attn_dim,
                          AttnTrace<T>* trace = nullptr);

// Explicit materialization of all pairwise interactions: row i*n_v + j is
// x_a[i] @ w_a + x_v[j] @ w_v. The materialized size is the point; this is
// the cost the benchmark measures.
template <typename T>
Tensor<T> interaction_grid(const Tensor<T>& x_a, const Tensor<T>& x_v, const Tensor<T>& w_a,
                           const Tensor<T>& w_v);

template <typename T>
Tensor<T> dense_fusion_block(const Tensor<T>& x_mm, const Tensor<T>& x_a,
                             const Tensor<T>& x_v, const Tensor<T>& w_a,
                             const Tensor<T>& w_v, const CrossBlockParams<T>& p, int heads,
                             index_t attn_dim, AttnTrace<T>* trace = nullptr);

// Aggregation tokens cross-attend over the modality tokens.
template <typename T>
Tensor<T> aggregate_tokens(const Tensor<T>& agg_prev, const Tensor<T>& x_mod,
                           const CrossBlockParams<T>& p, int heads, index_t attn_dim,
                           AttnTrace<T>* trace = nullptr);

template <typename T>
struct EncoderOutput {
  Tensor<T> visual;  // [B, n_v, D]
  Tensor<T> audio;   // [B, n_a, D]
  Tensor<T> fusion;  // [B, F, D]
};

// Three-branch encoder. Per fusion layer: aggregation tokens update first
// (factorized mode), then the fusion tokens, then both modality branches,
// which attend to the previous layer's fusion tokens. Layers outside the
// fusion set run the modality blocks without fusion keys.
template <typename T>
class FusionEncoder {
 public:
  FusionEncoder(const FusionConfig& cfg, ParamStore<T>& store, Rng& rng);

  EncoderOutput<T> forward(const Tensor<T>& x_v, const Tensor<T>& x_a,
                           AttnTrace<T>* trace = nullptr) const;

  const FusionConfig& config() const { return cfg_; }

 private:
  struct Layer {
    SelfBlockParams<T> visual, audio;
    // token fusion
    std::optional<SelfBlockParams<T>> mm_self;
    // dense / factorized
    Tensor<T> grid_wa, grid_wv;
    std::optional<CrossBlockParams<T>> mm_cross;
    std::optional<CrossBlockParams<T>> agg_a, agg_v;
  };

  FusionConfig cfg_;
  Tensor<T> fusion_tokens_;  // [F, D]
  Tensor<T> agg_tokens_a_, agg_tokens_v_;
  std::vector<Layer> layers_;
};

extern template class FusionEncoder<float>;
extern template class FusionEncoder<double>;

// Shared builders (the decoder reuses the same block layout).
template <typename T>
SelfBlockParams<T> make_self_block(ParamStore<T>& store, const std::string& prefix,
                                   index_t dim, int heads, index_t dk, double mlp_ratio,
                                   Rng& rng);
template <typename T>
CrossBlockParams<T> make_cross_block(ParamStore<T>& store, const std::string& prefix,
                                     index_t dim, int heads, index_t dk, double mlp_ratio,
                                     Rng& rng);

}  // namespace avfuse
