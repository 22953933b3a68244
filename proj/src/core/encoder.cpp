#include "core/encoder.h"

#include <algorithm>
#include <cmath>

namespace avfuse {

FusionMode parse_fusion_mode(const std::string& s) {
  if (s == "none") return FusionMode::kNone;
  if (s == "token") return FusionMode::kToken;
  if (s == "dense") return FusionMode::kDense;
  if (s == "factorized") return FusionMode::kFactorized;
  throw ConfigError("unknown fusion mode '" + s + "' (none|token|dense|factorized)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kNone: return "none";
    case FusionMode::kToken: return "token";
    case FusionMode::kDense: return "dense";
    case FusionMode::kFactorized: return "factorized";
  }
  return "?";
}

std::vector<int> FusionConfig::all_layers(int l) {
  std::vector<int> out(static_cast<size_t>(l));
  for (int i = 0; i < l; ++i) out[static_cast<size_t>(i)] = i + 1;
  return out;
}

bool FusionConfig::is_fusion_layer(int layer) const {
  return std::find(fusion_layers.begin(), fusion_layers.end(), layer) != fusion_layers.end();
}

void FusionConfig::validate() const {
  if (layers < 1) throw ConfigError("model.layers must be >= 1");
  if (dim < 1) throw ConfigError("model.dim must be >= 1");
  if (heads < 1) throw ConfigError("model.heads must be >= 1");
  if (dim % heads != 0)
    throw ConfigError("model.dim " + std::to_string(dim) + " not divisible by model.heads " +
                      std::to_string(heads));
  if (attn_dim < 1) throw ConfigError("model.attn_dim must be >= 1");
  if (mlp_ratio_modality <= 0 || mlp_ratio_fusion <= 0)
    throw ConfigError("mlp ratios must be positive");
  for (size_t i = 0; i < fusion_layers.size(); ++i) {
    int l = fusion_layers[i];
    if (l < 1 || l > layers)
      throw ConfigError("model.fusion_layers entry " + std::to_string(l) +
                        " outside {1.." + std::to_string(layers) + "}");
    if (i > 0 && fusion_layers[i - 1] >= l)
      throw ConfigError("model.fusion_layers must be strictly increasing");
  }
  bool none = fusion_mode == FusionMode::kNone;
  if (none != fusion_layers.empty())
    throw ConfigError(none ? "fusion_mode none requires an empty fusion layer set"
                           : "fusion_mode " + to_string(fusion_mode) +
                                 " requires a nonempty fusion layer set");
  if (!none && fusion_tokens < 1)
    throw ConfigError("model.fusion_tokens must be >= 1 when fusion is enabled");
  if (fusion_mode == FusionMode::kFactorized && (agg_tokens_a < 1 || agg_tokens_v < 1))
    throw ConfigError("factorized fusion requires at least one aggregation token per modality");
}

namespace {

template <typename T>
LayerNormParams<T> make_ln(ParamStore<T>& store, const std::string& prefix, index_t dim,
                           Rng& rng) {
  LayerNormParams<T> p;
  p.g = store.create(prefix + ".g", {dim}, Init::kOnes, rng, false);
  p.b = store.create(prefix + ".b", {dim}, Init::kZeros, rng, false);
  return p;
}

template <typename T>
AttnParams<T> make_attn(ParamStore<T>& store, const std::string& prefix, index_t dim,
                        int heads, index_t dk, Rng& rng) {
  index_t dv = dim / heads;
  AttnParams<T> p;
  p.wq = store.create(prefix + ".wq", {dim, heads * dk}, Init::kXavier, rng, true);
  p.bq = store.create(prefix + ".bq", {heads * dk}, Init::kZeros, rng, false);
  p.wk = store.create(prefix + ".wk", {dim, heads * dk}, Init::kXavier, rng, true);
  p.bk = store.create(prefix + ".bk", {heads * dk}, Init::kZeros, rng, false);
  p.wv = store.create(prefix + ".wv", {dim, heads * dv}, Init::kXavier, rng, true);
  p.bv = store.create(prefix + ".bv", {heads * dv}, Init::kZeros, rng, false);
  p.wo = store.create(prefix + ".wo", {heads * dv, dim}, Init::kXavier, rng, true);
  p.bo = store.create(prefix + ".bo", {dim}, Init::kZeros, rng, false);
  return p;
}

template <typename T>
MlpParams<T> make_mlp(ParamStore<T>& store, const std::string& prefix, index_t dim,
                      double ratio, Rng& rng) {
  index_t hidden = std::max<index_t>(1, static_cast<index_t>(std::llround(
                                            static_cast<double>(dim) * ratio)));
  MlpParams<T> p;
  p.w1 = store.create(prefix + ".w1", {dim, hidden}, Init::kXavier, rng, true);
  p.b1 = store.create(prefix + ".b1", {hidden}, Init::kZeros, rng, false);
  p.w2 = store.create(prefix + ".w2", {hidden, dim}, Init::kXavier, rng, true);
  p.b2 = store.create(prefix + ".b2", {dim}, Init::kZeros, rng, false);
  return p;
}

constexpr double kLnEps = 1e-6;

}  // namespace

template <typename T>
SelfBlockParams<T> make_self_block(ParamStore<T>& store, const std::string& prefix,
                                   index_t dim, int heads, index_t dk, double mlp_ratio,
                                   Rng& rng) {
  SelfBlockParams<T> p;
  p.ln1 = make_ln(store, prefix + ".ln1", dim, rng);
  p.attn = make_attn(store, prefix + ".attn", dim, heads, dk, rng);
  p.ln2 = make_ln(store, prefix + ".ln2", dim, rng);
  p.mlp = make_mlp(store, prefix + ".mlp", dim, mlp_ratio, rng);
  return p;
}

template <typename T>
CrossBlockParams<T> make_cross_block(ParamStore<T>& store, const std::string& prefix,
                                     index_t dim, int heads, index_t dk, double mlp_ratio,
                                     Rng& rng) {
  CrossBlockParams<T> p;
  p.ln_q = make_ln(store, prefix + ".ln_q", dim, rng);
  p.ln_kv = make_ln(store, prefix + ".ln_kv", dim, rng);
  p.attn = make_attn(store, prefix + ".attn", dim, heads, dk, rng);
  p.ln2 = make_ln(store, prefix + ".ln2", dim, rng);
  p.mlp = make_mlp(store, prefix + ".mlp", dim, mlp_ratio, rng);
  return p;
}

template <typename T>
Tensor<T> multi_head_attention(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                               const AttnParams<T>& p, int heads, index_t dk, index_t dv,
                               AttnTrace<T>* trace) {
  if (q_in.rank() != 3 || kv_in.rank() != 3)
    throw DimensionError("attention expects [B,N,D] inputs, got " + shape_str(q_in.shape()) +
                         " and " + shape_str(kv_in.shape()));
  if (q_in.dim(0) != kv_in.dim(0))
    throw DimensionError("attention batch mismatch: " + shape_str(q_in.shape()) + " vs " +
                         shape_str(kv_in.shape()));
  index_t b = q_in.dim(0), nq = q_in.dim(1), nk = kv_in.dim(1);
  index_t h = heads;

  auto split = [&](const Tensor<T>& x, index_t n, index_t hd) {
    // [B,N,h*hd] -> [B,h,N,hd]
    return transpose(reshape(x, {b, n, h, hd}), 1, 2);
  };
  Tensor<T> q = split(linear(q_in, p.wq, p.bq), nq, dk);
  Tensor<T> k = split(linear(kv_in, p.wk, p.bk), nk, dk);
  Tensor<T> v = split(linear(kv_in, p.wv, p.bv), nk, dv);

  Tensor<T> scores = scale(matmul(q, transpose(k, -1, -2)),
                           static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
  Tensor<T> probs = softmax(scores, -1);
  if (trace) trace->push_back(probs);
  Tensor<T> ctx = matmul(probs, v);                       // [B,h,Nq,dv]
  ctx = reshape(transpose(ctx, 1, 2), {b, nq, h * dv});   // [B,Nq,h*dv]
  return linear(ctx, p.wo, p.bo);
}

template <typename T>
Tensor<T> mlp_forward(const Tensor<T>& x, const MlpParams<T>& p) {
  return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

template <typename T>
Tensor<T> modality_block(const Tensor<T>& x, const Tensor<T>& fusion_prev,
                         const SelfBlockParams<T>& p, int heads, AttnTrace<T>* trace) {
  index_t n = x.dim(1), d = x.dim(2);
  index_t hd = d / heads;
  Tensor<T> keys = x;
  if (fusion_prev.defined()) {
    std::vector<Tensor<T>> parts{x, fusion_prev};
    keys = concat<T>(parts, 1);
  }
  Tensor<T> normed = layer_norm(keys, p.ln1.g, p.ln1.b, static_cast<T>(kLnEps));
  Tensor<T> qn = fusion_prev.defined() ? slice(normed, 1, 0, n) : normed;
  Tensor<T> h = add(x, multi_head_attention(qn, normed, p.attn, heads, hd, hd, trace));
  return add(h, mlp_forward(layer_norm(h, p.ln2.g, p.ln2.b, static_cast<T>(kLnEps)), p.mlp));
}

template <typename T>
Tensor<T> token_fusion_block(const Tensor<T>& x_mm, const Tensor<T>& x_v,
                             const Tensor<T>& x_a, const SelfBlockParams<T>& p, int heads,
                             index_t attn_dim, AttnTrace<T>* trace) {
  index_t f = x_mm.dim(1), d = x_mm.dim(2);
  std::vector<Tensor<T>> parts{x_mm, x_v, x_a};
  Tensor<T> all = concat<T>(parts, 1);
  Tensor<T> normed = layer_norm(all, p.ln1.g, p.ln1.b, static_cast<T>(kLnEps));
  Tensor<T> qn = slice(normed, 1, 0, f);
  Tensor<T> h = add(x_mm, multi_head_attention(qn, normed, p.attn, heads, attn_dim,
                                               d / heads, trace));
  return add(h, mlp_forward(layer_norm(h, p.ln2.g, p.ln2.b, static_cast<T>(kLnEps)), p.mlp));
}

template <typename T>
Tensor<T> cross_attention(const Tensor<T>& queries, const Tensor<T>& keys_values,
                          const CrossBlockParams<T>& p, int heads, index_t attn_dim,
                          AttnTrace<T>* trace) {
  if (queries.dim(2) != keys_values.dim(2))
    throw DimensionError("cross_attention: token dims differ: " + shape_str(queries.shape()) +
                         " vs " + shape_str(keys_values.shape()));
  index_t d = queries.dim(2);
  Tensor<T> qn = layer_norm(queries, p.ln_q.g, p.ln_q.b, static_cast<T>(kLnEps));
  Tensor<T> kn = layer_norm(keys_values, p.ln_kv.g, p.ln_kv.b, static_cast<T>(kLnEps));
  Tensor<T> z =
      add(queries, multi_head_attention(qn, kn, p.attn, heads, attn_dim, d / heads, trace));
  return add(z, mlp_forward(layer_norm(z, p.ln2.g, p.ln2.b, static_cast<T>(kLnEps)), p.mlp));
}

template <typename T>
Tensor<T> interaction_grid(const Tensor<T>& x_a, const Tensor<T>& x_v, const Tensor<T>& w_a,
                           const Tensor<T>& w_v) {
  if (x_a.rank() != 3 || x_v.rank() != 3)
    throw DimensionError("interaction_grid expects [B,N,D] inputs, got " +
                         shape_str(x_a.shape()) + " and " + shape_str(x_v.shape()));
  if (x_a.dim(0) != x_v.dim(0))
    throw DimensionError("interaction_grid: batch mismatch");
  index_t b = x_a.dim(0), na = x_a.dim(1), nv = x_v.dim(1), d = w_a.dim(1);
  Tensor<T> pa = reshape(matmul(x_a, w_a), {b, na, 1, d});
  Tensor<T> pv = reshape(matmul(x_v, w_v), {b, 1, nv, d});
  return reshape(add(pa, pv), {b, na * nv, d});
}

template <typename T>
Tensor<T> dense_fusion_block(const Tensor<T>& x_mm, const Tensor<T>& x_a,
                             const Tensor<T>& x_v, const Tensor<T>& w_a,
                             const Tensor<T>& w_v, const CrossBlockParams<T>& p, int heads,
                             index_t attn_dim, AttnTrace<T>* trace) {
  return cross_attention(x_mm, interaction_grid(x_a, x_v, w_a, w_v), p, heads, attn_dim,
                         trace);
}

template <typename T>
Tensor<T> aggregate_tokens(const Tensor<T>& agg_prev, const Tensor<T>& x_mod,
                           const CrossBlockParams<T>& p, int heads, index_t attn_dim,
                           AttnTrace<T>* trace) {
  return cross_attention(agg_prev, x_mod, p, heads, attn_dim, trace);
}

template <typename T>
FusionEncoder<T>::FusionEncoder(const FusionConfig& cfg, ParamStore<T>& store, Rng& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const index_t d = cfg_.dim;
  if (cfg_.fusion_tokens > 0)
    fusion_tokens_ = store.create("tokens.fusion", {cfg_.fusion_tokens, d},
                                  Init::kTruncNormal02, rng, false);
  if (cfg_.fusion_mode == FusionMode::kFactorized) {
    agg_tokens_a_ = store.create("tokens.agg_a", {cfg_.agg_tokens_a, d},
                                 Init::kTruncNormal02, rng, false);
    agg_tokens_v_ = store.create("tokens.agg_v", {cfg_.agg_tokens_v, d},
                                 Init::kTruncNormal02, rng, false);
  }
  for (int l = 1; l <= cfg_.layers; ++l) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "enc.l%02d", l);
    std::string prefix(buf);
    Layer layer;
    layer.visual = make_self_block(store, prefix + ".v", d, cfg_.heads, d / cfg_.heads,
                                   cfg_.mlp_ratio_modality, rng);
    layer.audio = make_self_block(store, prefix + ".a", d, cfg_.heads, d / cfg_.heads,
                                  cfg_.mlp_ratio_modality, rng);
    if (cfg_.is_fusion_layer(l)) {
      switch (cfg_.fusion_mode) {
        case FusionMode::kNone:
          break;
        case FusionMode::kToken:
          layer.mm_self = make_self_block(store, prefix + ".mm", d, cfg_.heads,
                                          cfg_.attn_dim, cfg_.mlp_ratio_fusion, rng);
          break;
        case FusionMode::kFactorized:
          layer.agg_a = make_cross_block(store, prefix + ".agg_a", d, cfg_.heads,
                                         cfg_.attn_dim, cfg_.mlp_ratio_fusion, rng);
          layer.agg_v = make_cross_block(store, prefix + ".agg_v", d, cfg_.heads,
                                         cfg_.attn_dim, cfg_.mlp_ratio_fusion, rng);
          [[fallthrough]];
        case FusionMode::kDense:
          layer.grid_wa = store.create(prefix + ".grid.wa", {d, d}, Init::kXavier, rng, true);
          layer.grid_wv = store.create(prefix + ".grid.wv", {d, d}, Init::kXavier, rng, true);
          layer.mm_cross = make_cross_block(store, prefix + ".mm", d, cfg_.heads,
                                            cfg_.attn_dim, cfg_.mlp_ratio_fusion, rng);
          break;
      }
    }
    layers_.push_back(std::move(layer));
  }
}

template <typename T>
EncoderOutput<T> FusionEncoder<T>::forward(const Tensor<T>& x_v_in, const Tensor<T>& x_a_in,
                                           AttnTrace<T>* trace) const {
  if (x_v_in.rank() != 3 || x_a_in.rank() != 3)
    throw DimensionError("encoder expects [B,N,D] token tensors");
  if (x_v_in.dim(2) != cfg_.dim || x_a_in.dim(2) != cfg_.dim)
    throw DimensionError("encoder: token dim " + std::to_string(x_v_in.dim(2)) + "/" +
                         std::to_string(x_a_in.dim(2)) + " != model dim " +
                         std::to_string(cfg_.dim));
  if (x_v_in.dim(0) != x_a_in.dim(0))
    throw DimensionError("encoder: batch sizes differ across modalities");
  index_t b = x_v_in.dim(0);

  auto broadcast_tokens = [&](const Tensor<T>& tok) {
    if (!tok.defined()) return Tensor<T>();
    return add(Tensor<T>::zeros({b, tok.dim(0), tok.dim(1)}), tok);
  };

  Tensor<T> xv = x_v_in, xa = x_a_in;
  Tensor<T> x_mm = broadcast_tokens(fusion_tokens_);
  Tensor<T> agg_a = broadcast_tokens(agg_tokens_a_);
  Tensor<T> agg_v = broadcast_tokens(agg_tokens_v_);

  for (int l = 1; l <= cfg_.layers; ++l) {
    const Layer& lp = layers_[static_cast<size_t>(l - 1)];
    const bool fuse = cfg_.fusion_mode != FusionMode::kNone && cfg_.is_fusion_layer(l);
    if (fuse) {
      Tensor<T> x_mm_prev = x_mm;
      switch (cfg_.fusion_mode) {
        case FusionMode::kToken:
          x_mm = token_fusion_block(x_mm, xv, xa, *lp.mm_self, cfg_.heads, cfg_.attn_dim,
                                    trace);
          break;
        case FusionMode::kDense:
          x_mm = dense_fusion_block(x_mm, xa, xv, lp.grid_wa, lp.grid_wv, *lp.mm_cross,
                                    cfg_.heads, cfg_.attn_dim, trace);
          break;
        case FusionMode::kFactorized: {
          if (!cfg_.agg_identity_hook) {
            agg_a = aggregate_tokens(agg_a, xa, *lp.agg_a, cfg_.heads, cfg_.attn_dim, trace);
            agg_v = aggregate_tokens(agg_v, xv, *lp.agg_v, cfg_.heads, cfg_.attn_dim, trace);
          } else {
            agg_a = xa;
            agg_v = xv;
          }
          x_mm = dense_fusion_block(x_mm, agg_a, agg_v, lp.grid_wa, lp.grid_wv, *lp.mm_cross,
                                    cfg_.heads, cfg_.attn_dim, trace);
          break;
        }
        case FusionMode::kNone:
          break;
      }
      xv = modality_block(xv, x_mm_prev, lp.visual, cfg_.heads, trace);
      xa = modality_block(xa, x_mm_prev, lp.audio, cfg_.heads, trace);
    } else {
      xv = modality_block(xv, Tensor<T>(), lp.visual, cfg_.heads, trace);
      xa = modality_block(xa, Tensor<T>(), lp.audio, cfg_.heads, trace);
    }
  }
  EncoderOutput<T> out;
  out.visual = xv;
  out.audio = xa;
  out.fusion = x_mm;
  return out;
}

#define AVFUSE_INSTANTIATE_ENCODER(T)                                                       \
  template SelfBlockParams<T> make_self_block<T>(ParamStore<T>&, const std::string&,        \
                                                 index_t, int, index_t, double, Rng&);      \
  template CrossBlockParams<T> make_cross_block<T>(ParamStore<T>&, const std::string&,      \
                                                   index_t, int, index_t, double, Rng&);    \
  template Tensor<T> multi_head_attention<T>(const Tensor<T>&, const Tensor<T>&,            \
                                             const AttnParams<T>&, int, index_t, index_t,   \
                                             AttnTrace<T>*);                                \
  template Tensor<T> mlp_forward<T>(const Tensor<T>&, const MlpParams<T>&);                 \
  template Tensor<T> modality_block<T>(const Tensor<T>&, const Tensor<T>&,                  \
                                       const SelfBlockParams<T>&, int, AttnTrace<T>*);      \
  template Tensor<T> token_fusion_block<T>(const Tensor<T>&, const Tensor<T>&,              \
                                           const Tensor<T>&, const SelfBlockParams<T>&,    \
                                           int, index_t, AttnTrace<T>*);                    \
  template Tensor<T> cross_attention<T>(const Tensor<T>&, const Tensor<T>&,                 \
                                        const CrossBlockParams<T>&, int, index_t,           \
                                        AttnTrace<T>*);                                     \
  template Tensor<T> interaction_grid<T>(const Tensor<T>&, const Tensor<T>&,                \
                                         const Tensor<T>&, const Tensor<T>&);               \
  template Tensor<T> dense_fusion_block<T>(const Tensor<T>&, const Tensor<T>&,              \
                                           const Tensor<T>&, const Tensor<T>&,              \
                                           const Tensor<T>&, const CrossBlockParams<T>&,    \
                                           int, index_t, AttnTrace<T>*);                    \
  template Tensor<T> aggregate_tokens<T>(const Tensor<T>&, const Tensor<T>&,                \
                                         const CrossBlockParams<T>&, int, index_t,          \
                                         AttnTrace<T>*);                                    \
  template class FusionEncoder<T>;

AVFUSE_INSTANTIATE_ENCODER(float)
AVFUSE_INSTANTIATE_ENCODER(double)

#undef AVFUSE_INSTANTIATE_ENCODER

}  // namespace avfuse
