#include "core/model.h"

#include <cmath>

namespace avfuse {

DecoderInputPolicy parse_decoder_policy(const std::string& s) {
  if (s == "fusion_plus_unimodal") return DecoderInputPolicy::kFusionPlusUnimodal;
  if (s == "fusion_only") return DecoderInputPolicy::kFusionOnly;
  throw ConfigError("unknown decoder input policy '" + s +
                    "' (fusion_plus_unimodal|fusion_only)");
}

std::string to_string(DecoderInputPolicy p) {
  return p == DecoderInputPolicy::kFusionPlusUnimodal ? "fusion_plus_unimodal"
                                                      : "fusion_only";
}

void DecoderConfig::validate() const {
  if (depth < 1) throw ConfigError("decoder.depth must be >= 1");
  if (dim < 1) throw ConfigError("decoder.dim must be >= 1");
  if (heads < 1 || dim % heads != 0)
    throw ConfigError("decoder.dim must be divisible by decoder.heads");
  if (dim % 4 != 0) throw ConfigError("decoder.dim must be divisible by 4");
}

void DataConfig::validate(index_t model_dim) const {
  if (image_patch <= 0 || image_size % image_patch != 0)
    throw ConfigError("data.image_size " + std::to_string(image_size) +
                      " not divisible by data.image_patch " + std::to_string(image_patch));
  if (spec_patch <= 0 || spec_bins % spec_patch != 0)
    throw ConfigError("data.spec_bins " + std::to_string(spec_bins) +
                      " not divisible by data.spec_patch " + std::to_string(spec_patch));
  if (image_channels < 1) throw ConfigError("data.image_channels must be >= 1");
  if (spec_frames < 1) throw ConfigError("data.spec_frames must be >= 1");
  if (model_dim % 4 != 0)
    throw ConfigError("model.dim must be divisible by 4 for positional embeddings");
}

template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape() != target.shape())
    throw DimensionError("mae_loss: prediction " + shape_str(pred.shape()) +
                         " vs target " + shape_str(target.shape()));
  if (pred.numel() == 0) return Tensor<T>::scalar(T(0));
  return mse(pred, target);
}

template <typename T>
MaeDecoder<T>::MaeDecoder(const DecoderConfig& cfg, index_t enc_dim, index_t patch_dim,
                          index_t grid_rows, index_t grid_cols, ParamStore<T>& store,
                          const std::string& prefix, Rng& rng)
    : cfg_(cfg), n_tokens_(grid_rows * grid_cols), patch_dim_(patch_dim) {
  cfg_.validate();
  proj_w_ = store.create(prefix + ".proj.w", {enc_dim, cfg_.dim}, Init::kXavier, rng, true);
  proj_b_ = store.create(prefix + ".proj.b", {cfg_.dim}, Init::kZeros, rng, false);
  mask_token_ = store.create(prefix + ".mask_token", {cfg_.dim}, Init::kTruncNormal02, rng,
                             false);
  pos_ = sincos_pos_embed<T>(grid_rows, grid_cols, cfg_.dim);
  for (int i = 1; i <= cfg_.depth; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), ".l%02d", i);
    blocks_.push_back(make_self_block(store, prefix + buf, cfg_.dim, cfg_.heads,
                                      cfg_.dim / cfg_.heads, 4.0, rng));
  }
  norm_.g = store.create(prefix + ".norm.g", {cfg_.dim}, Init::kOnes, rng, false);
  norm_.b = store.create(prefix + ".norm.b", {cfg_.dim}, Init::kZeros, rng, false);
  head_w_ = store.create(prefix + ".head.w", {cfg_.dim, patch_dim}, Init::kXavier, rng, true);
  head_b_ = store.create(prefix + ".head.b", {patch_dim}, Init::kZeros, rng, false);
}

template <typename T>
Tensor<T> MaeDecoder<T>::decode(const Tensor<T>& x_mm_vis, const Tensor<T>& x_mod_vis,
                                std::span<const MaskPlan> plans) const {
  index_t b = x_mod_vis.dim(0);
  if (static_cast<index_t>(plans.size()) != b)
    throw DimensionError("decode: " + std::to_string(plans.size()) + " plans for batch " +
                         std::to_string(b));
  index_t n_vis = x_mod_vis.dim(1);
  index_t n_mask = static_cast<index_t>(plans[0].masked.size());
  std::vector<std::vector<index_t>> vis_idx, msk_idx;
  for (const MaskPlan& p : plans) {
    if (p.n_tokens != n_tokens_ ||
        static_cast<index_t>(p.visible.size()) != n_vis ||
        static_cast<index_t>(p.masked.size()) != n_mask)
      throw DimensionError("decode: mask plan does not match decoder grid of " +
                           std::to_string(n_tokens_) + " tokens");
    vis_idx.push_back(p.visible);
    msk_idx.push_back(p.masked);
  }
  if (n_mask == 0) return Tensor<T>::zeros({b, 0, patch_dim_});

  const T eps = static_cast<T>(1e-6);
  Tensor<T> mm = linear(x_mm_vis, proj_w_, proj_b_);

  Tensor<T> seq;
  index_t pred_rows;
  if (cfg_.input_policy == DecoderInputPolicy::kFusionPlusUnimodal) {
    // full grid: projected visible tokens + mask tokens, then fusion tokens
    Tensor<T> visp = linear(x_mod_vis, proj_w_, proj_b_);
    Tensor<T> masks = add(Tensor<T>::zeros({b, n_mask, cfg_.dim}), mask_token_);
    Tensor<T> grid = add(scatter_tokens(visp, vis_idx, n_tokens_),
                         scatter_tokens(masks, msk_idx, n_tokens_));
    grid = add(grid, pos_);
    std::vector<Tensor<T>> parts{grid, mm};
    seq = concat<T>(parts, 1);
    pred_rows = n_tokens_;
  } else {
    // masked positions only, plus fusion tokens
    Tensor<T> pos_b = add(Tensor<T>::zeros({b, n_tokens_, cfg_.dim}), pos_);
    Tensor<T> masks = add(add(Tensor<T>::zeros({b, n_mask, cfg_.dim}), mask_token_),
                          gather_tokens(pos_b, msk_idx));
    std::vector<Tensor<T>> parts{masks, mm};
    seq = concat<T>(parts, 1);
    pred_rows = n_mask;
  }

  for (const SelfBlockParams<T>& blk : blocks_)
    seq = modality_block(seq, Tensor<T>(), blk, cfg_.heads);
  seq = layer_norm(seq, norm_.g, norm_.b, eps);
  Tensor<T> pred_full = linear(slice(seq, 1, 0, pred_rows), head_w_, head_b_);
  if (cfg_.input_policy == DecoderInputPolicy::kFusionPlusUnimodal)
    return gather_tokens(pred_full, msk_idx);
  return pred_full;
}

template <typename T>
Model<T>::Model(const FusionConfig& fusion, const DecoderConfig& decoder,
                const DataConfig& data, uint64_t init_seed)
    : data_(data) {
  fusion.validate();
  decoder.validate();
  data.validate(fusion.dim);
  Rng rng(derive_seed(init_seed, 0x1417));
  embed_v_w_ = store_.create("embed.visual.w", {data.visual_patch_dim(), fusion.dim},
                             Init::kXavier, rng, true);
  embed_v_b_ = store_.create("embed.visual.b", {fusion.dim}, Init::kZeros, rng, false);
  embed_a_w_ = store_.create("embed.audio.w", {data.audio_patch_dim(), fusion.dim},
                             Init::kXavier, rng, true);
  embed_a_b_ = store_.create("embed.audio.b", {fusion.dim}, Init::kZeros, rng, false);
  encoder_ = std::make_unique<FusionEncoder<T>>(fusion, store_, rng);
  dec_v_ = std::make_unique<MaeDecoder<T>>(decoder, fusion.dim, data.visual_patch_dim(),
                                           data.visual_grid_rows(), data.visual_grid_cols(),
                                           store_, "dec.v", rng);
  dec_a_ = std::make_unique<MaeDecoder<T>>(decoder, fusion.dim, data.audio_patch_dim(),
                                           data.audio_grid_rows(), data.audio_grid_cols(),
                                           store_, "dec.a", rng);
}

template <typename T>
TokenBatch<T> Model<T>::tokenize_images(const Tensor<T>& images) const {
  if (images.rank() != 4 || images.dim(1) != data_.image_channels ||
      images.dim(2) != data_.image_size || images.dim(3) != data_.image_size)
    throw DimensionError("tokenize_images: expected [B," + std::to_string(data_.image_channels) +
                         "," + std::to_string(data_.image_size) + "," +
                         std::to_string(data_.image_size) + "], got " +
                         shape_str(images.shape()));
  TokenBatch<T> tb = patchify_image(images, data_.image_patch, embed_v_w_, embed_v_b_);
  add_pos_embed(tb);
  return tb;
}

template <typename T>
TokenBatch<T> Model<T>::tokenize_spectrograms(const Tensor<T>& specs) const {
  if (specs.rank() != 4 || specs.dim(1) != 1 || specs.dim(2) != data_.spec_bins ||
      specs.dim(3) != data_.spec_frames)
    throw DimensionError("tokenize_spectrograms: expected [B,1," +
                         std::to_string(data_.spec_bins) + "," +
                         std::to_string(data_.spec_frames) + "], got " +
                         shape_str(specs.shape()));
  TokenBatch<T> tb = patchify_spectrogram(specs, data_.spec_patch, embed_a_w_, embed_a_b_);
  add_pos_embed(tb);
  return tb;
}

template <typename T>
EncoderOutput<T> Model<T>::encode(const Tensor<T>& images, const Tensor<T>& specs,
                                  AttnTrace<T>* trace) const {
  TokenBatch<T> tv = tokenize_images(images);
  TokenBatch<T> ta = tokenize_spectrograms(specs);
  return encoder_->forward(tv.tokens, ta.tokens, trace);
}

template <typename T>
PretrainOutput<T> Model<T>::pretrain_forward(const Tensor<T>& images, const Tensor<T>& specs,
                                             std::span<const MaskPlan> plans_v,
                                             std::span<const MaskPlan> plans_a,
                                             AttnTrace<T>* trace) const {
  TokenBatch<T> tv = tokenize_images(images);
  TokenBatch<T> ta = tokenize_spectrograms(specs);
  MaskedTokens<T> mv = apply_mask(tv, plans_v);
  MaskedTokens<T> ma = apply_mask(ta, plans_a);
  EncoderOutput<T> enc = encoder_->forward(mv.visible.tokens, ma.visible.tokens, trace);

  PretrainOutput<T> out;
  out.pred_v = dec_v_->decode(enc.fusion, enc.visual, plans_v);
  out.pred_a = dec_a_->decode(enc.fusion, enc.audio, plans_a);
  out.loss_v = mae_loss(out.pred_v, mv.targets);
  out.loss_a = mae_loss(out.pred_a, ma.targets);
  out.loss_total = add(out.loss_v, out.loss_a);
  return out;
}

template Tensor<float> mae_loss<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> mae_loss<double>(const Tensor<double>&, const Tensor<double>&);
template class MaeDecoder<float>;
template class MaeDecoder<double>;
template class Model<float>;
template class Model<double>;

}  // namespace avfuse
