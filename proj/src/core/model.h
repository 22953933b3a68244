#pragma once

#include <span>

#include "core/encoder.h"
#include "core/masking.h"
#include "core/synthetic.h"
#include "core/tokenize.h"

namespace avfuse {

enum class DecoderInputPolicy { kFusionPlusUnimodal, kFusionOnly };

DecoderInputPolicy parse_decoder_policy(const std::string& s);
std::string to_string(DecoderInputPolicy p);

struct DecoderConfig {
  int depth = 2;
  index_t dim = 64;  // D_dec
  int heads = 4;
  DecoderInputPolicy input_policy = DecoderInputPolicy::kFusionPlusUnimodal;
  void validate() const;
};

// Geometry of the model inputs.
struct DataConfig {
  index_t image_size = 64;
  index_t image_channels = 3;
  index_t image_patch = 8;
  index_t spec_bins = 32;
  index_t spec_frames = 48;
  index_t spec_patch = 8;

  index_t visual_grid_rows() const { return image_size / image_patch; }
  index_t visual_grid_cols() const { return image_size / image_patch; }
  index_t visual_tokens() const { return visual_grid_rows() * visual_grid_cols(); }
  index_t visual_patch_dim() const { return image_patch * image_patch * image_channels; }
  index_t audio_grid_rows() const { return spec_bins / spec_patch; }
  index_t audio_grid_cols() const { return (spec_frames + spec_patch - 1) / spec_patch; }
  index_t audio_tokens() const { return audio_grid_rows() * audio_grid_cols(); }
  index_t audio_patch_dim() const { return spec_patch * spec_patch; }
  void validate(index_t model_dim) const;
};

// Mean over masked tokens and elements of the squared difference.
template <typename T>
Tensor<T> mae_loss(const Tensor<T>& pred, const Tensor<T>& target);

// Modality-specific MAE decoder: mask tokens at masked positions, fixed
// positional embeddings, a small transformer, and a linear head back to raw
// patch values.
template <typename T>
class MaeDecoder {
 public:
  MaeDecoder(const DecoderConfig& cfg, index_t enc_dim, index_t patch_dim, index_t grid_rows,
             index_t grid_cols, ParamStore<T>& store, const std::string& prefix, Rng& rng);

  // Predicts raw patches at masked positions, [B,|M|,patch_dim] in M order.
  Tensor<T> decode(const Tensor<T>& x_mm_vis, const Tensor<T>& x_mod_vis,
                   std::span<const MaskPlan> plans) const;

  const DecoderConfig& config() const { return cfg_; }

 private:
  DecoderConfig cfg_;
  index_t n_tokens_, patch_dim_;
  Tensor<T> proj_w_, proj_b_;  // enc_dim -> dec dim
  Tensor<T> mask_token_;       // [dec dim]
  Tensor<T> pos_;              // [N, dec dim], fixed
  std::vector<SelfBlockParams<T>> blocks_;
  LayerNormParams<T> norm_;
  Tensor<T> head_w_, head_b_;
};

template <typename T>
struct PretrainOutput {
  Tensor<T> loss_total, loss_v, loss_a;  // rank-0 scalars on the graph
  Tensor<T> pred_v, pred_a;              // [B,|M|,patch_dim]
};

// Encoder + the two decoders + patch embeddings, owning one parameter store.
template <typename T>
class Model {
 public:
  Model(const FusionConfig& fusion, const DecoderConfig& decoder, const DataConfig& data,
        uint64_t init_seed);

  ParamStore<T>& params() { return store_; }
  const ParamStore<T>& params() const { return store_; }
  const FusionConfig& fusion_config() const { return encoder_->config(); }
  const DataConfig& data_config() const { return data_; }

  TokenBatch<T> tokenize_images(const Tensor<T>& images) const;
  TokenBatch<T> tokenize_spectrograms(const Tensor<T>& specs) const;

  // Full (unmasked) encoding.
  EncoderOutput<T> encode(const Tensor<T>& images, const Tensor<T>& specs,
                          AttnTrace<T>* trace = nullptr) const;

  // Masked-reconstruction forward for one batch.
  PretrainOutput<T> pretrain_forward(const Tensor<T>& images, const Tensor<T>& specs,
                                     std::span<const MaskPlan> plans_v,
                                     std::span<const MaskPlan> plans_a,
                                     AttnTrace<T>* trace = nullptr) const;

  const MaeDecoder<T>& visual_decoder() const { return *dec_v_; }
  const MaeDecoder<T>& audio_decoder() const { return *dec_a_; }
  const FusionEncoder<T>& encoder() const { return *encoder_; }

 private:
  DataConfig data_;
  ParamStore<T> store_;
  Tensor<T> embed_v_w_, embed_v_b_, embed_a_w_, embed_a_b_;
  std::unique_ptr<FusionEncoder<T>> encoder_;
  std::unique_ptr<MaeDecoder<T>> dec_v_, dec_a_;
};

extern template class MaeDecoder<float>;
extern template class MaeDecoder<double>;
extern template class Model<float>;
extern template class Model<double>;

}  // namespace avfuse
