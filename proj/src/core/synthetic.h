#pragma once

#include <vector>

#include "core/rng.h"
#include "core/tensor.h"

namespace avfuse {

// Paired audio-visual sample with two independent latent factors. class_id
// drives a shared pattern in both modalities; cross_label is a joint
// function of the per-modality factors, so neither modality alone can
// predict it above chance.
template <typename T>
struct SyntheticAVSample {
  Tensor<T> image;        // [C,H,W]
  Tensor<T> spectrogram;  // [1,Fb,Tm]
  int class_id = 0;
  int cross_label = 0;
  int visual_factor = 0;
  int audio_factor = 0;
};

struct SyntheticSpec {
  int classes = 4;
  index_t image_size = 64;
  index_t image_channels = 3;
  index_t spec_bins = 32;
  index_t spec_frames = 48;
  double noise = 0.1;
  double class_amp = 0.6;
  double factor_amp = 1.0;
};

// Deterministic given the rng state. cross_label = (visual_factor +
// audio_factor) mod classes.
template <typename T>
std::vector<SyntheticAVSample<T>> generate_synthetic_batch(const SyntheticSpec& spec, int n,
                                                           Rng& rng);

template <typename T>
std::vector<SyntheticAVSample<T>> generate_synthetic_batch(const SyntheticSpec& spec, int n,
                                                           uint64_t seed);

// Stacks per-sample tensors into batch tensors [B,C,H,W] / [B,1,Fb,Tm].
template <typename T>
Tensor<T> stack_images(const std::vector<SyntheticAVSample<T>>& samples);
template <typename T>
Tensor<T> stack_spectrograms(const std::vector<SyntheticAVSample<T>>& samples);

}  // namespace avfuse
