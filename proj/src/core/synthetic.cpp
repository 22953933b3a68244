#include "core/synthetic.h"

#include <cmath>

namespace avfuse {

namespace {
constexpr double kTwoPi = 6.283185307179586;
}

template <typename T>
std::vector<SyntheticAVSample<T>> generate_synthetic_batch(const SyntheticSpec& spec, int n,
                                                           Rng& rng) {
  if (spec.classes < 2) throw ConfigError("synthetic data requires at least 2 classes");
  const index_t h = spec.image_size, w = spec.image_size, c = spec.image_channels;
  const index_t fb = spec.spec_bins, tm = spec.spec_frames;
  std::vector<SyntheticAVSample<T>> out;
  out.reserve(static_cast<size_t>(n));
  for (int s = 0; s < n; ++s) {
    SyntheticAVSample<T> smp;
    smp.class_id = static_cast<int>(rng.uniform_int(spec.classes));
    smp.visual_factor = static_cast<int>(rng.uniform_int(spec.classes));
    smp.audio_factor = static_cast<int>(rng.uniform_int(spec.classes));
    smp.cross_label = (smp.visual_factor + smp.audio_factor) % spec.classes;

    // image: class-keyed horizontal bands + factor-keyed vertical stripes
    smp.image = Tensor<T>::zeros({c, h, w});
    T* im = smp.image.data_mut().data();
    const double fc = smp.class_id + 1;
    const double fv = smp.visual_factor + 1;
    for (index_t ch = 0; ch < c; ++ch)
      for (index_t y = 0; y < h; ++y)
        for (index_t x = 0; x < w; ++x) {
          double klass = std::sin(kTwoPi * fc * static_cast<double>(y) / static_cast<double>(h) +
                                  0.7 * static_cast<double>(ch));
          double fact = std::sin(kTwoPi * fv * static_cast<double>(x) / static_cast<double>(w) +
                                 0.4 * static_cast<double>(ch));
          im[(ch * h + y) * w + x] = static_cast<T>(
              spec.class_amp * klass + spec.factor_amp * fact + spec.noise * rng.normal());
        }

    // spectrogram: class-keyed frequency band + factor-keyed temporal tone
    smp.spectrogram = Tensor<T>::zeros({1, fb, tm});
    T* sp = smp.spectrogram.data_mut().data();
    const double band_mu = (smp.class_id + 0.5) * static_cast<double>(fb) / spec.classes;
    const double band_sigma = static_cast<double>(fb) / (3.0 * spec.classes);
    const double fa = smp.audio_factor + 1;
    for (index_t f = 0; f < fb; ++f)
      for (index_t t = 0; t < tm; ++t) {
        double df = (static_cast<double>(f) - band_mu) / band_sigma;
        double klass = std::exp(-0.5 * df * df);
        double fact = std::sin(kTwoPi * fa * static_cast<double>(t) / static_cast<double>(tm));
        sp[f * tm + t] = static_cast<T>(spec.class_amp * klass + spec.factor_amp * fact +
                                        spec.noise * rng.normal());
      }
    out.push_back(std::move(smp));
  }
  return out;
}

template <typename T>
std::vector<SyntheticAVSample<T>> generate_synthetic_batch(const SyntheticSpec& spec, int n,
                                                           uint64_t seed) {
  Rng rng(seed);
  return generate_synthetic_batch<T>(spec, n, rng);
}

template <typename T>
Tensor<T> stack_images(const std::vector<SyntheticAVSample<T>>& samples) {
  if (samples.empty()) throw DimensionError("stack_images: empty sample list");
  Shape s = samples[0].image.shape();
  Tensor<T> out = Tensor<T>::zeros({static_cast<index_t>(samples.size()), s[0], s[1], s[2]});
  T* od = out.data_mut().data();
  index_t per = numel_of(s);
  for (size_t i = 0; i < samples.size(); ++i)
    std::copy(samples[i].image.data().begin(), samples[i].image.data().end(),
              od + static_cast<index_t>(i) * per);
  return out;
}

template <typename T>
Tensor<T> stack_spectrograms(const std::vector<SyntheticAVSample<T>>& samples) {
  if (samples.empty()) throw DimensionError("stack_spectrograms: empty sample list");
  Shape s = samples[0].spectrogram.shape();
  Tensor<T> out = Tensor<T>::zeros({static_cast<index_t>(samples.size()), s[0], s[1], s[2]});
  T* od = out.data_mut().data();
  index_t per = numel_of(s);
  for (size_t i = 0; i < samples.size(); ++i)
    std::copy(samples[i].spectrogram.data().begin(), samples[i].spectrogram.data().end(),
              od + static_cast<index_t>(i) * per);
  return out;
}

#define AVFUSE_INSTANTIATE_SYNTH(T)                                                         \
  template std::vector<SyntheticAVSample<T>> generate_synthetic_batch<T>(                   \
      const SyntheticSpec&, int, Rng&);                                                     \
  template std::vector<SyntheticAVSample<T>> generate_synthetic_batch<T>(                   \
      const SyntheticSpec&, int, uint64_t);                                                 \
  template Tensor<T> stack_images<T>(const std::vector<SyntheticAVSample<T>>&);             \
  template Tensor<T> stack_spectrograms<T>(const std::vector<SyntheticAVSample<T>>&);

AVFUSE_INSTANTIATE_SYNTH(float)
AVFUSE_INSTANTIATE_SYNTH(double)

#undef AVFUSE_INSTANTIATE_SYNTH

}  // namespace avfuse
