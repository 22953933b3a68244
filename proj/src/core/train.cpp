#include "core/train.h"

#include <cmath>

namespace avfuse {

namespace {
constexpr uint64_t kSaltData = 0xDA7A;
constexpr uint64_t kSaltMaskV = 0x3A5C'0001;
constexpr uint64_t kSaltMaskA = 0x3A5C'0002;
}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (total_epochs < 1 && total_steps <= 0)
    throw ConfigError("train.total_epochs must be >= 1 (or set train.total_steps)");
  if (warmup_epochs < 0 || warmup_epochs > total_epochs)
    throw ConfigError("train.warmup_epochs must lie in [0, train.total_epochs]");
  if (!(base_lr > 0)) throw ConfigError("train.base_lr must be positive");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
  for (double r : {mask_ratio_v, mask_ratio_a})
    if (!(r >= 0.0 && r < 1.0))
      throw ConfigError("mask ratios must lie in [0,1), got " + std::to_string(r));
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
}

TrainPlan resolve_train_plan(const TrainConfig& tc, int dataset_size) {
  TrainPlan plan;
  plan.steps_per_epoch =
      std::max<long>(1, (dataset_size + tc.batch_size - 1) / tc.batch_size);
  if (tc.total_steps > 0) {
    plan.total_steps = tc.total_steps;
    double frac = tc.total_epochs > 0
                      ? static_cast<double>(tc.warmup_epochs) / tc.total_epochs
                      : 0.0;
    plan.warmup_steps = static_cast<long>(std::llround(frac * plan.total_steps));
  } else {
    plan.total_steps = plan.steps_per_epoch * tc.total_epochs;
    plan.warmup_steps = plan.steps_per_epoch * tc.warmup_epochs;
  }
  return plan;
}

template <typename T>
std::vector<SyntheticAVSample<T>> SyntheticSource<T>::batch(int batch_size, uint64_t seed,
                                                            long step) const {
  Rng rng(derive_seed(seed, kSaltData, static_cast<uint64_t>(step)));
  return generate_synthetic_batch<T>(spec_, batch_size, rng);
}

template <typename T>
std::vector<SyntheticAVSample<T>> PoolSource<T>::batch(int batch_size, uint64_t seed,
                                                       long step) const {
  if (pool_.empty()) throw ConfigError("empty data pool");
  Rng rng(derive_seed(seed, kSaltData, static_cast<uint64_t>(step)));
  std::vector<SyntheticAVSample<T>> out;
  out.reserve(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i)
    out.push_back(pool_[static_cast<size_t>(rng.uniform_int(static_cast<index_t>(pool_.size())))]);
  return out;
}

std::vector<MaskPlan> step_mask_plans(index_t n_tokens, double ratio, int batch_size,
                                      uint64_t seed, long step, uint64_t modality_salt) {
  Rng rng(derive_seed(seed, modality_salt, static_cast<uint64_t>(step)));
  std::vector<MaskPlan> plans;
  plans.reserve(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) plans.push_back(sample_mask(n_tokens, ratio, rng));
  return plans;
}

template <typename T>
void pretrain(Model<T>& model, Adam<T>& opt, const DataSource<T>& data,
              const TrainConfig& tc, uint64_t seed, long start_step,
              const MetricsFn& metrics, const CheckpointFn& save) {
  tc.validate();
  const TrainPlan plan = resolve_train_plan(tc, data.size());
  ScheduleConfig sched;
  sched.base_lr = tc.base_lr;
  sched.batch_size = tc.batch_size;
  sched.warmup_steps = plan.warmup_steps;
  sched.total_steps = plan.total_steps;

  const DataConfig& dc = model.data_config();
  for (long step = start_step; step < plan.total_steps; ++step) {
    auto samples = data.batch(tc.batch_size, seed, step);
    Tensor<T> images = stack_images(samples);
    Tensor<T> specs = stack_spectrograms(samples);
    auto plans_v = step_mask_plans(dc.visual_tokens(), tc.mask_ratio_v, tc.batch_size, seed,
                                   step, kSaltMaskV);
    auto plans_a = step_mask_plans(dc.audio_tokens(), tc.mask_ratio_a, tc.batch_size, seed,
                                   step, kSaltMaskA);

    model.params().zero_grads();
    PretrainOutput<T> out = model.pretrain_forward(images, specs, plans_v, plans_a);
    const double lv = static_cast<double>(out.loss_v.item());
    const double la = static_cast<double>(out.loss_a.item());
    const double lt = static_cast<double>(out.loss_total.item());
    if (!std::isfinite(lt))
      throw NumericError("non-finite loss at step " + std::to_string(step) +
                         " (loss_v=" + std::to_string(lv) + ", loss_a=" + std::to_string(la) +
                         ")");
    out.loss_total.backward();
    const double lr = lr_schedule(step, sched);
    opt.step(lr, tc.weight_decay);

    if (metrics) metrics({step, lr, lt, lv, la});
    if (save && tc.checkpoint_every > 0 && (step + 1) % tc.checkpoint_every == 0 &&
        step + 1 < plan.total_steps)
      save(step + 1);
  }
  if (save) save(plan.total_steps);
}

template class SyntheticSource<float>;
template class SyntheticSource<double>;
template class PoolSource<float>;
template class PoolSource<double>;
template void pretrain<float>(Model<float>&, Adam<float>&, const DataSource<float>&,
                              const TrainConfig&, uint64_t, long, const MetricsFn&,
                              const CheckpointFn&);
template void pretrain<double>(Model<double>&, Adam<double>&, const DataSource<double>&,
                               const TrainConfig&, uint64_t, long, const MetricsFn&,
                               const CheckpointFn&);

}  // namespace avfuse
