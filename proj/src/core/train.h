#pragma once

#include <functional>
#include <memory>

#include "core/model.h"
#include "core/optim.h"

namespace avfuse {

struct TrainConfig {
  double base_lr = 2e-3;
  int batch_size = 16;
  int warmup_epochs = 2;
  int total_epochs = 20;
  int total_steps = 0;  // > 0 overrides the epoch-derived step count
  double weight_decay = 0.05;
  double mask_ratio_v = 0.75;
  double mask_ratio_a = 0.75;
  int checkpoint_every = 0;  // steps; 0 = final checkpoint only
  void validate() const;
};

// Deterministic batch provider: the batch for (seed, step) never depends on
// call history, which is what makes resumed runs bit-exact.
template <typename T>
class DataSource {
 public:
  virtual ~DataSource() = default;
  virtual int size() const = 0;
  virtual std::vector<SyntheticAVSample<T>> batch(int batch_size, uint64_t seed,
                                                  long step) const = 0;
};

template <typename T>
class SyntheticSource : public DataSource<T> {
 public:
  SyntheticSource(SyntheticSpec spec, int nominal_size)
      : spec_(spec), size_(nominal_size) {}
  int size() const override { return size_; }
  std::vector<SyntheticAVSample<T>> batch(int batch_size, uint64_t seed,
                                          long step) const override;
  const SyntheticSpec& spec() const { return spec_; }

 private:
  SyntheticSpec spec_;
  int size_;
};

// Fixed in-memory pool (used for imported tensor directories); batches are
// drawn by index from a per-step stream.
template <typename T>
class PoolSource : public DataSource<T> {
 public:
  explicit PoolSource(std::vector<SyntheticAVSample<T>> pool) : pool_(std::move(pool)) {}
  int size() const override { return static_cast<int>(pool_.size()); }
  std::vector<SyntheticAVSample<T>> batch(int batch_size, uint64_t seed,
                                          long step) const override;

 private:
  std::vector<SyntheticAVSample<T>> pool_;
};

struct StepRecord {
  long step = 0;
  double lr = 0, loss_total = 0, loss_v = 0, loss_a = 0;
};

using MetricsFn = std::function<void(const StepRecord&)>;
using CheckpointFn = std::function<void(long step)>;

struct TrainPlan {
  long total_steps = 0;
  long warmup_steps = 0;
  long steps_per_epoch = 0;
};

TrainPlan resolve_train_plan(const TrainConfig& tc, int dataset_size);

// Runs steps [start_step, plan.total_steps). Aborts with NumericError on a
// non-finite loss, naming the step and component losses.
template <typename T>
void pretrain(Model<T>& model, Adam<T>& opt, const DataSource<T>& data,
              const TrainConfig& tc, uint64_t seed, long start_step,
              const MetricsFn& metrics = nullptr, const CheckpointFn& save = nullptr);

// Per-step mask plans, derived from (seed, step) independently of the data
// stream.
std::vector<MaskPlan> step_mask_plans(index_t n_tokens, double ratio, int batch_size,
                                      uint64_t seed, long step, uint64_t modality_salt);

extern template class SyntheticSource<float>;
extern template class SyntheticSource<double>;
extern template class PoolSource<float>;
extern template class PoolSource<double>;

}  // namespace avfuse
