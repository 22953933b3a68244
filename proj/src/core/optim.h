#pragma once

#include <vector>

#include "core/params.h"

namespace avfuse {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay and bias-corrected moments. Decay is
// applied only to parameters registered with the decay flag (weight
// matrices; not biases, norms, or learned tokens).
template <typename T>
class Adam {
 public:
  explicit Adam(ParamStore<T>& store, AdamConfig cfg = {});

  void step(double lr, double weight_decay);

  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  // Raw state access for checkpointing, aligned with store order.
  std::vector<std::vector<T>>& moment1() { return m_; }
  std::vector<std::vector<T>>& moment2() { return v_; }
  void set_step_count(long s) { step_ = s; }

 private:
  ParamStore<T>& store_;
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

struct ScheduleConfig {
  double base_lr = 1.5e-4;
  index_t batch_size = 256;
  index_t warmup_steps = 0;
  index_t total_steps = 1;
};

// Linear warmup from 0 to base_lr*batch/256, then cosine decay to 0 at
// total_steps; continuous at the junction.
double lr_schedule(index_t step, const ScheduleConfig& cfg);

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace avfuse
