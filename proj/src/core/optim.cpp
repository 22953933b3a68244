#include "core/optim.h"

#include <cmath>

namespace avfuse {

template <typename T>
Adam<T>::Adam(ParamStore<T>& store, AdamConfig cfg) : store_(store), cfg_(cfg) {
  for (const std::string& name : store.names()) {
    size_t n = static_cast<size_t>(store.at(name).numel());
    m_.emplace_back(n, T(0));
    v_.emplace_back(n, T(0));
  }
}

template <typename T>
void Adam<T>::step(double lr, double weight_decay) {
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, step_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, step_);
  const auto& names = store_.names();
  for (size_t pi = 0; pi < names.size(); ++pi) {
    Tensor<T>& p = store_.at(names[pi]);
    const bool decay = store_.decays(names[pi]);
    auto data = p.data_mut();
    auto grad = p.grad();
    std::vector<T>& m = m_[pi];
    std::vector<T>& v = v_[pi];
    for (size_t i = 0; i < data.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      double mi = cfg_.beta1 * static_cast<double>(m[i]) + (1.0 - cfg_.beta1) * g;
      double vi = cfg_.beta2 * static_cast<double>(v[i]) + (1.0 - cfg_.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg_.eps);
      if (decay && weight_decay != 0.0) update += weight_decay * static_cast<double>(data[i]);
      data[i] = static_cast<T>(static_cast<double>(data[i]) - lr * update);
    }
  }
}

double lr_schedule(index_t step, const ScheduleConfig& cfg) {
  if (step < 0) throw ConfigError("lr_schedule: negative step");
  const double peak = cfg.base_lr * static_cast<double>(cfg.batch_size) / 256.0;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
    return peak * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  if (step >= cfg.total_steps) return 0.0;
  const double span = static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  const double t = static_cast<double>(step - cfg.warmup_steps) / span;
  return peak * 0.5 * (1.0 + std::cos(3.141592653589793 * t));
}

template class Adam<float>;
template class Adam<double>;

}  // namespace avfuse
