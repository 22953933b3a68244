#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "core/rng.h"
#include "core/tensor.h"

namespace avfuse {

enum class Init { kZeros, kOnes, kXavier, kTruncNormal02 };

// Named parameter table with deterministic iteration order. Names are the
// checkpoint schema; the optimizer walks the same order.
template <typename T>
class ParamStore {
 public:
  Tensor<T>& create(const std::string& name, Shape shape, Init init, Rng& rng,
                    bool weight_decay) {
    if (map_.count(name)) throw ConfigError("duplicate parameter: " + name);
    Tensor<T> t = Tensor<T>::zeros(std::move(shape), /*requires_grad=*/true);
    switch (init) {
      case Init::kZeros:
        break;
      case Init::kOnes:
        for (T& v : t.data_mut()) v = T(1);
        break;
      case Init::kXavier: {
        index_t fan_in = t.rank() >= 2 ? t.dim(-2) : t.dim(-1);
        index_t fan_out = t.dim(-1);
        double s = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        for (T& v : t.data_mut()) v = static_cast<T>(rng.uniform(-s, s));
        break;
      }
      case Init::kTruncNormal02:
        for (T& v : t.data_mut()) v = static_cast<T>(rng.truncated_normal(0.02));
        break;
    }
    order_.push_back(name);
    decay_[name] = weight_decay;
    return map_.emplace(name, std::move(t)).first->second;
  }

  Tensor<T>& at(const std::string& name) {
    auto it = map_.find(name);
    if (it == map_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  bool contains(const std::string& name) const { return map_.count(name) != 0; }
  bool decays(const std::string& name) const { return decay_.at(name); }
  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }

  index_t total_elements() const {
    index_t n = 0;
    for (const auto& name : order_) n += map_.at(name).numel();
    return n;
  }

  void zero_grads() {
    for (const auto& name : order_) map_.at(name).zero_grad();
  }

 private:
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor<T>> map_;
  std::unordered_map<std::string, bool> decay_;
};

}  // namespace avfuse
