#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mvke/parameters.hpp"

namespace mvke {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Parameters that received no gradient since the
/// last step are skipped entirely (their moments do not decay).
template <typename T>
class Adam {
 public:
  Adam(ParameterStore<T>& params, AdamConfig config) : params_(&params), config_(config) {
    if (!(config_.learning_rate >= 0)) throw ConfigError("learning rate must be non-negative");
    for (const auto& p : params.all()) {
      first_.emplace_back(p.tensor.size(), T(0));
      second_.emplace_back(p.tensor.size(), T(0));
    }
    steps_.assign(params.size(), 0);
  }

  void step() {
    auto& all = params_->all();
    for (const auto& p : all) {
      if (!p.tensor.has_grad()) continue;
      for (T g : p.tensor.grad())
        if (!std::isfinite(g)) throw NumericalError("non-finite gradient for parameter " + p.name);
    }
    const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
    const T lr = static_cast<T>(config_.learning_rate), eps = static_cast<T>(config_.eps);
    for (std::size_t i = 0; i < all.size(); ++i) {
      auto& tensor = all[i].tensor;
      if (!tensor.has_grad()) continue;
      const std::uint64_t t = ++steps_[i];
      const T c1 = T(1) - static_cast<T>(std::pow(config_.beta1, static_cast<double>(t)));
      const T c2 = T(1) - static_cast<T>(std::pow(config_.beta2, static_cast<double>(t)));
      auto w = tensor.mutable_data();
      auto g = tensor.grad();
      auto& m = first_[i];
      auto& v = second_[i];
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = b1 * m[j] + (T(1) - b1) * g[j];
        v[j] = b2 * v[j] + (T(1) - b2) * g[j] * g[j];
        const T m_hat = m[j] / c1;
        const T v_hat = v[j] / c2;
        w[j] -= lr * m_hat / (std::sqrt(v_hat) + eps);
      }
      for (T x : w)
        if (!std::isfinite(x)) throw NumericalError("parameter " + all[i].name + " became non-finite");
      tensor.zero_grad();
    }
    ++total_steps_;
  }

  std::uint64_t steps() const { return total_steps_; }
  std::uint64_t steps(std::size_t param_index) const { return steps_.at(param_index); }
  const std::vector<T>& first_moment(std::size_t i) const { return first_.at(i); }
  const std::vector<T>& second_moment(std::size_t i) const { return second_.at(i); }

 private:
  ParameterStore<T>* params_;
  AdamConfig config_;
  std::vector<std::vector<T>> first_;
  std::vector<std::vector<T>> second_;
  std::vector<std::uint64_t> steps_;
  std::uint64_t total_steps_ = 0;
};

}  // namespace mvke
