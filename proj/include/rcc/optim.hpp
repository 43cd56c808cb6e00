#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "rcc/error.hpp"

namespace rcc::optim {

struct AdamWConfig {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;

  void validate() const {
    require(learning_rate >= 0.0, "learning_rate must be non-negative");
    require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
    require(epsilon > 0.0, "epsilon must be positive");
    require(weight_decay >= 0.0, "weight_decay must be non-negative");
  }
};

/// Adam with decoupled weight decay (Loshchilov & Hutter).
class AdamW {
 public:
  AdamW(std::size_t size, AdamWConfig config)
      : config_(config), first_(size, 0.0), second_(size, 0.0) {
    config_.validate();
  }

  void step(std::span<double> params, std::span<const double> grad) {
    require(params.size() == first_.size() && grad.size() == first_.size(),
            "AdamW parameter size mismatch");
    ++steps_;
    const double lr = config_.learning_rate;
    const double correction1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      first_[i] = config_.beta1 * first_[i] + (1.0 - config_.beta1) * grad[i];
      second_[i] = config_.beta2 * second_[i] + (1.0 - config_.beta2) * grad[i] * grad[i];
      const double m_hat = first_[i] / correction1;
      const double v_hat = second_[i] / correction2;
      params[i] -= lr * (m_hat / (std::sqrt(v_hat) + config_.epsilon) +
                         config_.weight_decay * params[i]);
    }
  }

  [[nodiscard]] std::size_t steps() const { return steps_; }

 private:
  AdamWConfig config_;
  std::vector<double> first_;
  std::vector<double> second_;
  std::size_t steps_ = 0;
};

}  // namespace rcc::optim
