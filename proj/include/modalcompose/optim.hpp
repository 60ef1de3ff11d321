#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "modalcompose/tensor.hpp"

namespace modalcompose {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected adaptive-moment optimizer state. Moments are created lazily
/// on the first step, one pair per parameter of the set being optimized.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update from the gradients currently stored in `params`.
  // Throws NumericError naming the parameter if a gradient is not finite.
  void step(ParamSet& params);

  std::int64_t steps() const noexcept { return step_; }
  const AdamConfig& config() const noexcept { return cfg_; }
  const std::map<std::string, Tensor>& first_moments() const noexcept { return m_; }
  const std::map<std::string, Tensor>& second_moments() const noexcept { return v_; }

 private:
  AdamConfig cfg_;
  std::int64_t step_ = 0;
  std::map<std::string, Tensor> m_;
  std::map<std::string, Tensor> v_;
};

// Central-difference estimate (f(p + h) - f(p - h)) / 2h for every scalar of
// every parameter. `params` is perturbed in place and restored exactly.
std::map<std::string, Tensor> finite_diff_grad(const std::function<double(const ParamSet&)>& loss_fn,
                                               ParamSet& params, double h);

}  // namespace modalcompose
