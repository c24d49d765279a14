#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "regavae/numerics/tensor.hpp"

namespace regavae::nn {

struct AdamConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Parameters without a
// gradient buffer are skipped for that step.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config);

  void step();
  void zero_grad();
  std::size_t steps() const { return step_count_; }
  const AdamConfig& config() const { return config_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  std::size_t step_count_ = 0;
};

// One Adam update of `param` in place; `step` is 1-based.
void adam_step(Tensor& param, std::span<double> first_moment,
               std::span<double> second_moment, std::size_t step,
               const AdamConfig& config);

// Rescales gradients so their joint L2 norm is at most max_norm. Returns the
// norm measured before clipping.
double clip_grad_norm(std::span<Tensor> params, double max_norm);

}  // namespace regavae::nn
