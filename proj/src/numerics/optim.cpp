#include "regavae/numerics/optim.hpp"

#include <cmath>

#include "regavae/error.hpp"

namespace regavae::nn {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.learning_rate > 0.0)) {
    throw ConfigError("learning_rate must be positive");
  }
  first_moment_.reserve(params_.size());
  second_moment_.reserve(params_.size());
  for (const Tensor& p : params_) {
    first_moment_.emplace_back(p.numel(), 0.0);
    second_moment_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++step_count_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) continue;
    adam_step(params_[i], first_moment_[i], second_moment_[i], step_count_, config_);
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.clear_grad();
}

void adam_step(Tensor& param, std::span<double> first_moment,
               std::span<double> second_moment, std::size_t step,
               const AdamConfig& config) {
  auto data = param.mutable_data();
  auto grad = param.grad();
  if (grad.size() != data.size() || first_moment.size() != data.size() ||
      second_moment.size() != data.size()) {
    throw DimensionError("adam_step: state size does not match parameter");
  }
  const double t = static_cast<double>(step);
  const double correction1 = 1.0 - std::pow(config.beta1, t);
  const double correction2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < data.size(); ++i) {
    first_moment[i] = config.beta1 * first_moment[i] + (1.0 - config.beta1) * grad[i];
    second_moment[i] =
        config.beta2 * second_moment[i] + (1.0 - config.beta2) * grad[i] * grad[i];
    const double m_hat = first_moment[i] / correction1;
    const double v_hat = second_moment[i] / correction2;
    data[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

double clip_grad_norm(std::span<Tensor> params, double max_norm) {
  double sq = 0.0;
  for (const Tensor& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (Tensor& p : params) {
      if (!p.has_grad()) continue;
      for (double& g : p.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

}  // namespace regavae::nn
