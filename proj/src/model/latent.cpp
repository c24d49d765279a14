#include "regavae/model/latent.hpp"

#include "regavae/error.hpp"
#include "regavae/numerics/ops.hpp"

namespace regavae::model {

void LatentGaussian::validate() const {
  if (!mean.defined() || !log_var.defined()) {
    throw DimensionError("latent gaussian has undefined parameters");
  }
  if (mean.numel() != log_var.numel()) {
    throw DimensionError("latent mean " + nn::shape_string(mean.shape()) +
                         " and log_var " + nn::shape_string(log_var.shape()) +
                         " differ in length");
  }
  for (double v : log_var.data()) {
    if (v < kLogVarMin || v > kLogVarMax) {
      throw DimensionError("latent log_var outside [-10, 10]");
    }
  }
}

LatentGaussian LatentGaussian::standard(std::size_t dim) {
  return {nn::Tensor::zeros({dim}), nn::Tensor::zeros({dim})};
}

LatentGaussian LatentGaussian::constant(std::vector<double> mean,
                                        std::vector<double> log_var) {
  const std::size_t n = mean.size();
  const std::size_t m = log_var.size();
  LatentGaussian g{nn::Tensor::from({n}, std::move(mean)),
                   nn::Tensor::from({m}, std::move(log_var))};
  g.validate();
  return g;
}

LatentGaussian LatentGaussian::frozen() const {
  return {mean.clone(), log_var.clone()};
}

nn::Tensor reparameterize(nn::Tape& tape, const LatentGaussian& g, nn::Rng& rng) {
  g.validate();
  nn::Tensor eps = nn::ops::random_normal(g.mean.shape(), rng);
  nn::Tensor stddev = nn::ops::exp(tape, nn::ops::scale(tape, g.log_var, 0.5));
  return nn::ops::add(tape, g.mean, nn::ops::mul(tape, stddev, eps));
}

nn::Tensor kl_to_standard_normal(nn::Tape& tape, const LatentGaussian& g) {
  using namespace nn::ops;
  g.validate();
  nn::Tensor mean_sq = mul(tape, g.mean, g.mean);
  nn::Tensor var = exp(tape, g.log_var);
  nn::Tensor inner = add_scalar(tape, sub(tape, add(tape, mean_sq, var), g.log_var), -1.0);
  return scale(tape, sum(tape, inner), 0.5);
}

}  // namespace regavae::model
