#pragma once

#include <cstddef>
#include <vector>

#include "regavae/numerics/rng.hpp"
#include "regavae/numerics/tensor.hpp"

namespace regavae::model {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// Diagonal Gaussian over the latent space. Both tensors are 1-D of length
// d_z; they may live on a tape (posterior from the encoder) or be frozen
// constants (database keys).
struct LatentGaussian {
  nn::Tensor mean;
  nn::Tensor log_var;

  std::size_t dim() const { return mean.numel(); }
  // Throws DimensionError on length mismatch or clamp violation.
  void validate() const;

  static LatentGaussian standard(std::size_t dim);
  static LatentGaussian constant(std::vector<double> mean, std::vector<double> log_var);
  // Detached deep copy.
  LatentGaussian frozen() const;
};

// One posterior per decoder layer.
using LayerPosteriors = std::vector<LatentGaussian>;

// z = mean + exp(0.5 * log_var) * eps with eps ~ N(0, I) drawn from rng.
nn::Tensor reparameterize(nn::Tape& tape, const LatentGaussian& g, nn::Rng& rng);

// Closed-form KL(g || N(0, I)) = 0.5 * sum(mean^2 + exp(log_var) - log_var - 1).
nn::Tensor kl_to_standard_normal(nn::Tape& tape, const LatentGaussian& g);

}  // namespace regavae::model
