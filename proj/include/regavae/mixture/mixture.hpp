#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "regavae/model/latent.hpp"
#include "regavae/model/vae.hpp"
#include "regavae/numerics/rng.hpp"
#include "regavae/retrieval/database.hpp"

namespace regavae::mixture {

// Logit of the query component: its similarity with itself.
inline constexpr double kSelfLogit = 1.0;

// Weighted diagonal-Gaussian components; weights sum to 1.
struct GaussianMixture {
  std::vector<model::LatentGaussian> components;
  std::vector<double> weights;

  std::size_t size() const { return components.size(); }
  std::size_t dim() const { return components.empty() ? 0 : components.front().dim(); }
  // Throws ContractError on count/dim mismatch, negative weights, or a weight
  // sum off by more than 1e-12.
  void validate() const;
};

// Component 0 is q(z^x|x); components 1..n are retrieved keys.
struct MixturePosterior : GaussianMixture {};

// Every component is N(0, I).
struct MixturePrior : GaussianMixture {
  static MixturePrior standard(std::size_t dim, std::vector<double> weights);
  void validate() const;
};

enum class PriorWeights { kTied, kUniform };

// Prior matching `posterior` in size and dim. kTied copies the posterior
// weights, so KL(w || w_hat) = 0.
MixturePrior make_prior(const MixturePosterior& posterior, PriorWeights policy);

// softmax([self_logit, scores...]); scores are cosine similarities.
std::vector<double> weights_from_scores(std::span<const double> scores,
                                        double self_logit = kSelfLogit);
std::vector<double> mixture_weights(std::span<const double> query,
                                    std::span<const model::LatentGaussian> retrieved,
                                    double self_logit = kSelfLogit);

// Categorical draw. A single component returns 0 without consuming rng.
std::size_t sample_component(std::span<const double> weights, nn::Rng& rng);

struct MixtureSample {
  nn::Tensor z;
  std::size_t component = 0;
};

// Hard categorical choice, then a reparameterized draw from that component.
// No gradient reaches the weights.
MixtureSample sample_mixture(nn::Tape& tape, const GaussianMixture& mixture, nn::Rng& rng);

// Closed-form KL(a || b) for diagonal Gaussians, in nats.
nn::Tensor kl_gaussian_diag(nn::Tape& tape, const model::LatentGaussian& a,
                            const model::LatentGaussian& b);
double kl_gaussian_diag(const model::LatentGaussian& a, const model::LatentGaussian& b);

// KL(w || w_hat) over the categorical weights; +inf when w_hat_i = 0 < w_i.
double kl_categorical(std::span<const double> w, std::span<const double> w_hat);

// KL(w || w_hat) + sum_i w_i KL(p_i || q_i), an upper bound on KL(p || q).
double kl_mixture_upper_bound(const GaussianMixture& p, const GaussianMixture& q);

struct RetrievalOptions {
  std::size_t k = 0;
  std::optional<std::uint64_t> exclude_id{};
  double self_logit = kSelfLogit;
};

// Query posteriors plus their retrieved neighbours, one mixture per layer.
// All layers share the weights computed from the layer-0 query mean.
struct RetrievedMixture {
  std::vector<retrieval::Neighbor> neighbors;
  std::vector<double> weights;
  std::vector<MixturePosterior> layers;
};

// k = 0 skips the database, which may then be empty.
RetrievedMixture retrieve_mixture(const model::LayerPosteriors& query,
                                  const retrieval::RetrievalDatabase& db,
                                  const RetrievalOptions& options);

struct RegaVaeStep {
  model::ElboBreakdown elbo;
  RetrievedMixture mixture;
  std::size_t component = 0;
  // Sum over layers of the upper bound with the configured prior weights.
  // Logged only; the optimized kl is the query term.
  double kl_bound = 0.0;
};

// Encode x, retrieve top-k, draw one component index for all layers, sample
// z_l from that component of layer l, decode y. kl = sum_l KL(q(z^x_l|x) || N(0, I)).
// Retrieved components are constants. With k = 0 the tape operations and
// rng consumption match VaeModel::elbo_step exactly.
RegaVaeStep regavae_loss(nn::Tape& tape, const model::VaeModel& model,
                         std::span<const int> x, std::span<const int> y,
                         const retrieval::RetrievalDatabase& db, const RetrievalOptions& options,
                         double beta, nn::Rng& rng,
                         PriorWeights prior_weights = PriorWeights::kTied);

}  // namespace regavae::mixture
