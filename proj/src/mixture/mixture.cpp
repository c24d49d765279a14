#include "regavae/mixture/mixture.hpp"

#include <cmath>
#include <limits>

#include "regavae/error.hpp"
#include "regavae/numerics/ops.hpp"

namespace regavae::mixture {

namespace ops = nn::ops;
using model::LatentGaussian;
using nn::Tensor;

void GaussianMixture::validate() const {
  if (components.empty()) throw ContractError("mixture has no components");
  if (components.size() != weights.size()) {
    throw ContractError("mixture has " + std::to_string(components.size()) +
                        " components but " + std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ContractError("mixture weight is negative or NaN");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    throw ContractError("mixture weights sum to " + std::to_string(total));
  }
  for (const auto& c : components) {
    c.validate();
    if (c.dim() != dim()) throw ContractError("mixture components differ in dimension");
  }
}

MixturePrior MixturePrior::standard(std::size_t dim, std::vector<double> weights) {
  MixturePrior prior;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    prior.components.push_back(LatentGaussian::standard(dim));
  }
  prior.weights = std::move(weights);
  prior.validate();
  return prior;
}

void MixturePrior::validate() const {
  GaussianMixture::validate();
  for (const auto& c : components) {
    for (double v : c.mean.data()) {
      if (v != 0.0) throw ContractError("prior component mean is not zero");
    }
    for (double v : c.log_var.data()) {
      if (v != 0.0) throw ContractError("prior component variance is not one");
    }
  }
}

MixturePrior make_prior(const MixturePosterior& posterior, PriorWeights policy) {
  std::vector<double> w = posterior.weights;
  if (policy == PriorWeights::kUniform) {
    w.assign(posterior.size(), 1.0 / static_cast<double>(posterior.size()));
  }
  return MixturePrior::standard(posterior.dim(), std::move(w));
}

std::vector<double> weights_from_scores(std::span<const double> scores, double self_logit) {
  std::vector<double> logits{self_logit};
  logits.insert(logits.end(), scores.begin(), scores.end());
  return ops::softmax_values(logits);
}

std::vector<double> mixture_weights(std::span<const double> query,
                                    std::span<const LatentGaussian> retrieved,
                                    double self_logit) {
  std::vector<double> scores;
  scores.reserve(retrieved.size());
  for (const auto& g : retrieved) scores.push_back(retrieval::similarity(query, g));
  return weights_from_scores(scores, self_logit);
}

std::size_t sample_component(std::span<const double> weights, nn::Rng& rng) {
  if (weights.empty()) throw ContractError("sample_component: no weights");
  if (weights.size() == 1) return 0;
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last_positive = i;
    if (u < acc) return i;
  }
  // u landed in the rounding gap above the accumulated total.
  return last_positive;
}

MixtureSample sample_mixture(nn::Tape& tape, const GaussianMixture& mixture, nn::Rng& rng) {
  mixture.validate();
  const std::size_t c = sample_component(mixture.weights, rng);
  return {model::reparameterize(tape, mixture.components[c], rng), c};
}

Tensor kl_gaussian_diag(nn::Tape& tape, const LatentGaussian& a, const LatentGaussian& b) {
  a.validate();
  b.validate();
  if (a.dim() != b.dim()) {
    throw ContractError("kl_gaussian_diag: dims " + std::to_string(a.dim()) + " and " +
                        std::to_string(b.dim()));
  }
  // 0.5 * sum(lv_b - lv_a + (exp(lv_a) + (mu_a - mu_b)^2) / exp(lv_b) - 1)
  Tensor diff = ops::sub(tape, a.mean, b.mean);
  Tensor inv_var_b = ops::exp(tape, ops::scale(tape, b.log_var, -1.0));
  Tensor ratio = ops::exp(tape, ops::sub(tape, a.log_var, b.log_var));
  Tensor quad = ops::mul(tape, ops::mul(tape, diff, diff), inv_var_b);
  Tensor log_ratio = ops::sub(tape, b.log_var, a.log_var);
  Tensor inner = ops::add_scalar(tape, ops::add(tape, ops::add(tape, log_ratio, ratio), quad), -1.0);
  return ops::scale(tape, ops::sum(tape, inner), 0.5);
}

double kl_gaussian_diag(const LatentGaussian& a, const LatentGaussian& b) {
  nn::Tape tape = nn::Tape::no_grad();
  // Rounding can leave -1e-17 for identical inputs.
  return std::max(0.0, kl_gaussian_diag(tape, a, b).item());
}

double kl_categorical(std::span<const double> w, std::span<const double> w_hat) {
  if (w.size() != w_hat.size()) throw ContractError("kl_categorical: length mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (w[i] == 0.0) continue;
    if (w_hat[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += w[i] * std::log(w[i] / w_hat[i]);
  }
  return std::max(0.0, kl);
}

double kl_mixture_upper_bound(const GaussianMixture& p, const GaussianMixture& q) {
  p.validate();
  q.validate();
  if (p.size() != q.size()) {
    throw ContractError("kl_mixture_upper_bound: " + std::to_string(p.size()) + " vs " +
                        std::to_string(q.size()) + " components");
  }
  if (p.dim() != q.dim()) throw ContractError("kl_mixture_upper_bound: dim mismatch");
  double bound = kl_categorical(p.weights, q.weights);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.weights[i] == 0.0) continue;
    bound += p.weights[i] * kl_gaussian_diag(p.components[i], q.components[i]);
  }
  return bound;
}

RetrievedMixture retrieve_mixture(const model::LayerPosteriors& query,
                                  const retrieval::RetrievalDatabase& db,
                                  const RetrievalOptions& options) {
  if (query.empty()) throw ContractError("retrieve_mixture: no query posteriors");
  RetrievedMixture out;
  std::vector<double> scores;
  if (options.k > 0) {
    if (db.empty()) throw RetrievalError("retrieval database is empty");
    if (db.num_layers() != query.size() || db.d_z() != query.front().dim()) {
      throw ContractError("retrieval database shape does not match the model");
    }
    out.neighbors = retrieval::top_k(query.front().mean.data(), db, options.k, options.exclude_id);
    for (const auto& n : out.neighbors) scores.push_back(n.score);
  }
  out.weights = weights_from_scores(scores, options.self_logit);
  out.layers.resize(query.size());
  for (std::size_t l = 0; l < query.size(); ++l) {
    MixturePosterior& m = out.layers[l];
    m.components.push_back(query[l]);
    for (const auto& n : out.neighbors) m.components.push_back(n.entry->keys[l]);
    m.weights = out.weights;
  }
  return out;
}

RegaVaeStep regavae_loss(nn::Tape& tape, const model::VaeModel& model, std::span<const int> x,
                         std::span<const int> y, const retrieval::RetrievalDatabase& db,
                         const RetrievalOptions& options, double beta, nn::Rng& rng,
                         PriorWeights prior_weights) {
  model::LayerPosteriors posts = model.encode(tape, x);
  RegaVaeStep step;
  step.mixture = retrieve_mixture(posts, db, options);
  step.component = sample_component(step.mixture.weights, rng);

  std::vector<Tensor> z;
  z.reserve(posts.size());
  Tensor kl;
  for (std::size_t l = 0; l < posts.size(); ++l) {
    z.push_back(model::reparameterize(tape, step.mixture.layers[l].components[step.component], rng));
    Tensor layer_kl = model::kl_to_standard_normal(tape, posts[l]);
    kl = kl.defined() ? ops::add(tape, kl, layer_kl) : layer_kl;
  }
  model::DecodeResult dec = model.decode(tape, z, y);

  step.elbo.beta = beta;
  step.elbo.loss = ops::add(tape, dec.recon_nll, ops::scale(tape, kl, beta));
  step.elbo.recon_nll = dec.recon_nll.item();
  step.elbo.kl = kl.item();
  step.elbo.total = step.elbo.loss.item();
  for (const auto& layer : step.mixture.layers) {
    step.kl_bound += kl_mixture_upper_bound(layer, make_prior(layer, prior_weights));
  }
  return step;
}

}  // namespace regavae::mixture
