#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "regavae/mixture/mixture.hpp"
#include "regavae/model/latent.hpp"
#include "regavae/model/tokens.hpp"
#include "regavae/model/vae.hpp"
#include "regavae/retrieval/database.hpp"

namespace regavae::eval {

inline constexpr double kActiveUnitThreshold = 0.2;

struct MetricReport {
  double ppl = 1.0;        // >= 1, ELBO upper bound
  double self_bleu = 0.0;  // [0, 100]
  double dist2 = 0.0;      // [0, 1]
  std::size_t au = 0;
  std::optional<double> bleu;     // [0, 100]
  std::optional<double> rouge_l;  // [0, 100]

  // Throws ContractError when a field leaves its range.
  void validate() const;
  // One "name value" line per present field.
  std::string to_text() const;
  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

// Summary of a perplexity pass; ppl = exp((nll + kl) / tokens).
struct PerplexityResult {
  double ppl = 1.0;
  double nll = 0.0;  // summed over every target token
  double kl = 0.0;   // summed over examples
  std::size_t tokens = 0;
};

// Plain VAE: decode y from the posterior means of x; kl is KL(q(z|x) || N(0, I))
// summed over layers. Throws InputError on an empty dataset.
PerplexityResult perplexity(const model::VaeModel& model, std::span<const CorpusPair> dataset);

// With retrieval: nll = sum_i w_i NLL(y | means of component i) and kl is
// the mixture upper bound against the prior with `prior_weights`. k = 0
// agrees with the plain overload up to rounding.
PerplexityResult perplexity(const model::VaeModel& model, std::span<const CorpusPair> dataset,
                            const retrieval::RetrievalDatabase& db,
                            const mixture::RetrievalOptions& options,
                            mixture::PriorWeights prior_weights = mixture::PriorWeights::kTied);

// Smoothed sentence BLEU of `candidate` against several references, in
// [0, 100]: clipped counts use the max count over references, the brevity
// penalty uses the closest reference length, orders >= 2 get add-one
// smoothing.
double sentence_bleu(const TokenSequence& candidate, std::span<const TokenSequence> references,
                     std::size_t n_max = 4);

// Mean over i of sentence_bleu(g_i, all g_j with j != i). Needs >= 2 inputs.
double self_bleu(std::span<const TokenSequence> generations, std::size_t n_max = 4);

// Unique / total n-grams, n-grams taken within each sequence. Throws
// InputError when there are no n-grams.
double dist_n(std::span<const TokenSequence> generations, std::size_t n = 2);

// Corpus BLEU-4 in [0, 100]: counts and lengths pooled before the precisions.
double corpus_bleu(std::span<const TokenSequence> candidates,
                   std::span<const TokenSequence> references, std::size_t n_max = 4);

// LCS-based F1 in [0, 1].
double rouge_l(const TokenSequence& candidate, const TokenSequence& reference);
// Mean rouge_l over aligned pairs, in [0, 1].
double mean_rouge_l(std::span<const TokenSequence> candidates,
                    std::span<const TokenSequence> references);

// Dimensions whose posterior-mean population variance across the dataset
// exceeds `threshold`, summed over layers. Needs >= 2 posteriors.
std::size_t active_units(std::span<const model::LayerPosteriors> posteriors,
                         double threshold = kActiveUnitThreshold);
std::size_t active_units(const model::VaeModel& model, std::span<const CorpusPair> dataset,
                         double threshold = kActiveUnitThreshold);

}  // namespace regavae::eval
