#include "regavae/eval/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "regavae/error.hpp"

namespace regavae::eval {
namespace {

// Sorting first makes the sum independent of input order.
double ordered_sum(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s;
}

void check_range(const char* name, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi)) {
    throw ContractError(std::string("metric ") + name + " = " + std::to_string(v) +
                        " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

using NGram = std::vector<int>;

std::map<NGram, std::size_t> ngram_counts(const TokenSequence& s, std::size_t n) {
  std::map<NGram, std::size_t> counts;
  if (s.size() < n) return counts;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    ++counts[NGram(s.begin() + static_cast<std::ptrdiff_t>(i),
                   s.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

struct Overlap {
  std::size_t matched = 0;
  std::size_t total = 0;
};

Overlap clipped_overlap(const TokenSequence& candidate, std::span<const TokenSequence> refs,
                        std::size_t n) {
  Overlap o;
  auto cand = ngram_counts(candidate, n);
  std::map<NGram, std::size_t> max_ref;
  for (const auto& r : refs) {
    for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
  }
  for (const auto& [g, c] : cand) {
    o.total += c;
    auto it = max_ref.find(g);
    if (it != max_ref.end()) o.matched += std::min(c, it->second);
  }
  return o;
}

// Geometric mean of the precisions (add-one for n >= 2) times the brevity
// penalty, scaled to [0, 100].
double bleu_from_counts(const std::vector<Overlap>& overlaps, double cand_len, double ref_len) {
  if (cand_len == 0.0) return 0.0;
  if (overlaps[0].matched == 0) return 0.0;
  double log_p = 0.0;
  for (std::size_t n = 0; n < overlaps.size(); ++n) {
    const double m = static_cast<double>(overlaps[n].matched);
    const double t = static_cast<double>(overlaps[n].total);
    log_p += n == 0 ? std::log(m / t) : std::log((m + 1.0) / (t + 1.0));
  }
  log_p /= static_cast<double>(overlaps.size());
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return std::clamp(100.0 * bp * std::exp(log_p), 0.0, 100.0);
}

std::size_t closest_length(std::size_t cand_len, std::span<const TokenSequence> refs) {
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) {
      return len > cand_len ? len - cand_len : cand_len - len;
    };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  return best;
}

std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<nn::Tensor> component_means(const mixture::MixturePosterior* layers_begin,
                                        std::size_t layers, std::size_t component) {
  std::vector<nn::Tensor> z;
  for (std::size_t l = 0; l < layers; ++l) z.push_back(layers_begin[l].components[component].mean);
  return z;
}

}  // namespace

void MetricReport::validate() const {
  if (!(ppl >= 1.0) || !std::isfinite(ppl)) {
    throw ContractError("metric ppl = " + std::to_string(ppl) + " is not a finite value >= 1");
  }
  check_range("self_bleu", self_bleu, 0.0, 100.0);
  check_range("dist2", dist2, 0.0, 1.0);
  if (bleu) check_range("bleu", *bleu, 0.0, 100.0);
  if (rouge_l) check_range("rouge_l", *rouge_l, 0.0, 100.0);
}

std::string MetricReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "ppl " << ppl << "\n";
  out << "self_bleu " << self_bleu << "\n";
  out << "dist2 " << dist2 << "\n";
  out << "au " << au << "\n";
  if (bleu) out << "bleu " << *bleu << "\n";
  if (rouge_l) out << "rouge_l " << *rouge_l << "\n";
  return out.str();
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json j{{"ppl", ppl}, {"self_bleu", self_bleu}, {"dist2", dist2}, {"au", au}};
  if (bleu) j["bleu"] = *bleu;
  if (rouge_l) j["rouge_l"] = *rouge_l;
  return j;
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.ppl = j.at("ppl").get<double>();
    r.self_bleu = j.at("self_bleu").get<double>();
    r.dist2 = j.at("dist2").get<double>();
    r.au = j.at("au").get<std::size_t>();
    if (j.contains("bleu")) r.bleu = j["bleu"].get<double>();
    if (j.contains("rouge_l")) r.rouge_l = j["rouge_l"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("metric report: ") + e.what());
  }
  r.validate();
  return r;
}

PerplexityResult perplexity(const model::VaeModel& model, std::span<const CorpusPair> dataset) {
  if (dataset.empty()) throw InputError("perplexity: empty dataset");
  std::vector<double> nll, kl;
  std::size_t tokens = 0;
  for (const CorpusPair& p : dataset) {
    nn::Tape tape = nn::Tape::no_grad();
    model::LayerPosteriors posts = model.encode(tape, p.source);
    std::vector<nn::Tensor> z;
    double example_kl = 0.0;
    for (const auto& g : posts) {
      z.push_back(g.mean);
      example_kl += model::kl_to_standard_normal(tape, g).item();
    }
    model::DecodeResult dec = model.decode(tape, z, p.target);
    nll.push_back(dec.recon_nll.item() * static_cast<double>(dec.num_tokens));
    kl.push_back(example_kl);
    tokens += dec.num_tokens;
  }
  PerplexityResult r;
  r.nll = ordered_sum(std::move(nll));
  r.kl = ordered_sum(std::move(kl));
  r.tokens = tokens;
  r.ppl = std::exp((r.nll + r.kl) / static_cast<double>(tokens));
  return r;
}

PerplexityResult perplexity(const model::VaeModel& model, std::span<const CorpusPair> dataset,
                            const retrieval::RetrievalDatabase& db,
                            const mixture::RetrievalOptions& options,
                            mixture::PriorWeights prior_weights) {
  if (dataset.empty()) throw InputError("perplexity: empty dataset");
  std::vector<double> nll, kl;
  std::size_t tokens = 0;
  for (const CorpusPair& p : dataset) {
    nn::Tape tape = nn::Tape::no_grad();
    model::LayerPosteriors posts = model.encode(tape, p.source);
    mixture::RetrievedMixture mix = mixture::retrieve_mixture(posts, db, options);
    std::vector<double> weighted;
    std::size_t num_tokens = 0;
    for (std::size_t c = 0; c < mix.weights.size(); ++c) {
      auto z = component_means(mix.layers.data(), mix.layers.size(), c);
      model::DecodeResult dec = model.decode(tape, z, p.target);
      num_tokens = dec.num_tokens;
      weighted.push_back(mix.weights[c] * dec.recon_nll.item() * static_cast<double>(num_tokens));
    }
    double example_kl = 0.0;
    for (const auto& layer : mix.layers) {
      example_kl += mixture::kl_mixture_upper_bound(layer, mixture::make_prior(layer, prior_weights));
    }
    nll.push_back(ordered_sum(std::move(weighted)));
    kl.push_back(example_kl);
    tokens += num_tokens;
  }
  PerplexityResult r;
  r.nll = ordered_sum(std::move(nll));
  r.kl = ordered_sum(std::move(kl));
  r.tokens = tokens;
  r.ppl = std::exp((r.nll + r.kl) / static_cast<double>(tokens));
  return r;
}

double sentence_bleu(const TokenSequence& candidate, std::span<const TokenSequence> references,
                     std::size_t n_max) {
  if (references.empty()) throw InputError("sentence_bleu: no references");
  if (n_max == 0) throw ContractError("sentence_bleu: n_max must be >= 1");
  std::vector<Overlap> overlaps;
  for (std::size_t n = 1; n <= n_max; ++n) overlaps.push_back(clipped_overlap(candidate, references, n));
  return bleu_from_counts(overlaps, static_cast<double>(candidate.size()),
                          static_cast<double>(closest_length(candidate.size(), references)));
}

double self_bleu(std::span<const TokenSequence> generations, std::size_t n_max) {
  if (generations.size() < 2) throw InputError("self_bleu: needs at least 2 generations");
  std::vector<double> scores;
  std::vector<TokenSequence> others;
  for (std::size_t i = 0; i < generations.size(); ++i) {
    others.clear();
    for (std::size_t j = 0; j < generations.size(); ++j) {
      if (j != i) others.push_back(generations[j]);
    }
    scores.push_back(sentence_bleu(generations[i], others, n_max));
  }
  return ordered_sum(std::move(scores)) / static_cast<double>(generations.size());
}

double dist_n(std::span<const TokenSequence> generations, std::size_t n) {
  if (n == 0) throw ContractError("dist_n: n must be >= 1");
  std::set<NGram> unique;
  std::size_t total = 0;
  for (const auto& g : generations) {
    for (const auto& [gram, count] : ngram_counts(g, n)) {
      unique.insert(gram);
      total += count;
    }
  }
  if (total == 0) throw InputError("dist_n: generations contain no " + std::to_string(n) + "-grams");
  return static_cast<double>(unique.size()) / static_cast<double>(total);
}

double corpus_bleu(std::span<const TokenSequence> candidates,
                   std::span<const TokenSequence> references, std::size_t n_max) {
  if (candidates.size() != references.size()) {
    throw InputError("corpus_bleu: " + std::to_string(candidates.size()) + " candidates vs " +
                     std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw InputError("corpus_bleu: empty input");
  std::vector<Overlap> overlaps(n_max);
  double cand_len = 0.0, ref_len = 0.0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    for (std::size_t n = 1; n <= n_max; ++n) {
      Overlap o = clipped_overlap(candidates[i], std::span(&references[i], 1), n);
      overlaps[n - 1].matched += o.matched;
      overlaps[n - 1].total += o.total;
    }
    cand_len += static_cast<double>(candidates[i].size());
    ref_len += static_cast<double>(references[i].size());
  }
  return bleu_from_counts(overlaps, cand_len, ref_len);
}

double rouge_l(const TokenSequence& candidate, const TokenSequence& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double p = lcs / static_cast<double>(candidate.size());
  const double r = lcs / static_cast<double>(reference.size());
  return 2.0 * p * r / (p + r);
}

double mean_rouge_l(std::span<const TokenSequence> candidates,
                    std::span<const TokenSequence> references) {
  if (candidates.size() != references.size()) {
    throw InputError("rouge_l: " + std::to_string(candidates.size()) + " candidates vs " +
                     std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw InputError("rouge_l: empty input");
  std::vector<double> scores;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    scores.push_back(rouge_l(candidates[i], references[i]));
  }
  return ordered_sum(std::move(scores)) / static_cast<double>(candidates.size());
}

std::size_t active_units(std::span<const model::LayerPosteriors> posteriors, double threshold) {
  if (posteriors.size() < 2) throw InputError("active_units: needs at least 2 examples");
  const std::size_t layers = posteriors.front().size();
  std::size_t active = 0;
  const double n = static_cast<double>(posteriors.size());
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t d = posteriors.front()[l].dim();
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<double> values;
      values.reserve(posteriors.size());
      for (const auto& p : posteriors) {
        if (p.size() != layers || p[l].dim() != d) {
          throw ContractError("active_units: posteriors differ in shape");
        }
        values.push_back(p[l].mean[j]);
      }
      const double mean = ordered_sum(values) / n;
      for (double& v : values) v = (v - mean) * (v - mean);
      if (ordered_sum(std::move(values)) / n > threshold) ++active;
    }
  }
  return active;
}

std::size_t active_units(const model::VaeModel& model, std::span<const CorpusPair> dataset,
                         double threshold) {
  std::vector<model::LayerPosteriors> posts;
  posts.reserve(dataset.size());
  for (const CorpusPair& p : dataset) {
    nn::Tape tape = nn::Tape::no_grad();
    posts.push_back(model.encode(tape, p.source));
  }
  return active_units(posts, threshold);
}

}  // namespace regavae::eval
