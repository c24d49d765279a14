#pragma once

#include <string>
#include <vector>

#include "regavae/model/tokens.hpp"
#include "regavae/model/vae.hpp"
#include "regavae/numerics/ops.hpp"
#include "regavae/numerics/optim.hpp"

namespace regavae::test_support {

inline model::ModelConfig micro_config(std::size_t vocab = 24) {
  model::ModelConfig c;
  c.num_layers = 2;
  c.d_hidden = 8;
  c.num_heads = 2;
  c.d_latent = 4;
  c.rank = 2;
  c.max_seq_len = 16;
  c.vocab_size = vocab;
  c.ff_multiplier = 2;
  return c;
}

inline model::ModelConfig small_config(std::size_t vocab) {
  model::ModelConfig c;
  c.num_layers = 2;
  c.d_hidden = 32;
  c.num_heads = 2;
  c.d_latent = 8;
  c.rank = 2;
  c.max_seq_len = 24;
  c.vocab_size = vocab;
  c.ff_multiplier = 2;
  return c;
}

struct Pair {
  TokenSequence x;
  TokenSequence y;
};

// Deterministic toy pairs over ids [kCount, vocab): y is a shifted copy of x.
inline std::vector<Pair> toy_pairs(std::size_t n, std::size_t vocab, std::uint64_t seed,
                                   std::size_t len = 5) {
  nn::Rng rng(seed);
  const std::size_t usable = vocab - special::kCount;
  std::vector<Pair> out;
  for (std::size_t i = 0; i < n; ++i) {
    Pair p;
    for (std::size_t t = 0; t < len; ++t) {
      const int tok = special::kCount + static_cast<int>(rng.below(usable));
      p.x.push_back(tok);
      p.y.push_back(special::kCount +
                    static_cast<int>((static_cast<std::size_t>(tok - special::kCount) + 1) % usable));
    }
    out.push_back(std::move(p));
  }
  return out;
}

// Minimal Adam loop over elbo_step, independent of the harness trainer.
// Returns the mean recon NLL of each step.
inline std::vector<double> train_elbo(model::VaeModel& m, const std::vector<Pair>& data,
                                      std::size_t steps, double lr, double beta,
                                      std::size_t batch, std::uint64_t seed) {
  auto params = m.parameters();
  nn::Adam opt(params, nn::AdamConfig{.learning_rate = lr});
  nn::Rng rng(seed);
  std::vector<double> losses;
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < steps; ++s) {
    nn::Tape tape;
    nn::Tensor total;
    double value = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const auto& p = data[cursor++ % data.size()];
      auto e = m.elbo_step(tape, p.x, p.y, beta, rng);
      total = total.defined() ? nn::ops::add(tape, total, e.loss) : e.loss;
      value += e.recon_nll;
    }
    tape.backward(nn::ops::scale(tape, total, 1.0 / static_cast<double>(batch)));
    nn::clip_grad_norm(params, 1.0);
    opt.step();
    losses.push_back(value / static_cast<double>(batch));
  }
  return losses;
}

inline std::vector<CorpusPair> as_corpus(const std::vector<Pair>& pairs) {
  std::vector<CorpusPair> out;
  for (const auto& p : pairs) out.push_back({p.x, p.y});
  return out;
}

// Zeroes every posterior head so encode() returns N(0, I) per layer.
inline void zero_posterior_heads(model::VaeModel& m) {
  for (auto& [name, t] : m.named_parameters()) {
    if (name.rfind("posterior.", 0) == 0) {
      for (double& v : t.mutable_data()) v = 0.0;
    }
  }
}

}  // namespace regavae::test_support
