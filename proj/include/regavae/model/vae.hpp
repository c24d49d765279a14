#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "regavae/model/config.hpp"
#include "regavae/model/latent.hpp"
#include "regavae/model/tokens.hpp"
#include "regavae/numerics/rng.hpp"
#include "regavae/numerics/tensor.hpp"

namespace regavae::model {

// Per-example training signal. `loss` is the differentiable total on the
// tape; the doubles are its detached parts.
struct ElboBreakdown {
  double recon_nll = 0.0;  // nats per target token
  double kl = 0.0;         // nats, summed over layers
  double beta = 0.0;
  double total = 0.0;      // recon_nll + beta * kl
  nn::Tensor loss;
};

struct DecodeResult {
  nn::Tensor logits;  // [T x V], T = target length + 1 (end token)
  nn::Tensor recon_nll;
  std::size_t num_tokens = 0;
};

enum class DecodeStrategy { kGreedy, kTopK };

struct GenerateOptions {
  std::size_t max_len = 32;
  DecodeStrategy strategy = DecodeStrategy::kGreedy;
  std::size_t top_k = 50;
};

using NamedTensor = std::pair<std::string, nn::Tensor>;

// Transformer VAE: bidirectional encoder with mean pooling and one posterior
// head per decoder layer; causal decoder that fuses the layer's latent into
// its residual stream with a rank-r tensor product before each block.
class VaeModel {
 public:
  VaeModel(ModelConfig config, std::uint64_t init_seed);

  // Parameters are shared handles, so copies would alias weights.
  VaeModel(const VaeModel&) = delete;
  VaeModel& operator=(const VaeModel&) = delete;
  VaeModel(VaeModel&&) = default;
  VaeModel& operator=(VaeModel&&) = default;
  // Independent deep copy.
  VaeModel clone() const;

  const ModelConfig& config() const { return config_; }

  // Sequences longer than max_seq_len are truncated with a warning.
  LayerPosteriors encode(nn::Tape& tape, std::span<const int> tokens) const;

  // (sum_j W_v^(l,j) v_i) * (sum_j W_z^(l,j) z) at every row i of `hidden`.
  nn::Tensor inject_latent(nn::Tape& tape, const nn::Tensor& hidden,
                           const nn::Tensor& z, std::size_t layer) const;

  // Teacher-forced decoding of <bos> target -> target <eos>.
  DecodeResult decode(nn::Tape& tape, std::span<const nn::Tensor> z_layers,
                      std::span<const int> target) const;

  // Plain VAE objective: encode x, sample z per layer, decode y.
  ElboBreakdown elbo_step(nn::Tape& tape, std::span<const int> x,
                          std::span<const int> y, double beta, nn::Rng& rng) const;

  // Autoregressive decoding until <eos> or max_len tokens. `rng` is required
  // for top-k sampling only.
  TokenSequence generate(std::span<const nn::Tensor> z_layers,
                         const GenerateOptions& options, nn::Rng* rng = nullptr) const;

  std::vector<NamedTensor>& named_parameters() { return params_; }
  const std::vector<NamedTensor>& named_parameters() const { return params_; }
  std::vector<nn::Tensor> parameters() const;
  // Throws ContractError for unknown names.
  const nn::Tensor& parameter(const std::string& name) const;
  std::size_t parameter_count() const;

 private:
  struct Block {
    nn::Tensor ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    nn::Tensor ln2_g, ln2_b, w1, b1, w2, b2;
  };
  struct Injection {
    std::vector<nn::Tensor> w_v;  // rank x [d_h x d_h]
    std::vector<nn::Tensor> w_z;  // rank x [d_h x d_z]
  };
  struct PosteriorHead {
    nn::Tensor w, b;  // [d_h x 2 d_z], [2 d_z]
  };

  nn::Tensor add(std::string name, nn::Tensor t);
  Block make_block(const std::string& prefix, nn::Rng& rng);
  nn::Tensor run_block(nn::Tape& tape, const Block& block, const nn::Tensor& h,
                       bool causal) const;
  nn::Tensor embed(nn::Tape& tape, std::span<const int> ids) const;
  nn::Tensor decoder_logits(nn::Tape& tape, std::span<const nn::Tensor> z_layers,
                            std::span<const int> inputs) const;

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  nn::Tensor token_embedding_;
  nn::Tensor position_embedding_;
  std::vector<Block> encoder_;
  nn::Tensor enc_ln_g_, enc_ln_b_;
  std::vector<PosteriorHead> heads_;
  std::vector<Block> decoder_;
  std::vector<Injection> injections_;
  nn::Tensor dec_ln_g_, dec_ln_b_;
  nn::Tensor out_w_, out_b_;
};

}  // namespace regavae::model
