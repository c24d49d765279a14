#include "regavae/model/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "regavae/error.hpp"
#include "regavae/log.hpp"
#include "regavae/numerics/ops.hpp"

namespace regavae::model {

using nn::Tensor;
namespace ops = nn::ops;

namespace {

Tensor normal_param(nn::Shape shape, nn::Rng& rng, double stddev) {
  return ops::random_normal(std::move(shape), rng, stddev, true);
}

Tensor const_param(nn::Shape shape, double value) {
  return Tensor::full(std::move(shape), value, true);
}

}  // namespace

Tensor VaeModel::add(std::string name, Tensor t) {
  params_.emplace_back(std::move(name), t);
  return t;
}

VaeModel::Block VaeModel::make_block(const std::string& prefix, nn::Rng& rng) {
  const std::size_t d = config_.d_hidden;
  const std::size_t ff = d * config_.ff_multiplier;
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_ff = 1.0 / std::sqrt(static_cast<double>(ff));
  // Residual projections start smaller so the stack begins near identity.
  const double s_out = s_in / std::sqrt(2.0 * static_cast<double>(config_.num_layers));
  Block b;
  b.ln1_g = add(prefix + ".ln1.gamma", const_param({d}, 1.0));
  b.ln1_b = add(prefix + ".ln1.beta", const_param({d}, 0.0));
  b.wq = add(prefix + ".attn.wq", normal_param({d, d}, rng, s_in));
  b.bq = add(prefix + ".attn.bq", const_param({d}, 0.0));
  b.wk = add(prefix + ".attn.wk", normal_param({d, d}, rng, s_in));
  b.bk = add(prefix + ".attn.bk", const_param({d}, 0.0));
  b.wv = add(prefix + ".attn.wv", normal_param({d, d}, rng, s_in));
  b.bv = add(prefix + ".attn.bv", const_param({d}, 0.0));
  b.wo = add(prefix + ".attn.wo", normal_param({d, d}, rng, s_out));
  b.bo = add(prefix + ".attn.bo", const_param({d}, 0.0));
  b.ln2_g = add(prefix + ".ln2.gamma", const_param({d}, 1.0));
  b.ln2_b = add(prefix + ".ln2.beta", const_param({d}, 0.0));
  b.w1 = add(prefix + ".mlp.w1", normal_param({d, ff}, rng, s_in));
  b.b1 = add(prefix + ".mlp.b1", const_param({ff}, 0.0));
  b.w2 = add(prefix + ".mlp.w2", normal_param({ff, d}, rng, s_ff * s_out / s_in));
  b.b2 = add(prefix + ".mlp.b2", const_param({d}, 0.0));
  return b;
}

VaeModel::VaeModel(ModelConfig config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  nn::Rng rng(init_seed);
  const std::size_t d = config_.d_hidden;
  const std::size_t dz = config_.d_latent;
  const std::size_t L = config_.num_layers;
  const std::size_t r = config_.rank;

  token_embedding_ = add("embed.token", normal_param({config_.vocab_size, d}, rng, 0.1));
  position_embedding_ = add("embed.position", normal_param({config_.max_seq_len, d}, rng, 0.1));

  for (std::size_t l = 0; l < L; ++l) {
    encoder_.push_back(make_block("encoder.layer" + std::to_string(l), rng));
  }
  enc_ln_g_ = add("encoder.ln_final.gamma", const_param({d}, 1.0));
  enc_ln_b_ = add("encoder.ln_final.beta", const_param({d}, 0.0));
  for (std::size_t l = 0; l < L; ++l) {
    const std::string p = "posterior.layer" + std::to_string(l);
    PosteriorHead h;
    h.w = add(p + ".w", normal_param({d, 2 * dz}, rng, 0.1 / std::sqrt(static_cast<double>(d))));
    h.b = add(p + ".b", const_param({2 * dz}, 0.0));
    heads_.push_back(h);
  }

  // Scaled so each rank-summed factor has roughly unit-variance output.
  const double s_v = 1.0 / std::sqrt(static_cast<double>(r * d));
  const double s_z = 1.0 / std::sqrt(static_cast<double>(r * dz));
  for (std::size_t l = 0; l < L; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    Injection inj;
    for (std::size_t j = 0; j < r; ++j) {
      inj.w_v.push_back(add(p + ".inject.w_v" + std::to_string(j), normal_param({d, d}, rng, s_v)));
      inj.w_z.push_back(add(p + ".inject.w_z" + std::to_string(j), normal_param({d, dz}, rng, s_z)));
    }
    injections_.push_back(std::move(inj));
    decoder_.push_back(make_block(p, rng));
  }
  dec_ln_g_ = add("decoder.ln_final.gamma", const_param({d}, 1.0));
  dec_ln_b_ = add("decoder.ln_final.beta", const_param({d}, 0.0));
  out_w_ = add("output.w", normal_param({d, config_.vocab_size}, rng, 0.02));
  out_b_ = add("output.b", const_param({config_.vocab_size}, 0.0));
}

VaeModel VaeModel::clone() const {
  VaeModel copy(config_, 0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].second.data();
    std::copy(src.begin(), src.end(), copy.params_[i].second.mutable_data().begin());
  }
  return copy;
}

std::vector<Tensor> VaeModel::parameters() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

const Tensor& VaeModel::parameter(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw ContractError("unknown parameter '" + name + "'");
}

std::size_t VaeModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

Tensor VaeModel::embed(nn::Tape& tape, std::span<const int> ids) const {
  Tensor tok = ops::embedding_lookup(tape, token_embedding_, ids);
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  Tensor pos = ops::embedding_lookup(tape, position_embedding_, positions);
  return ops::add(tape, tok, pos);
}

Tensor VaeModel::run_block(nn::Tape& tape, const Block& b, const Tensor& h,
                           bool causal) const {
  Tensor a = ops::layer_norm(tape, h, b.ln1_g, b.ln1_b);
  Tensor q = ops::add_rowwise(tape, ops::matmul(tape, a, b.wq), b.bq);
  Tensor k = ops::add_rowwise(tape, ops::matmul(tape, a, b.wk), b.bk);
  Tensor v = ops::add_rowwise(tape, ops::matmul(tape, a, b.wv), b.bv);
  Tensor att = ops::attention(tape, q, k, v, config_.num_heads, causal);
  Tensor h1 = ops::add(tape, h, ops::add_rowwise(tape, ops::matmul(tape, att, b.wo), b.bo));
  Tensor m = ops::layer_norm(tape, h1, b.ln2_g, b.ln2_b);
  Tensor f = ops::gelu(tape, ops::add_rowwise(tape, ops::matmul(tape, m, b.w1), b.b1));
  return ops::add(tape, h1, ops::add_rowwise(tape, ops::matmul(tape, f, b.w2), b.b2));
}

LayerPosteriors VaeModel::encode(nn::Tape& tape, std::span<const int> tokens) const {
  if (tokens.empty()) throw InputError("encode: empty token sequence");
  if (tokens.size() > config_.max_seq_len) {
    log::warn("encode: truncating sequence of " + std::to_string(tokens.size()) +
              " tokens to " + std::to_string(config_.max_seq_len));
    tokens = tokens.first(config_.max_seq_len);
  }
  Tensor h = embed(tape, tokens);
  for (const Block& b : encoder_) h = run_block(tape, b, h, /*causal=*/false);
  h = ops::layer_norm(tape, h, enc_ln_g_, enc_ln_b_);
  Tensor pooled = ops::mean_rows(tape, h);

  const std::size_t dz = config_.d_latent;
  LayerPosteriors out;
  out.reserve(heads_.size());
  for (const PosteriorHead& head : heads_) {
    Tensor stats = ops::add_rowwise(tape, ops::matmul(tape, pooled, head.w), head.b);
    Tensor mean = ops::slice_cols(tape, stats, 0, dz);
    Tensor log_var = ops::clamp(tape, ops::slice_cols(tape, stats, dz, dz), kLogVarMin, kLogVarMax);
    out.push_back({mean, log_var});
  }
  return out;
}

Tensor VaeModel::inject_latent(nn::Tape& tape, const Tensor& hidden, const Tensor& z,
                               std::size_t layer) const {
  if (layer >= injections_.size()) {
    throw ContractError("inject_latent: layer " + std::to_string(layer) + " out of range");
  }
  const Injection& inj = injections_[layer];
  if (inj.w_v.empty()) throw ConfigError("inject_latent: rank must be >= 1");
  if (z.numel() != config_.d_latent) {
    throw DimensionError("inject_latent: latent " + nn::shape_string(z.shape()) +
                         " does not match d_z=" + std::to_string(config_.d_latent));
  }
  Tensor w_v = inj.w_v[0];
  Tensor w_z = inj.w_z[0];
  for (std::size_t j = 1; j < inj.w_v.size(); ++j) {
    w_v = ops::add(tape, w_v, inj.w_v[j]);
    w_z = ops::add(tape, w_z, inj.w_z[j]);
  }
  Tensor hidden_part = ops::matmul(tape, hidden, ops::transpose(tape, w_v));
  Tensor latent_part = ops::matmul(tape, ops::reshape(tape, z, {config_.d_latent}),
                                   ops::transpose(tape, w_z));
  return ops::mul_rowwise(tape, hidden_part, latent_part);
}

Tensor VaeModel::decoder_logits(nn::Tape& tape, std::span<const Tensor> z_layers,
                                std::span<const int> inputs) const {
  if (z_layers.size() != config_.num_layers) {
    throw ContractError("decode: expected " + std::to_string(config_.num_layers) +
                        " latents, got " + std::to_string(z_layers.size()));
  }
  Tensor h = embed(tape, inputs);
  for (std::size_t l = 0; l < decoder_.size(); ++l) {
    h = ops::add(tape, h, inject_latent(tape, h, z_layers[l], l));
    h = run_block(tape, decoder_[l], h, /*causal=*/true);
  }
  h = ops::layer_norm(tape, h, dec_ln_g_, dec_ln_b_);
  return ops::add_rowwise(tape, ops::matmul(tape, h, out_w_), out_b_);
}

DecodeResult VaeModel::decode(nn::Tape& tape, std::span<const Tensor> z_layers,
                              std::span<const int> target) const {
  const std::size_t keep = std::min(target.size(), config_.max_seq_len - 1);
  if (keep < target.size()) {
    log::warn("decode: truncating target of " + std::to_string(target.size()) +
              " tokens to " + std::to_string(keep));
  }
  std::vector<int> inputs{special::kBos};
  inputs.insert(inputs.end(), target.begin(), target.begin() + static_cast<std::ptrdiff_t>(keep));
  std::vector<int> targets(target.begin(), target.begin() + static_cast<std::ptrdiff_t>(keep));
  targets.push_back(special::kEos);

  DecodeResult result;
  result.logits = decoder_logits(tape, z_layers, inputs);
  result.recon_nll = ops::cross_entropy_with_logits(tape, result.logits, targets);
  result.num_tokens = targets.size();
  return result;
}

ElboBreakdown VaeModel::elbo_step(nn::Tape& tape, std::span<const int> x,
                                  std::span<const int> y, double beta,
                                  nn::Rng& rng) const {
  LayerPosteriors posts = encode(tape, x);
  std::vector<Tensor> z;
  z.reserve(posts.size());
  Tensor kl;
  for (const LatentGaussian& g : posts) {
    z.push_back(reparameterize(tape, g, rng));
    Tensor layer_kl = kl_to_standard_normal(tape, g);
    kl = kl.defined() ? ops::add(tape, kl, layer_kl) : layer_kl;
  }
  DecodeResult dec = decode(tape, z, y);

  ElboBreakdown out;
  out.beta = beta;
  out.loss = ops::add(tape, dec.recon_nll, ops::scale(tape, kl, beta));
  out.recon_nll = dec.recon_nll.item();
  out.kl = kl.item();
  out.total = out.loss.item();
  return out;
}

TokenSequence VaeModel::generate(std::span<const Tensor> z_layers,
                                 const GenerateOptions& options, nn::Rng* rng) const {
  if (options.strategy == DecodeStrategy::kTopK && rng == nullptr) {
    throw ContractError("generate: top-k sampling needs an rng");
  }
  const std::size_t limit = std::min(options.max_len, config_.max_seq_len - 1);
  std::vector<int> inputs{special::kBos};
  TokenSequence out;
  while (out.size() < limit) {
    nn::Tape tape = nn::Tape::no_grad();
    Tensor logits = decoder_logits(tape, z_layers, inputs);
    const std::size_t V = logits.cols();
    auto last = logits.data().subspan((logits.rows() - 1) * V, V);
    int next = 0;
    if (options.strategy == DecodeStrategy::kGreedy) {
      next = static_cast<int>(std::max_element(last.begin(), last.end()) - last.begin());
    } else {
      std::vector<int> order(V);
      std::iota(order.begin(), order.end(), 0);
      const std::size_t k = std::clamp<std::size_t>(options.top_k, 1, V);
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                        [&](int a, int b) { return last[a] > last[b] || (last[a] == last[b] && a < b); });
      std::vector<double> top(k);
      for (std::size_t i = 0; i < k; ++i) top[i] = last[order[i]];
      std::vector<double> probs = ops::softmax_values(top);
      const double u = rng->uniform();
      double acc = 0.0;
      next = order[k - 1];
      for (std::size_t i = 0; i < k; ++i) {
        acc += probs[i];
        if (u < acc) {
          next = order[i];
          break;
        }
      }
    }
    if (next == special::kEos) break;
    out.push_back(next);
    inputs.push_back(next);
  }
  return out;
}

}  // namespace regavae::model
