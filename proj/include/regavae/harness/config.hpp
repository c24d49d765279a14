#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "regavae/mixture/mixture.hpp"
#include "regavae/model/config.hpp"

namespace regavae::harness {

// Flat JSON object; every key is optional and unknown keys are rejected.
// d_z, learning rate and epoch counts default to the reference setup; model
// sizes are desk scale.
struct RunConfig {
  // model
  std::size_t L = 4;
  std::size_t d_h = 128;
  std::size_t heads = 4;
  std::size_t d_z = 32;
  std::size_t r_rank = 4;
  std::size_t max_seq_len = 128;
  std::size_t ff_multiplier = 4;

  // training
  double learning_rate = 5e-5;
  std::size_t batch_size = 8;
  std::size_t stage1_epochs = 10;
  std::size_t stage3_epochs = 15;
  double beta_max = 1.0;
  double beta_warmup_fraction = 0.3;  // of stage-1 steps
  double stage3_beta = 1.0;
  double grad_clip = 1.0;
  std::uint64_t seed = 1;
  std::size_t log_every = 100;

  // retrieval
  std::size_t k_neighbors = 5;
  std::size_t refresh_interval = 500;
  bool exclude_self = true;
  double self_logit = mixture::kSelfLogit;
  std::string prior_weights = "tied";  // "tied" | "uniform"

  // data
  std::string corpus;
  double heldout_fraction = 0.1;
  std::size_t min_freq = 1;

  // evaluation
  std::size_t eval_top_k = 50;
  std::size_t max_gen_len = 32;
  std::vector<std::size_t> k_sweep{1, 5, 10};

  // paths; empty means "<out>/<default name>"
  std::string checkpoints;
  std::string database_dump;
  std::string metrics_out;

  // Throws ConfigError.
  void validate() const;
  model::ModelConfig model_config(std::size_t vocab_size) const;
  mixture::PriorWeights prior_policy() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Starts from `c`'s current values, so defaults fill absent keys.
void from_json(const nlohmann::json& j, RunConfig& c);

// A relative `corpus` is resolved against the config file's directory.
RunConfig load_run_config(const std::string& path);

}  // namespace regavae::harness
