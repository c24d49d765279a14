#pragma once

#include <cstddef>

#include <json.hpp>

namespace regavae::model {

struct ModelConfig {
  std::size_t num_layers = 4;
  std::size_t d_hidden = 128;
  std::size_t num_heads = 4;
  std::size_t d_latent = 32;
  std::size_t rank = 4;  // r_rank of the low-rank latent injection
  std::size_t max_seq_len = 128;
  std::size_t vocab_size = 0;
  std::size_t ff_multiplier = 4;

  // ConfigError on any inconsistent field.
  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace regavae::model
