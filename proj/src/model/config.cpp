#include "regavae/model/config.hpp"

#include <string>

#include "regavae/error.hpp"
#include "regavae/model/tokens.hpp"

namespace regavae::model {

void ModelConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(num_layers >= 1, "num_layers must be >= 1");
  require(d_hidden >= 1, "d_hidden must be >= 1");
  require(num_heads >= 1 && d_hidden % num_heads == 0,
          "d_hidden must be divisible by num_heads");
  require(d_latent >= 1, "d_latent must be >= 1");
  require(rank >= 1, "rank must be >= 1");
  require(max_seq_len >= 2, "max_seq_len must be >= 2");
  require(vocab_size > static_cast<std::size_t>(special::kCount),
          "vocab_size must exceed the reserved tokens");
  require(ff_multiplier >= 1, "ff_multiplier must be >= 1");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"L", c.num_layers},          {"d_h", c.d_hidden},
                     {"heads", c.num_heads},       {"d_z", c.d_latent},
                     {"r_rank", c.rank},           {"max_seq_len", c.max_seq_len},
                     {"vocab_size", c.vocab_size}, {"ff_multiplier", c.ff_multiplier}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.num_layers = j.value("L", d.num_layers);
  c.d_hidden = j.value("d_h", d.d_hidden);
  c.num_heads = j.value("heads", d.num_heads);
  c.d_latent = j.value("d_z", d.d_latent);
  c.rank = j.value("r_rank", d.rank);
  c.max_seq_len = j.value("max_seq_len", d.max_seq_len);
  c.vocab_size = j.value("vocab_size", d.vocab_size);
  c.ff_multiplier = j.value("ff_multiplier", d.ff_multiplier);
}

}  // namespace regavae::model
