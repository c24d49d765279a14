#include "regavae/harness/config.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <type_traits>

#include "regavae/error.hpp"

namespace regavae::harness {
namespace {

template <typename T>
constexpr bool kUnsignedInt = std::is_unsigned_v<T> && !std::is_same_v<T, bool>;

}  // namespace

#define REGAVAE_RUN_CONFIG_FIELDS(X)                                                     \
  X(L) X(d_h) X(heads) X(d_z) X(r_rank) X(max_seq_len) X(ff_multiplier)                  \
  X(learning_rate) X(batch_size) X(stage1_epochs) X(stage3_epochs) X(beta_max)           \
  X(beta_warmup_fraction) X(stage3_beta) X(grad_clip) X(seed) X(log_every)               \
  X(k_neighbors) X(refresh_interval) X(exclude_self) X(self_logit) X(prior_weights)      \
  X(corpus) X(heldout_fraction) X(min_freq) X(eval_top_k) X(max_gen_len) X(k_sweep)      \
  X(checkpoints) X(database_dump) X(metrics_out)

void RunConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (d_z < 1) throw ConfigError("d_z must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (refresh_interval < 1) throw ConfigError("refresh_interval must be >= 1");
  if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be > 0");
  if (!(beta_max >= 0.0) || !(stage3_beta >= 0.0)) throw ConfigError("beta must be >= 0");
  if (!(beta_warmup_fraction >= 0.0 && beta_warmup_fraction <= 1.0)) {
    throw ConfigError("beta_warmup_fraction must lie in [0, 1]");
  }
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) {
    throw ConfigError("heldout_fraction must lie in [0, 1)");
  }
  if (eval_top_k < 1) throw ConfigError("eval_top_k must be >= 1");
  if (log_every < 1) throw ConfigError("log_every must be >= 1");
  prior_policy();
  model_config(special::kCount + 1).validate();
}

model::ModelConfig RunConfig::model_config(std::size_t vocab_size) const {
  model::ModelConfig m;
  m.num_layers = L;
  m.d_hidden = d_h;
  m.num_heads = heads;
  m.d_latent = d_z;
  m.rank = r_rank;
  m.max_seq_len = max_seq_len;
  m.vocab_size = vocab_size;
  m.ff_multiplier = ff_multiplier;
  return m;
}

mixture::PriorWeights RunConfig::prior_policy() const {
  if (prior_weights == "tied") return mixture::PriorWeights::kTied;
  if (prior_weights == "uniform") return mixture::PriorWeights::kUniform;
  throw ConfigError("prior_weights must be \"tied\" or \"uniform\", got \"" + prior_weights + "\"");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json::object();
#define X(name) j[#name] = c.name;
  REGAVAE_RUN_CONFIG_FIELDS(X)
#undef X
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  static const std::set<std::string> known = {
#define X(name) #name,
      REGAVAE_RUN_CONFIG_FIELDS(X)
#undef X
  };
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown run config key \"" + key + "\"");
  }
  try {
#define X(name)                                                                     \
  if (j.contains(#name)) {                                                          \
    if constexpr (kUnsignedInt<decltype(c.name)>) {                                \
      const auto& v = j.at(#name);                                                  \
      if (!v.is_number_unsigned() &&                                                \
          !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {                 \
        throw ConfigError("run config key \"" #name "\" must be a nonnegative integer"); \
      }                                                                             \
    }                                                                               \
    j.at(#name).get_to(c.name);                                                     \
  }
    REGAVAE_RUN_CONFIG_FIELDS(X)
#undef X
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  RunConfig c;
  from_json(j, c);
  // A relative corpus path is relative to the config file.
  if (!c.corpus.empty() && std::filesystem::path(c.corpus).is_relative()) {
    c.corpus = (std::filesystem::path(path).parent_path() / c.corpus).lexically_normal().string();
  }
  c.validate();
  return c;
}

}  // namespace regavae::harness
