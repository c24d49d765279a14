#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "regavae/eval/metrics.hpp"
#include "regavae/harness/config.hpp"
#include "regavae/harness/corpus.hpp"
#include "regavae/model/vae.hpp"
#include "regavae/retrieval/database.hpp"

namespace regavae::harness {

// Independent rng streams derived from RunConfig::seed.
enum class SeedStream : std::uint64_t {
  kInit = 1,
  kStage1Order = 2,
  kStage1Sample = 3,
  kStage3Order = 4,
  kStage3Sample = 5,
  kEval = 6,
};
std::uint64_t stream_seed(const RunConfig& config, SeedStream stream);

// Per-step training record.
struct TrainLog {
  std::vector<double> loss;
  std::vector<double> recon;
  std::vector<double> kl;
  std::vector<double> beta;
  std::size_t refreshes = 0;
};

struct Stage1Result {
  model::VaeModel model;
  TrainLog log;
};

// Plain VAE training with beta rising linearly from 0 to beta_max over the
// first beta_warmup_fraction of the steps. Throws NumericError on divergence.
Stage1Result run_stage1(const RunConfig& config, const Corpus& corpus);

// Database over the training split, snapshot step 0.
retrieval::RetrievalDatabase run_stage2(const RunConfig& config, const model::VaeModel& model,
                                        const Corpus& corpus);

enum class Objective { kRegaVae, kPlainElbo };

struct Stage3Result {
  model::VaeModel model;
  retrieval::RetrievalDatabase db;
  TrainLog log;
};

// Continues from `model` with a fresh optimizer for stage3_epochs at
// beta = stage3_beta. kRegaVae retrieves k_neighbors per example and refreshes
// the database every refresh_interval steps; kPlainElbo ignores the database.
Stage3Result run_stage3(const RunConfig& config, const model::VaeModel& model,
                        retrieval::RetrievalDatabase db, const Corpus& corpus,
                        Objective objective = Objective::kRegaVae);

struct EvalResult {
  eval::MetricReport report;
  eval::PerplexityResult perplexity;
  double kl_per_example = 0.0;  // held-out, nats
  std::vector<TokenSequence> generations;
};

// Held-out evaluation. With k_neighbors > 0 perplexity and generation use the
// retrieval mixture over `db`. Generation: one sample per held-out source,
// top-k sampling (eval_top_k) from the means of a component drawn from the
// mixture weights, fixed seed.
EvalResult run_eval(const RunConfig& config, const model::VaeModel& model,
                    const retrieval::RetrievalDatabase& db, const Corpus& corpus);

struct AblationRow {
  std::string name;
  std::size_t k = 0;
  EvalResult result;
};

// One shared stage 1 and stage 2, then stage 3 + eval for k = 0, the
// configured k_neighbors and every k in k_sweep (deduplicated, ascending).
std::vector<AblationRow> run_ablation(const RunConfig& config, const Corpus& corpus);
std::string ablation_table(const std::vector<AblationRow>& rows);
nlohmann::json ablation_json(const std::vector<AblationRow>& rows);

// Loads the configured corpus and splits it.
Corpus load_corpus(const RunConfig& config);

// Checkpoint with the vocabulary, stage tag and resolved config in the header.
void save_run_checkpoint(const std::filesystem::path& path, const model::VaeModel& model,
                         const Vocabulary& vocab, const RunConfig& config,
                         const std::string& stage);
struct RunCheckpoint {
  model::VaeModel model;
  Vocabulary vocab;
  std::string stage;
};
RunCheckpoint load_run_checkpoint(const std::filesystem::path& path);

}  // namespace regavae::harness
