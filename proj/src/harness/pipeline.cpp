#include "regavae/harness/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "regavae/error.hpp"
#include "regavae/log.hpp"
#include "regavae/mixture/mixture.hpp"
#include "regavae/model/checkpoint.hpp"
#include "regavae/numerics/ops.hpp"
#include "regavae/numerics/optim.hpp"

namespace regavae::harness {
namespace {

namespace ops = nn::ops;

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

std::vector<std::size_t> shuffled_indices(std::size_t n, nn::Rng& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

template <typename LossFn, typename BeforeStep>
TrainLog train(const char* stage, const RunConfig& config, model::VaeModel& model,
               const std::vector<CorpusPair>& data, std::size_t epochs, SeedStream order_stream,
               SeedStream sample_stream, LossFn&& loss_fn, BeforeStep&& before_step,
               const std::function<double(std::size_t, std::size_t)>& beta_at) {
  if (data.empty()) throw InputError(std::string(stage) + ": no training examples");
  std::vector<nn::Tensor> params = model.parameters();
  nn::Adam optimizer(params, nn::AdamConfig{.learning_rate = config.learning_rate});
  nn::Rng order_rng(stream_seed(config, order_stream));
  nn::Rng sample_rng(stream_seed(config, sample_stream));
  const std::size_t per_epoch = steps_per_epoch(data.size(), config.batch_size);
  const std::size_t total_steps = per_epoch * epochs;

  TrainLog log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const std::vector<std::size_t> order = shuffled_indices(data.size(), order_rng);
    for (std::size_t b = 0; b < per_epoch; ++b, ++step) {
      before_step(step, log);
      const double beta = beta_at(step, total_steps);
      const std::size_t begin = b * config.batch_size;
      const std::size_t end = std::min(begin + config.batch_size, data.size());
      nn::Tape tape;
      nn::Tensor total;
      double recon = 0.0, kl = 0.0;
      try {
        for (std::size_t i = begin; i < end; ++i) {
          model::ElboBreakdown e = loss_fn(tape, order[i], beta, sample_rng);
          total = total.defined() ? ops::add(tape, total, e.loss) : e.loss;
          recon += e.recon_nll;
          kl += e.kl;
        }
        const double inv = 1.0 / static_cast<double>(end - begin);
        nn::Tensor loss = ops::scale(tape, total, inv);
        tape.backward(loss);
        nn::clip_grad_norm(params, config.grad_clip);
        optimizer.step();
        log.loss.push_back(loss.item());
        log.recon.push_back(recon * inv);
        log.kl.push_back(kl * inv);
        log.beta.push_back(beta);
      } catch (const NumericError& e) {
        throw NumericError(std::string(stage) + " diverged at step " + std::to_string(step) +
                           " (epoch " + std::to_string(epoch) + "): " + e.what());
      }
      if ((step + 1) % config.log_every == 0 || step + 1 == total_steps) {
        std::ostringstream msg;
        msg << stage << " step " << step + 1 << "/" << total_steps << " loss "
            << log.loss.back() << " recon " << log.recon.back() << " kl " << log.kl.back()
            << " beta " << beta;
        log::info(msg.str());
      }
    }
  }
  return log;
}

}  // namespace

std::uint64_t stream_seed(const RunConfig& config, SeedStream stream) {
  return nn::derive_seed(config.seed, static_cast<std::uint64_t>(stream));
}

Corpus load_corpus(const RunConfig& config) {
  if (config.corpus.empty()) throw ConfigError("no corpus configured");
  const std::vector<TextPair> records = read_jsonl(config.corpus);
  return split_and_tokenize(records, config.heldout_fraction, config.min_freq);
}

Stage1Result run_stage1(const RunConfig& config, const Corpus& corpus) {
  config.validate();
  model::VaeModel model(config.model_config(corpus.vocab.size()),
                        stream_seed(config, SeedStream::kInit));
  const double warm = config.beta_warmup_fraction;
  auto beta_at = [&](std::size_t step, std::size_t total) {
    const double ramp = warm * static_cast<double>(total);
    if (ramp <= 0.0) return config.beta_max;
    return config.beta_max * std::min(1.0, static_cast<double>(step) / ramp);
  };
  auto loss = [&](nn::Tape& tape, std::size_t i, double beta, nn::Rng& rng) {
    return model.elbo_step(tape, corpus.train[i].source, corpus.train[i].target, beta, rng);
  };
  TrainLog log = train("stage1", config, model, corpus.train, config.stage1_epochs,
                       SeedStream::kStage1Order, SeedStream::kStage1Sample, loss,
                       [](std::size_t, TrainLog&) {}, beta_at);
  return {std::move(model), std::move(log)};
}

retrieval::RetrievalDatabase run_stage2(const RunConfig& config, const model::VaeModel& model,
                                        const Corpus& corpus) {
  return retrieval::build_database(corpus.train, model, 0, config.refresh_interval);
}

Stage3Result run_stage3(const RunConfig& config, const model::VaeModel& start,
                        retrieval::RetrievalDatabase db, const Corpus& corpus,
                        Objective objective) {
  config.validate();
  Stage3Result result{start.clone(), std::move(db), {}};
  model::VaeModel& model = result.model;
  const bool retrieve = objective == Objective::kRegaVae && config.k_neighbors > 0;
  const mixture::PriorWeights prior = config.prior_policy();

  auto before_step = [&](std::size_t step, TrainLog& log) {
    if (!retrieve) return;
    if (auto fresh = retrieval::maybe_refresh(result.db, step, model)) {
      result.db = std::move(*fresh);
      ++log.refreshes;
      log::debug("stage3 refreshed retrieval database at step " + std::to_string(step));
    }
  };
  auto loss = [&](nn::Tape& tape, std::size_t i, double beta, nn::Rng& rng) {
    const CorpusPair& p = corpus.train[i];
    if (objective == Objective::kPlainElbo) {
      return model.elbo_step(tape, p.source, p.target, beta, rng);
    }
    mixture::RetrievalOptions options{.k = config.k_neighbors, .self_logit = config.self_logit};
    if (config.exclude_self) options.exclude_id = i;
    return mixture::regavae_loss(tape, model, p.source, p.target, result.db, options, beta, rng,
                                 prior)
        .elbo;
  };
  auto beta_at = [&](std::size_t, std::size_t) { return config.stage3_beta; };
  result.log = train("stage3", config, model, corpus.train, config.stage3_epochs,
                     SeedStream::kStage3Order, SeedStream::kStage3Sample, loss, before_step,
                     beta_at);
  return result;
}

EvalResult run_eval(const RunConfig& config, const model::VaeModel& model,
                    const retrieval::RetrievalDatabase& db, const Corpus& corpus) {
  const std::vector<CorpusPair>& data = corpus.heldout;
  if (data.size() < 2) throw InputError("evaluation needs at least 2 held-out records");
  mixture::RetrievalOptions options{.k = config.k_neighbors, .self_logit = config.self_logit};

  EvalResult out;
  out.perplexity = config.k_neighbors == 0
                       ? eval::perplexity(model, data)
                       : eval::perplexity(model, data, db, options, config.prior_policy());
  out.kl_per_example = out.perplexity.kl / static_cast<double>(data.size());

  nn::Rng rng(stream_seed(config, SeedStream::kEval));
  model::GenerateOptions gen{.max_len = config.max_gen_len,
                             .strategy = model::DecodeStrategy::kTopK,
                             .top_k = config.eval_top_k};
  std::vector<TokenSequence> references;
  for (const CorpusPair& p : data) {
    nn::Tape tape = nn::Tape::no_grad();
    model::LayerPosteriors posts = model.encode(tape, p.source);
    mixture::RetrievedMixture mix = mixture::retrieve_mixture(posts, db, options);
    const std::size_t c = mixture::sample_component(mix.weights, rng);
    std::vector<nn::Tensor> z;
    for (const auto& layer : mix.layers) z.push_back(layer.components[c].mean);
    out.generations.push_back(model.generate(z, gen, &rng));
    references.push_back(p.target);
  }

  eval::MetricReport& r = out.report;
  r.ppl = out.perplexity.ppl;
  r.self_bleu = eval::self_bleu(out.generations);
  try {
    r.dist2 = eval::dist_n(out.generations, 2);
  } catch (const InputError&) {
    log::warn("eval: generations contain no bigrams; dist2 reported as 0");
    r.dist2 = 0.0;
  }
  r.au = eval::active_units(model, data);
  r.bleu = eval::corpus_bleu(out.generations, references);
  r.rouge_l = 100.0 * eval::mean_rouge_l(out.generations, references);
  r.validate();
  return out;
}

std::vector<AblationRow> run_ablation(const RunConfig& config, const Corpus& corpus) {
  std::set<std::size_t> ks(config.k_sweep.begin(), config.k_sweep.end());
  ks.insert(0);
  ks.insert(config.k_neighbors);

  Stage1Result stage1 = run_stage1(config, corpus);
  retrieval::RetrievalDatabase db = run_stage2(config, stage1.model, corpus);
  std::vector<AblationRow> rows;
  for (std::size_t k : ks) {
    RunConfig variant = config;
    variant.k_neighbors = k;
    log::info("ablation: stage3 with k=" + std::to_string(k));
    Stage3Result s3 = run_stage3(variant, stage1.model, db, corpus);
    AblationRow row;
    row.k = k;
    row.name = k == 0 ? "base (k=0)"
                      : (k == config.k_neighbors ? "full (k=" : "k=") + std::to_string(k) +
                            (k == config.k_neighbors ? ")" : "");
    row.result = run_eval(variant, s3.model, s3.db, corpus);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(14) << "variant" << std::right << std::setw(11) << "ppl"
      << std::setw(11) << "self_bleu" << std::setw(9) << "dist2" << std::setw(6) << "au"
      << std::setw(9) << "bleu" << std::setw(9) << "rouge_l" << "\n";
  out << std::fixed;
  for (const AblationRow& row : rows) {
    const eval::MetricReport& r = row.result.report;
    out << std::left << std::setw(14) << row.name << std::right << std::setprecision(4)
        << std::setw(11) << r.ppl << std::setprecision(2) << std::setw(11) << r.self_bleu
        << std::setprecision(4) << std::setw(9) << r.dist2 << std::setw(6) << r.au
        << std::setprecision(2) << std::setw(9) << r.bleu.value_or(0.0) << std::setw(9)
        << r.rouge_l.value_or(0.0) << "\n";
  }
  return out.str();
}

nlohmann::json ablation_json(const std::vector<AblationRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const AblationRow& row : rows) {
    j.push_back({{"variant", row.name}, {"k", row.k}, {"metrics", row.result.report.to_json()}});
  }
  return j;
}

void save_run_checkpoint(const std::filesystem::path& path, const model::VaeModel& model,
                         const Vocabulary& vocab, const RunConfig& config,
                         const std::string& stage) {
  nlohmann::json header;
  header["stage"] = stage;
  header["vocab"] = vocab.to_json();
  header["run_config"] = config;
  model::save_checkpoint(path, model, header);
}

RunCheckpoint load_run_checkpoint(const std::filesystem::path& path) {
  model::LoadedCheckpoint loaded = model::load_checkpoint(path);
  if (!loaded.header.contains("vocab")) throw InputError("checkpoint has no vocabulary");
  Vocabulary vocab = Vocabulary::from_json(loaded.header["vocab"]);
  if (vocab.size() != loaded.model.config().vocab_size) {
    throw InputError("checkpoint vocabulary size disagrees with the model");
  }
  return {std::move(loaded.model), std::move(vocab), loaded.header.value("stage", "")};
}

}  // namespace regavae::harness
