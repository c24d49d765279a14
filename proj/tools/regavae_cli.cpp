// Command-line front end for the three-stage pipeline.
//
// Exit codes: 0 success, 1 input or configuration error, 2 numeric divergence.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "regavae/error.hpp"
#include "regavae/harness/config.hpp"
#include "regavae/harness/corpus.hpp"
#include "regavae/harness/pipeline.hpp"
#include "regavae/log.hpp"
#include "regavae/model/vae.hpp"
#include "regavae/retrieval/database.hpp"

namespace fs = std::filesystem;
using namespace regavae;
using namespace regavae::harness;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
  bool quiet = false;
  bool verbose = false;
};

struct PathOptions {
  std::string checkpoint;
  std::string database;
};

fs::path checkpoint_dir(const RunConfig& c, const GlobalOptions& g) {
  return c.checkpoints.empty() ? fs::path(g.out) : fs::path(c.checkpoints);
}

fs::path database_path(const RunConfig& c, const GlobalOptions& g) {
  return c.database_dump.empty() ? fs::path(g.out) / "database.bin" : fs::path(c.database_dump);
}

fs::path metrics_path(const RunConfig& c, const GlobalOptions& g) {
  return c.metrics_out.empty() ? fs::path(g.out) / "metrics.json" : fs::path(c.metrics_out);
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw InputError("cannot write '" + path.string() + "'");
}

// Resolves the config (file, then --seed) and echoes it into the out dir.
RunConfig resolve(const GlobalOptions& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  c.validate();
  fs::create_directories(g.out);
  nlohmann::json j = c;
  write_text(fs::path(g.out) / "resolved_config.json", j.dump(2) + "\n");
  return c;
}

// Retokenizes the configured corpus with the checkpoint's vocabulary.
Corpus corpus_for(const RunConfig& c, const Vocabulary& vocab) {
  Corpus corpus = load_corpus(c);
  corpus.vocab = vocab;
  corpus.train = tokenize(corpus.train_text, vocab);
  corpus.heldout = tokenize(corpus.heldout_text, vocab);
  return corpus;
}

nlohmann::json log_json(const TrainLog& log) {
  return {{"loss", log.loss}, {"recon", log.recon}, {"kl", log.kl}, {"beta", log.beta},
          {"refreshes", log.refreshes}};
}

std::string pick(const std::string& flag, const fs::path& fallback) {
  return flag.empty() ? fallback.string() : flag;
}

void cmd_train_vae(const GlobalOptions& g) {
  RunConfig c = resolve(g);
  Corpus corpus = load_corpus(c);
  log::info("train-vae: " + std::to_string(corpus.train.size()) + " training pairs, vocabulary " +
            std::to_string(corpus.vocab.size()));
  Stage1Result s1 = run_stage1(c, corpus);
  const fs::path out = checkpoint_dir(c, g) / "stage1.ckpt";
  fs::create_directories(out.parent_path());
  save_run_checkpoint(out, s1.model, corpus.vocab, c, "stage1");
  write_text(fs::path(g.out) / "stage1_log.json", log_json(s1.log).dump() + "\n");
  std::cout << "wrote " << out.string() << "\n";
}

void cmd_build_db(const GlobalOptions& g, const PathOptions& p) {
  RunConfig c = resolve(g);
  RunCheckpoint ckpt = load_run_checkpoint(pick(p.checkpoint, checkpoint_dir(c, g) / "stage1.ckpt"));
  Corpus corpus = corpus_for(c, ckpt.vocab);
  retrieval::RetrievalDatabase db = run_stage2(c, ckpt.model, corpus);
  const fs::path out = pick(p.database, database_path(c, g));
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  retrieval::save_database(out, db);
  std::cout << "wrote " << out.string() << " (" << db.size() << " entries)\n";
}

void cmd_train_regavae(const GlobalOptions& g, const PathOptions& p) {
  RunConfig c = resolve(g);
  RunCheckpoint ckpt = load_run_checkpoint(pick(p.checkpoint, checkpoint_dir(c, g) / "stage1.ckpt"));
  Corpus corpus = corpus_for(c, ckpt.vocab);
  retrieval::RetrievalDatabase db;
  if (c.k_neighbors > 0) db = retrieval::load_database(pick(p.database, database_path(c, g)));
  Stage3Result s3 = run_stage3(c, ckpt.model, std::move(db), corpus);
  const fs::path out = checkpoint_dir(c, g) / "stage3.ckpt";
  fs::create_directories(out.parent_path());
  save_run_checkpoint(out, s3.model, corpus.vocab, c, "stage3");
  if (c.k_neighbors > 0) {
    retrieval::save_database(fs::path(g.out) / "database_stage3.bin", s3.db);
  }
  write_text(fs::path(g.out) / "stage3_log.json", log_json(s3.log).dump() + "\n");
  std::cout << "wrote " << out.string() << "\n";
}

// Database written by train-regavae if present, else the stage-2 dump.
retrieval::RetrievalDatabase eval_database(const RunConfig& c, const GlobalOptions& g,
                                           const PathOptions& p) {
  if (c.k_neighbors == 0) return {};
  if (!p.database.empty()) return retrieval::load_database(p.database);
  const fs::path refreshed = fs::path(g.out) / "database_stage3.bin";
  return retrieval::load_database(fs::exists(refreshed) ? refreshed : database_path(c, g));
}

void cmd_eval(const GlobalOptions& g, const PathOptions& p) {
  RunConfig c = resolve(g);
  RunCheckpoint ckpt = load_run_checkpoint(pick(p.checkpoint, checkpoint_dir(c, g) / "stage3.ckpt"));
  Corpus corpus = corpus_for(c, ckpt.vocab);
  retrieval::RetrievalDatabase db = eval_database(c, g, p);
  EvalResult r = run_eval(c, ckpt.model, db, corpus);
  const fs::path out = metrics_path(c, g);
  write_text(out, r.report.to_json().dump(2) + "\n");
  fs::path text = out;
  write_text(text.replace_extension(".txt"), r.report.to_text());
  std::cout << r.report.to_text();
}

void cmd_generate(const GlobalOptions& g, const PathOptions& p, const std::string& source,
                  std::size_t count, bool greedy) {
  RunConfig c = resolve(g);
  RunCheckpoint ckpt = load_run_checkpoint(pick(p.checkpoint, checkpoint_dir(c, g) / "stage3.ckpt"));
  retrieval::RetrievalDatabase db = eval_database(c, g, p);
  std::vector<std::string> sources;
  if (!source.empty()) {
    sources.push_back(source);
  } else {
    Corpus corpus = corpus_for(c, ckpt.vocab);
    for (std::size_t i = 0; i < std::min(count, corpus.heldout_text.size()); ++i) {
      sources.push_back(corpus.heldout_text[i].source);
    }
  }
  nn::Rng rng(stream_seed(c, SeedStream::kEval));
  model::GenerateOptions gen{.max_len = c.max_gen_len,
                             .strategy = greedy ? model::DecodeStrategy::kGreedy
                                                : model::DecodeStrategy::kTopK,
                             .top_k = c.eval_top_k};
  mixture::RetrievalOptions options{.k = c.k_neighbors, .self_logit = c.self_logit};
  for (const std::string& s : sources) {
    TokenSequence x = ckpt.vocab.encode(s);
    if (x.empty()) throw InputError("generate: empty source text");
    nn::Tape tape = nn::Tape::no_grad();
    mixture::RetrievedMixture mix = mixture::retrieve_mixture(ckpt.model.encode(tape, x), db, options);
    const std::size_t comp = mixture::sample_component(mix.weights, rng);
    std::vector<nn::Tensor> z;
    for (const auto& layer : mix.layers) z.push_back(layer.components[comp].mean);
    std::cout << s << "\t" << ckpt.vocab.decode(ckpt.model.generate(z, gen, &rng)) << "\n";
  }
}

void cmd_ablate(const GlobalOptions& g) {
  RunConfig c = resolve(g);
  Corpus corpus = load_corpus(c);
  std::vector<AblationRow> rows = run_ablation(c, corpus);
  const std::string table = ablation_table(rows);
  write_text(fs::path(g.out) / "ablation.txt", table);
  write_text(fs::path(g.out) / "ablation.json", ablation_json(rows).dump(2) + "\n");
  std::cout << table;
}

void cmd_make_corpus(const GlobalOptions& g, const CopyCorpusOptions& o, const std::string& path) {
  const fs::path out = path.empty() ? fs::path(g.out) / "copy_corpus.jsonl" : fs::path(path);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  const std::vector<TextPair> records = make_copy_corpus(o);
  write_jsonl(out, records);
  std::cout << "wrote " << out.string() << " (" << records.size() << " records)\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented latent-variable language model"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config_path, "Run config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the config seed");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_flag("--quiet", g.quiet, "Only warnings and errors");
  app.add_flag("--verbose", g.verbose, "Debug logging");

  PathOptions paths;
  auto add_paths = [&](CLI::App* sub, bool database) {
    sub->add_option("--checkpoint", paths.checkpoint, "Checkpoint to load");
    if (database) sub->add_option("--database", paths.database, "Retrieval database dump");
  };

  auto* train_vae = app.add_subcommand("train-vae", "Stage 1: train the plain VAE");
  auto* build_db = app.add_subcommand("build-db", "Stage 2: encode the retrieval database");
  add_paths(build_db, true);
  auto* train_rega = app.add_subcommand("train-regavae", "Stage 3: train with retrieval");
  add_paths(train_rega, true);
  auto* generate = app.add_subcommand("generate", "Sample continuations");
  add_paths(generate, true);
  std::string source;
  std::size_t count = 5;
  bool greedy = false;
  generate->add_option("--source", source, "Source text; default: held-out sources");
  generate->add_option("--count", count, "Number of held-out sources")->capture_default_str();
  generate->add_flag("--greedy", greedy, "Greedy decoding instead of top-k sampling");
  auto* evaluate = app.add_subcommand("eval", "Held-out metrics");
  add_paths(evaluate, true);
  auto* ablate = app.add_subcommand("ablate", "Retrieval ablation and neighbour sweep");
  auto* make_corpus = app.add_subcommand("make-corpus", "Write the synthetic copy corpus");
  CopyCorpusOptions copy;
  std::string corpus_path;
  make_corpus->add_option("--path", corpus_path, "Output file; default <out>/copy_corpus.jsonl");
  make_corpus->add_option("--clusters", copy.clusters)->capture_default_str();
  make_corpus->add_option("--members", copy.members)->capture_default_str();
  make_corpus->add_option("--corpus-seed", copy.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  log::set_level(g.quiet ? log::Level::kWarn : g.verbose ? log::Level::kDebug : log::Level::kInfo);

  try {
    if (*train_vae) cmd_train_vae(g);
    if (*build_db) cmd_build_db(g, paths);
    if (*train_rega) cmd_train_regavae(g, paths);
    if (*generate) cmd_generate(g, paths, source, count, greedy);
    if (*evaluate) cmd_eval(g, paths);
    if (*ablate) cmd_ablate(g);
    if (*make_corpus) cmd_make_corpus(g, copy, corpus_path);
  } catch (const NumericError& e) {
    std::cerr << "error: numeric divergence: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
