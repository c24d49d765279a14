#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "regavae/model/tokens.hpp"

namespace regavae::harness {

// Untokenized record of a JSON-lines corpus.
struct TextPair {
  std::string source;
  std::string target;
};

std::vector<std::string> split_words(const std::string& text);

// Word-level vocabulary. Ids 0..4 are <pad> <unk> <bos> <eos> <sep>; the
// rest are ordered by descending frequency, then by the word itself.
class Vocabulary {
 public:
  Vocabulary();
  // Words seen fewer than `min_freq` times map to <unk>.
  static Vocabulary build(std::span<const TextPair> pairs, std::size_t min_freq = 1);

  std::size_t size() const { return words_.size(); }
  int id(const std::string& word) const;
  const std::string& word(int id) const;
  TokenSequence encode(const std::string& text) const;
  // Special tokens are skipped.
  std::string decode(std::span<const int> ids) const;

  const std::vector<std::string>& words() const { return words_; }
  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j);

 private:
  void add(const std::string& word);

  std::vector<std::string> words_;
  std::unordered_map<std::string, int> ids_;
};

// Reads {"source": ..., "target": ...} records, one per line; blank lines are
// skipped. Errors name the 1-based line number. Throws InputError on a
// missing file, malformed record, or a file with no records.
std::vector<TextPair> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const TextPair> pairs);

struct Corpus {
  Vocabulary vocab;
  std::vector<CorpusPair> train;
  std::vector<CorpusPair> heldout;
  std::vector<TextPair> train_text;
  std::vector<TextPair> heldout_text;
};

// Every m-th record (m = round(1 / heldout_fraction)) goes to the held-out
// split; the vocabulary is built from the training split only. A fraction of
// 0 keeps everything for training.
Corpus split_and_tokenize(std::span<const TextPair> records, double heldout_fraction,
                          std::size_t min_freq);
// Tokenizes records with an existing vocabulary.
std::vector<CorpusPair> tokenize(std::span<const TextPair> records, const Vocabulary& vocab);

struct CopyCorpusOptions {
  std::size_t clusters = 60;
  std::size_t members = 5;
  std::size_t source_len = 8;
  std::size_t target_len = 6;
  std::size_t source_vocab = 40;
  std::size_t target_vocab = 40;
  double source_noise = 0.25;
  double target_noise = 0.1;
  std::uint64_t seed = 7;
};

// Clusters of near-duplicate records. Members of a cluster share a source
// template and a target template (sorted target words); each token is
// replaced by a random word with the given noise probability. Records come
// out in a seeded random order.
std::vector<TextPair> make_copy_corpus(const CopyCorpusOptions& options);

}  // namespace regavae::harness
