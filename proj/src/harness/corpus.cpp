#include "regavae/harness/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "regavae/error.hpp"
#include "regavae/numerics/rng.hpp"

namespace regavae::harness {
namespace {

const char* const kSpecialWords[special::kCount] = {"<pad>", "<unk>", "<bos>", "<eos>", "<sep>"};

}  // namespace

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

Vocabulary::Vocabulary() {
  for (const char* w : kSpecialWords) add(w);
}

void Vocabulary::add(const std::string& word) {
  ids_.emplace(word, static_cast<int>(words_.size()));
  words_.push_back(word);
}

Vocabulary Vocabulary::build(std::span<const TextPair> pairs, std::size_t min_freq) {
  std::map<std::string, std::size_t> freq;
  for (const TextPair& p : pairs) {
    for (const auto& w : split_words(p.source)) ++freq[w];
    for (const auto& w : split_words(p.target)) ++freq[w];
  }
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (const auto& [w, c] : freq) {
    if (c >= min_freq && std::find(std::begin(kSpecialWords), std::end(kSpecialWords), w) ==
                             std::end(kSpecialWords)) {
      ranked.emplace_back(w, c);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [w, c] : ranked) v.add(w);
  return v;
}

int Vocabulary::id(const std::string& word) const {
  auto it = ids_.find(word);
  return it == ids_.end() ? special::kUnk : it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= words_.size()) {
    throw ContractError("vocabulary id " + std::to_string(id) + " out of range");
  }
  return words_[static_cast<std::size_t>(id)];
}

TokenSequence Vocabulary::encode(const std::string& text) const {
  TokenSequence out;
  for (const auto& w : split_words(text)) out.push_back(id(w));
  return out;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  std::string out;
  for (int t : ids) {
    if (t < special::kCount && t != special::kUnk) continue;
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

nlohmann::json Vocabulary::to_json() const { return words_; }

Vocabulary Vocabulary::from_json(const nlohmann::json& j) {
  std::vector<std::string> words;
  try {
    words = j.get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("vocabulary: ") + e.what());
  }
  if (words.size() < special::kCount ||
      !std::equal(std::begin(kSpecialWords), std::end(kSpecialWords), words.begin())) {
    throw InputError("vocabulary does not start with the special tokens");
  }
  Vocabulary v;
  for (std::size_t i = special::kCount; i < words.size(); ++i) v.add(words[i]);
  if (v.ids_.size() != v.words_.size()) throw InputError("vocabulary has duplicate words");
  return v;
}

std::vector<TextPair> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus '" + path.string() + "'");
  std::vector<TextPair> pairs;
  std::string line;
  for (std::size_t line_no = 1; std::getline(in, line); ++line_no) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw InputError(where + ": line " + std::to_string(line_no) + " is not valid JSON");
    }
    TextPair p;
    for (auto [field, dest] : {std::pair{"source", &p.source}, std::pair{"target", &p.target}}) {
      if (!j.is_object() || !j.contains(field) || !j[field].is_string()) {
        throw InputError(where + ": line " + std::to_string(line_no) + " lacks string field \"" +
                         field + "\"");
      }
      *dest = j[field].get<std::string>();
      if (split_words(*dest).empty()) {
        throw InputError(where + ": line " + std::to_string(line_no) + " has an empty \"" +
                         field + "\"");
      }
    }
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw InputError("corpus '" + path.string() + "' has no records");
  return pairs;
}

void write_jsonl(const std::filesystem::path& path, std::span<const TextPair> pairs) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  for (const TextPair& p : pairs) {
    out << nlohmann::json{{"source", p.source}, {"target", p.target}}.dump() << "\n";
  }
  if (!out) throw InputError("write to '" + path.string() + "' failed");
}

std::vector<CorpusPair> tokenize(std::span<const TextPair> records, const Vocabulary& vocab) {
  std::vector<CorpusPair> out;
  out.reserve(records.size());
  for (const TextPair& r : records) out.push_back({vocab.encode(r.source), vocab.encode(r.target)});
  return out;
}

Corpus split_and_tokenize(std::span<const TextPair> records, double heldout_fraction,
                          std::size_t min_freq) {
  if (!(heldout_fraction >= 0.0 && heldout_fraction < 1.0)) {
    throw ConfigError("heldout_fraction must lie in [0, 1)");
  }
  Corpus c;
  const std::size_t m =
      heldout_fraction == 0.0 ? 0 : std::max<std::size_t>(2, std::llround(1.0 / heldout_fraction));
  for (std::size_t i = 0; i < records.size(); ++i) {
    (m != 0 && i % m == m - 1 ? c.heldout_text : c.train_text).push_back(records[i]);
  }
  if (c.train_text.empty()) throw InputError("corpus has no training records");
  c.vocab = Vocabulary::build(c.train_text, min_freq);
  c.train = tokenize(c.train_text, c.vocab);
  c.heldout = tokenize(c.heldout_text, c.vocab);
  return c;
}

std::vector<TextPair> make_copy_corpus(const CopyCorpusOptions& o) {
  if (o.clusters == 0 || o.members == 0 || o.source_len == 0 || o.target_len == 0 ||
      o.source_vocab == 0 || o.target_vocab == 0) {
    throw ConfigError("copy corpus sizes must be positive");
  }
  nn::Rng rng(o.seed);
  auto word = [](char prefix, std::size_t i) { return std::string(1, prefix) + std::to_string(i); };
  auto join = [](const std::vector<std::string>& ws) {
    std::string s;
    for (const auto& w : ws) s += (s.empty() ? "" : " ") + w;
    return s;
  };

  std::vector<std::vector<TextPair>> clusters(o.clusters);
  for (auto& cluster : clusters) {
    std::vector<std::size_t> src(o.source_len), tgt(o.target_len);
    for (auto& t : src) t = rng.below(o.source_vocab);
    for (auto& t : tgt) t = rng.below(o.target_vocab);
    std::sort(tgt.begin(), tgt.end());
    for (std::size_t m = 0; m < o.members; ++m) {
      std::vector<std::string> s, t;
      for (std::size_t v : src) {
        s.push_back(word('s', rng.uniform() < o.source_noise ? rng.below(o.source_vocab) : v));
      }
      for (std::size_t v : tgt) {
        t.push_back(word('t', rng.uniform() < o.target_noise ? rng.below(o.target_vocab) : v));
      }
      cluster.push_back({join(s), join(t)});
    }
  }
  std::vector<TextPair> out;
  for (const auto& cluster : clusters) out.insert(out.end(), cluster.begin(), cluster.end());
  for (std::size_t i = out.size(); i > 1; --i) std::swap(out[i - 1], out[rng.below(i)]);
  return out;
}

}  // namespace regavae::harness
