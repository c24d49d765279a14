#include "regavae/retrieval/database.hpp"

#include <algorithm>
#include <cmath>
#include <string_view>
#include <unordered_set>

#include "regavae/binary_io.hpp"
#include "regavae/error.hpp"
#include "regavae/log.hpp"

namespace regavae::retrieval {
namespace {

constexpr std::string_view kMagic{"RGVAEDB\0", 8};

double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Strict ordering: higher score first, then lower id.
bool ranks_before(const Neighbor& a, const Neighbor& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.entry->id < b.entry->id;
}

}  // namespace

RetrievalDatabase::RetrievalDatabase(std::vector<RetrievalEntry> entries,
                                     std::uint64_t snapshot_step,
                                     std::uint64_t refresh_interval)
    : entries_(std::move(entries)),
      snapshot_step_(snapshot_step),
      refresh_interval_(refresh_interval) {
  if (refresh_interval_ == 0) throw ConfigError("refresh_interval must be positive");
  std::unordered_set<std::uint64_t> ids;
  for (const RetrievalEntry& e : entries_) {
    if (!ids.insert(e.id).second) {
      throw ContractError("duplicate retrieval entry id " + std::to_string(e.id));
    }
    if (e.keys.empty()) throw ContractError("retrieval entry without keys");
    if (d_z_ == 0) {
      d_z_ = e.key().dim();
      num_layers_ = e.keys.size();
    }
    if (e.keys.size() != num_layers_) {
      throw ContractError("retrieval entries disagree on layer count");
    }
    for (const auto& k : e.keys) {
      k.validate();
      if (k.dim() != d_z_) throw ContractError("retrieval entries disagree on d_z");
    }
    key_norms_.push_back(norm(e.key().mean.data()));
  }
}

TokenSequence key_tokens(const CorpusPair& pair) {
  TokenSequence out;
  out.reserve(pair.source.size() + pair.target.size() + 1);
  out.insert(out.end(), pair.source.begin(), pair.source.end());
  out.push_back(special::kSep);
  out.insert(out.end(), pair.target.begin(), pair.target.end());
  return out;
}

double similarity(std::span<const double> query, std::span<const double> key) {
  if (query.size() != key.size()) {
    throw DimensionError("similarity: query length " + std::to_string(query.size()) +
                         " vs key length " + std::to_string(key.size()));
  }
  const double nq = norm(query);
  const double nk = norm(key);
  if (nq == 0.0 || nk == 0.0) throw RetrievalError("similarity: zero-norm vector");
  return std::clamp(dot(query, key) / (nq * nk), -1.0, 1.0);
}

double similarity(std::span<const double> query, const model::LatentGaussian& key) {
  return similarity(query, key.mean.data());
}

std::vector<Neighbor> top_k(std::span<const double> query, const RetrievalDatabase& db,
                            std::size_t k, std::optional<std::uint64_t> exclude_id) {
  if (db.empty()) throw RetrievalError("top_k: empty retrieval database");
  if (query.size() != db.d_z()) {
    throw DimensionError("top_k: query length " + std::to_string(query.size()) +
                         " vs database d_z " + std::to_string(db.d_z()));
  }
  const double nq = norm(query);
  if (nq == 0.0) throw RetrievalError("top_k: zero-norm query");

  std::vector<Neighbor> scored;
  scored.reserve(db.size());
  const auto& entries = db.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (exclude_id && entries[i].id == *exclude_id) continue;
    const double nk = db.key_norm(i);
    if (nk == 0.0) throw RetrievalError("top_k: zero-norm key " + std::to_string(entries[i].id));
    const double s = dot(query, entries[i].key().mean.data()) / (nq * nk);
    scored.push_back({&entries[i], std::clamp(s, -1.0, 1.0)});
  }
  if (k > scored.size()) {
    log::warn("top_k: k=" + std::to_string(k) + " exceeds " + std::to_string(scored.size()) +
              " candidates; clamped");
    k = scored.size();
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(k),
                    scored.end(), ranks_before);
  scored.resize(k);
  return scored;
}

namespace {

std::vector<RetrievalEntry> encode_entries(std::vector<RetrievalEntry> entries,
                                           const model::VaeModel& encoder) {
  for (RetrievalEntry& e : entries) {
    nn::Tape tape = nn::Tape::no_grad();
    const TokenSequence text = key_tokens({e.source, e.target});
    model::LayerPosteriors posts = encoder.encode(tape, text);
    e.keys.clear();
    for (const auto& g : posts) e.keys.push_back(g.frozen());
  }
  return entries;
}

}  // namespace

RetrievalDatabase build_database(std::span<const CorpusPair> corpus,
                                 const model::VaeModel& encoder, std::uint64_t snapshot_step,
                                 std::uint64_t refresh_interval) {
  if (corpus.empty()) throw ConfigError("build_database: empty corpus");
  std::vector<RetrievalEntry> entries(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    entries[i].id = i;
    entries[i].source = corpus[i].source;
    entries[i].target = corpus[i].target;
  }
  return RetrievalDatabase(encode_entries(std::move(entries), encoder), snapshot_step,
                           refresh_interval);
}

std::optional<RetrievalDatabase> maybe_refresh(const RetrievalDatabase& db,
                                               std::uint64_t current_step,
                                               const model::VaeModel& encoder) {
  if (current_step < db.snapshot_step()) {
    throw ContractError("maybe_refresh: step " + std::to_string(current_step) +
                        " precedes snapshot " + std::to_string(db.snapshot_step()));
  }
  if (current_step - db.snapshot_step() < db.refresh_interval()) return std::nullopt;
  return RetrievalDatabase(encode_entries(db.entries(), encoder), current_step,
                           db.refresh_interval());
}

namespace {

void write_tokens(io::BinaryWriter& w, const TokenSequence& tokens) {
  w.u32(static_cast<std::uint32_t>(tokens.size()));
  for (int t : tokens) w.i32(t);
}

TokenSequence read_tokens(io::BinaryReader& r) {
  TokenSequence tokens(r.u32());
  for (int& t : tokens) t = r.i32();
  return tokens;
}

}  // namespace

void save_database(const std::filesystem::path& path, const RetrievalDatabase& db) {
  if (db.empty()) throw ContractError("save_database: empty database");
  io::BinaryWriter w(path);
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kDatabaseFormatVersion);
  w.u32(static_cast<std::uint32_t>(db.d_z()));
  w.u32(static_cast<std::uint32_t>(db.num_layers()));
  w.u64(db.size());
  w.u64(db.snapshot_step());
  w.u64(db.refresh_interval());
  for (const RetrievalEntry& e : db.entries()) {
    w.u64(e.id);
    for (const auto& k : e.keys) {
      w.f64s(k.mean.data());
      w.f64s(k.log_var.data());
    }
    write_tokens(w, e.source);
    write_tokens(w, e.target);
  }
  w.finish();
}

RetrievalDatabase load_database(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  if (r.fixed(kMagic.size()) != kMagic) {
    throw InputError("'" + path.string() + "' is not a retrieval database dump (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kDatabaseFormatVersion) {
    throw InputError("unsupported database format_version " + std::to_string(version));
  }
  const std::size_t d_z = r.u32();
  const std::size_t layers = r.u32();
  const std::uint64_t count = r.u64();
  const std::uint64_t snapshot = r.u64();
  const std::uint64_t interval = r.u64();
  if (d_z == 0 || layers == 0) throw InputError("database dump has zero d_z or layer count");
  std::vector<RetrievalEntry> entries;
  entries.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    RetrievalEntry e;
    e.id = r.u64();
    for (std::size_t l = 0; l < layers; ++l) {
      auto mean = r.f64s(d_z);
      auto log_var = r.f64s(d_z);
      e.keys.push_back({nn::Tensor::from({d_z}, std::move(mean)),
                        nn::Tensor::from({d_z}, std::move(log_var))});
    }
    e.source = read_tokens(r);
    e.target = read_tokens(r);
    entries.push_back(std::move(e));
  }
  if (!r.at_end()) throw InputError("trailing bytes after database entries");
  try {
    return RetrievalDatabase(std::move(entries), snapshot, interval);
  } catch (const Error& e) {
    throw InputError(std::string("corrupt database dump: ") + e.what());
  }
}

}  // namespace regavae::retrieval
