#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "regavae/model/latent.hpp"
#include "regavae/model/tokens.hpp"
#include "regavae/model/vae.hpp"

namespace regavae::retrieval {

inline constexpr std::size_t kDefaultRefreshInterval = 500;

// One corpus item. `keys` holds the frozen posterior of source <sep> target
// for every decoder layer; keys[0] is the scoring key.
struct RetrievalEntry {
  std::uint64_t id = 0;
  model::LayerPosteriors keys;
  TokenSequence source;
  TokenSequence target;

  const model::LatentGaussian& key() const { return keys.front(); }
};

// Immutable snapshot of encoded keys. All keys come from one encoder version,
// recorded as snapshot_step.
class RetrievalDatabase {
 public:
  RetrievalDatabase() = default;
  // Throws ContractError on duplicate ids or inconsistent key shapes.
  RetrievalDatabase(std::vector<RetrievalEntry> entries, std::uint64_t snapshot_step,
                    std::uint64_t refresh_interval = kDefaultRefreshInterval);

  const std::vector<RetrievalEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  std::size_t d_z() const { return d_z_; }
  std::size_t num_layers() const { return num_layers_; }
  std::uint64_t snapshot_step() const { return snapshot_step_; }
  std::uint64_t refresh_interval() const { return refresh_interval_; }
  // Euclidean norm of entry i's scoring-key mean.
  double key_norm(std::size_t i) const { return key_norms_[i]; }

 private:
  std::vector<RetrievalEntry> entries_;
  std::vector<double> key_norms_;
  std::size_t d_z_ = 0;
  std::size_t num_layers_ = 0;
  std::uint64_t snapshot_step_ = 0;
  std::uint64_t refresh_interval_ = kDefaultRefreshInterval;
};

struct Neighbor {
  const RetrievalEntry* entry = nullptr;
  double score = 0.0;
};

// source <sep> target, the text a key encodes.
TokenSequence key_tokens(const CorpusPair& pair);

// Cosine similarity in [-1, 1]. Throws RetrievalError on a zero-norm vector
// and DimensionError on a length mismatch.
double similarity(std::span<const double> query, std::span<const double> key);
double similarity(std::span<const double> query, const model::LatentGaussian& key);

// Exact top-k by cosine over key means, descending, ties to the lower id.
// k above the number of candidates is clamped with a warning; k = 0 returns
// nothing. Throws RetrievalError on an empty database.
std::vector<Neighbor> top_k(std::span<const double> query, const RetrievalDatabase& db,
                            std::size_t k, std::optional<std::uint64_t> exclude_id = {});

// Entry i gets id i. Throws ConfigError on an empty corpus.
RetrievalDatabase build_database(std::span<const CorpusPair> corpus,
                                 const model::VaeModel& encoder,
                                 std::uint64_t snapshot_step = 0,
                                 std::uint64_t refresh_interval = kDefaultRefreshInterval);

// Re-encodes every entry with `encoder` once refresh_interval steps have
// passed since the snapshot; otherwise returns nullopt and `db` stays current.
std::optional<RetrievalDatabase> maybe_refresh(const RetrievalDatabase& db,
                                               std::uint64_t current_step,
                                               const model::VaeModel& encoder);

// Dump layout (little-endian):
//   "RGVAEDB\0" u32 version=1
//   u32 d_z, u32 num_layers, u64 count, u64 snapshot_step, u64 refresh_interval
//   per entry: u64 id;
//              per layer: f64[d_z] mean, f64[d_z] log_var;
//              u32 n, i32[n] source; u32 m, i32[m] target
inline constexpr std::uint32_t kDatabaseFormatVersion = 1;
void save_database(const std::filesystem::path& path, const RetrievalDatabase& db);
RetrievalDatabase load_database(const std::filesystem::path& path);

}  // namespace regavae::retrieval
