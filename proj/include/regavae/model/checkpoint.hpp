#pragma once

#include <cstdint>
#include <filesystem>

#include <json.hpp>

#include "regavae/model/vae.hpp"

namespace regavae::model {

// Checkpoint byte layout (all integers and floats little-endian):
//
//   char[8]  magic "RGVAECKP"
//   u32      format_version (currently 1)
//   u64      header length H
//   u8[H]    UTF-8 JSON header: {"model": ModelConfig, ...caller fields}
//   u32      parameter count P
//   P times:
//     u32    name length N, then N bytes of name
//     u32    rank R (1 or 2), then R x u64 dims
//     f64    prod(dims) raw values, row-major
//
// Parameters are written in the model's registration order; loading matches
// them by name and requires identical shapes.
inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct LoadedCheckpoint {
  VaeModel model;
  nlohmann::json header;
};

// `header` may carry any extra fields (vocabulary, run config); the "model"
// key is always overwritten with the model's config.
void save_checkpoint(const std::filesystem::path& path, const VaeModel& model,
                     nlohmann::json header = nlohmann::json::object());

// InputError on missing file, bad magic, unsupported version or any
// name/shape mismatch.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace regavae::model
