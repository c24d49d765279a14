#include "regavae/model/checkpoint.hpp"

#include <algorithm>
#include <string_view>

#include "regavae/binary_io.hpp"
#include "regavae/error.hpp"

namespace regavae::model {
namespace {

constexpr std::string_view kMagic = "RGVAECKP";

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const VaeModel& model,
                     nlohmann::json header) {
  header["model"] = model.config();
  const std::string text = header.dump();

  io::BinaryWriter w(path);
  w.bytes(kMagic.data(), kMagic.size());
  w.u32(kCheckpointFormatVersion);
  w.u64(text.size());
  w.bytes(text.data(), text.size());
  const auto& params = model.named_parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d : t.shape()) w.u64(d);
    w.f64s(t.data());
  }
  w.finish();
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  io::BinaryReader r(path);
  if (r.fixed(kMagic.size()) != kMagic) {
    throw InputError("'" + path.string() + "' is not a checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointFormatVersion) {
    throw InputError("unsupported checkpoint format_version " + std::to_string(version));
  }
  const std::string text = r.fixed(r.u64());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("checkpoint header is not valid JSON: " + std::string(e.what()));
  }
  if (!header.contains("model")) throw InputError("checkpoint header lacks 'model'");

  // Parameter values are overwritten below, so the init seed is irrelevant.
  VaeModel model(header["model"].get<ModelConfig>(), 0);
  auto& params = model.named_parameters();
  const std::uint32_t count = r.u32();
  if (count != params.size()) {
    throw InputError("checkpoint holds " + std::to_string(count) + " parameters, model has " +
                     std::to_string(params.size()));
  }
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    const std::uint32_t rank = r.u32();
    nn::Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    auto it = std::find_if(params.begin(), params.end(),
                           [&](const NamedTensor& p) { return p.first == name; });
    if (it == params.end()) throw InputError("checkpoint parameter '" + name + "' unknown");
    if (it->second.shape() != shape) {
      throw InputError("checkpoint parameter '" + name + "' has shape " +
                       nn::shape_string(shape) + ", expected " +
                       nn::shape_string(it->second.shape()));
    }
    auto values = r.f64s(nn::shape_numel(shape));
    std::copy(values.begin(), values.end(), it->second.mutable_data().begin());
  }
  if (!r.at_end()) throw InputError("trailing bytes after checkpoint parameters");
  return {std::move(model), std::move(header)};
}

}  // namespace regavae::model
