#include "ptrm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include "ptrm/training.hpp"

namespace ptrm {

namespace fs = std::filesystem;

namespace {

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("checkpoint: malformed manifest " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

}  // namespace

void write_f32(const fs::path& path, std::span<const float> values) {
  std::vector<std::uint32_t> words(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(values[i]));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::vector<float> read_f32(const fs::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path.string());
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % 4 != 0)
    throw CheckpointError("corrupt checkpoint: " + path.string() + " has " + std::to_string(bytes) +
                          " bytes, not a multiple of 4");
  in.seekg(0);
  std::vector<std::uint32_t> words(bytes / 4);
  in.read(reinterpret_cast<char*>(words.data()), static_cast<std::streamsize>(bytes));
  if (!in) throw CheckpointError("corrupt checkpoint: short read from " + path.string());
  std::vector<float> out(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) out[i] = std::bit_cast<float>(to_le(words[i]));
  return out;
}

void save_checkpoint(const fs::path& dir, const ModelParams<float>& params, const CheckpointInfo& info,
                     const Trainer* trainer) {
  fs::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<float> blob;
  for (const auto& [name, tensor] : params.tensors()) {
    tensors.push_back({{"name", name}, {"shape", tensor->shape()}, {"offset", blob.size() * 4}});
    blob.insert(blob.end(), tensor->data().begin(), tensor->data().end());
  }
  nlohmann::json manifest = {{"format_version", kCheckpointFormat},
                             {"model", params.config},
                             {"tensors", tensors},
                             {"blob", kParamsBlob},
                             {"blob_bytes", blob.size() * 4},
                             {"step", info.step},
                             {"metrics", info.metrics},
                             {"config", info.config}};
  write_f32(dir / kParamsBlob, blob);
  if (trainer) {
    const auto state = trainer->state_blob();
    write_f32(dir / kTrainerBlob, state);
    manifest["trainer"] = {{"state", trainer->state_json()},
                           {"blob", kTrainerBlob},
                           {"blob_bytes", state.size() * 4}};
  }
  write_text(dir / kManifestFile, manifest.dump(2) + "\n");
}

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw CheckpointError("checkpoint: " + dir.string() + " is not a directory");
  LoadedCheckpoint out;
  out.manifest = read_json(dir / kManifestFile);
  const auto& m = out.manifest;
  ModelConfig config;
  try {
    const int version = m.at("format_version").get<int>();
    if (version > kCheckpointFormat)
      throw CheckpointError("checkpoint: format version " + std::to_string(version) + " is newer than supported " +
                            std::to_string(kCheckpointFormat));
    config = m.at("model").get<ModelConfig>();
    config.validate();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad manifest: ") + e.what());
  } catch (const ContractViolation& e) {
    throw CheckpointError(std::string("checkpoint: bad model config: ") + e.what());
  }

  struct Entry {
    Shape shape;
    std::size_t offset;
  };
  std::map<std::string, Entry> table;
  try {
    for (const auto& t : m.at("tensors")) {
      const auto name = t.at("name").get<std::string>();
      if (!table.emplace(name, Entry{t.at("shape").get<Shape>(), t.at("offset").get<std::size_t>()}).second)
        throw CheckpointError("checkpoint: tensor '" + name + "' listed twice");
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad tensor table: ") + e.what());
  }

  const std::string blob_name = m.value("blob", std::string(kParamsBlob));
  const auto blob = read_f32(dir / blob_name);
  const std::size_t blob_bytes = blob.size() * 4;
  if (m.contains("blob_bytes") && m["blob_bytes"].get<std::size_t>() != blob_bytes)
    throw CheckpointError("corrupt checkpoint: blob has " + std::to_string(blob_bytes) + " bytes, manifest says " +
                          std::to_string(m["blob_bytes"].get<std::size_t>()));

  out.params = init_params<float>(config, 0);
  std::size_t expected_bytes = 0;
  for (auto& np : out.params.named()) {
    const auto it = table.find(np.name);
    if (it == table.end()) throw CheckpointError("checkpoint: missing required tensor '" + np.name + "'");
    const auto& e = it->second;
    auto& value = np.var->mutable_value();
    if (e.shape != value.shape())
      throw CheckpointError("checkpoint: tensor '" + np.name + "' has shape " + shape_string(e.shape) +
                            ", model config implies " + shape_string(value.shape()));
    if (e.offset % 4 != 0 || e.offset / 4 + value.size() > blob.size())
      throw CheckpointError("corrupt checkpoint: tensor '" + np.name + "' at byte offset " +
                            std::to_string(e.offset) + " runs past the end of a " + std::to_string(blob_bytes) +
                            "-byte blob");
    const auto first = blob.begin() + static_cast<std::ptrdiff_t>(e.offset / 4);
    std::copy(first, first + static_cast<std::ptrdiff_t>(value.size()), value.data().begin());
    if (!value.all_finite()) throw CheckpointError("checkpoint: tensor '" + np.name + "' holds non-finite values");
    expected_bytes += value.size() * 4;
  }
  // Byte ranges must tile the blob exactly: no overlaps, gaps or leftovers.
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (const auto& np : out.params.named()) {
    const auto& e = table.at(np.name);
    ranges.emplace_back(e.offset, e.offset + np.var->value().size() * 4);
  }
  std::sort(ranges.begin(), ranges.end());
  std::size_t cursor = 0;
  for (const auto& [lo, hi] : ranges) {
    if (lo != cursor)
      throw CheckpointError("corrupt checkpoint: offset table has a gap or overlap at byte " + std::to_string(lo));
    cursor = hi;
  }
  if (blob_bytes != expected_bytes)
    throw CheckpointError("corrupt checkpoint: blob has " + std::to_string(blob_bytes) + " bytes, tensors need " +
                          std::to_string(expected_bytes));
  return out;
}

void restore_trainer(Trainer& trainer, const fs::path& dir, const nlohmann::json& manifest) {
  if (!manifest.contains("trainer")) throw CheckpointError("checkpoint: no trainer state to resume from");
  const auto& t = manifest["trainer"];
  const auto blob = read_f32(dir / t.value("blob", std::string(kTrainerBlob)));
  if (t.contains("blob_bytes") && t["blob_bytes"].get<std::size_t>() != blob.size() * 4)
    throw CheckpointError("corrupt checkpoint: trainer blob size does not match the manifest");
  try {
    trainer.restore_state(t.at("state"), blob);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint: bad trainer state: ") + e.what());
  }
}

}  // namespace ptrm
