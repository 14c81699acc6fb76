#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ptrm/model.hpp"

namespace ptrm {

class Trainer;

/// Unreadable, inconsistent or truncated checkpoint.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointFormat = 1;
inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kParamsBlob = "params.bin";
inline constexpr const char* kTrainerBlob = "trainer.bin";

struct CheckpointInfo {
  std::int64_t step = 0;
  nlohmann::json metrics = nlohmann::json::object();
  nlohmann::json config = nlohmann::json::object();  // effective run config, echoed
};

/// Writes `dir/manifest.json` and `dir/params.bin` (little-endian float32,
/// tensors in params.named() order). With a trainer, its resumable state is
/// written alongside as `dir/trainer.bin`.
void save_checkpoint(const std::filesystem::path& dir, const ModelParams<float>& params,
                     const CheckpointInfo& info = {}, const Trainer* trainer = nullptr);

struct LoadedCheckpoint {
  ModelParams<float> params;
  nlohmann::json manifest;
  bool has_trainer_state() const { return manifest.contains("trainer"); }
};

/// Reads and validates a checkpoint. Unknown manifest fields are ignored;
/// missing tensors, shape disagreements and blob size mismatches throw
/// CheckpointError.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// Restores the trainer state saved with a checkpoint.
void restore_trainer(Trainer& trainer, const std::filesystem::path& dir, const nlohmann::json& manifest);

/// Raw little-endian float32 helpers.
void write_f32(const std::filesystem::path& path, std::span<const float> values);
std::vector<float> read_f32(const std::filesystem::path& path);

}  // namespace ptrm
