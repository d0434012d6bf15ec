#pragma once

#include <string>

#include "nlohmann/json.hpp"
#include "sspext/model.hpp"

namespace sspext {

// Binary checkpoint layout (all integers little-endian):
//   magic "SSPEXT01"
//   u32 metadata length, metadata JSON (UTF-8)
//   u32 tensor count
//   per tensor: u32 name length, name, u32 rank, u32 dims[rank],
//               f32 data (row-major)
inline constexpr char kCheckpointMagic[8] = {'S', 'S', 'P', 'E', 'X', 'T', '0', '1'};

struct Checkpoint {
  nlohmann::json metadata;
  ModelParameters<float> params;
};

// Metadata must carry the model config under "model"; callers add phase, task,
// epoch, vocab_hash, and the effective-config snapshot.
nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

void save_checkpoint(const ModelParameters<float>& params, const nlohmann::json& metadata,
                     const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

enum class ReuseMode { kFull, kSentenceEncoderOnly, kNone };

std::string reuse_name(ReuseMode mode);
ReuseMode parse_reuse(const std::string& name);  // "full" | "sentenc" | "none"

// Copy tensors from a loaded checkpoint into freshly initialized parameters.
// kFull copies everything; kSentenceEncoderOnly copies the embedding and the
// recurrent encoder, leaving attention and heads at their fresh values; kNone
// copies nothing. Shape mismatches are errors.
void overlay_checkpoint(ModelParameters<float>& params, const Checkpoint& ckpt, ReuseMode mode);

}  // namespace sspext
