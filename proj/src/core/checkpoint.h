#pragma once

#include <string>
#include <vector>

#include "core/config.h"
#include "core/optim.h"

namespace avfuse {

// Single-file binary checkpoint: magic, version byte, canonical config
// snapshot, step counter, rng state, named parameter table (little-endian
// 32-bit floats), then optimizer moments in the same order.
inline constexpr char kCheckpointMagic[4] = {'A', 'V', 'F', 'C'};
inline constexpr uint8_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct LoadedCheckpoint {
  RunConfig config;
  std::string config_text;
  long step = 0;
  Rng rng;
  std::vector<CheckpointTensor> params;
  bool has_optimizer = false;
  long opt_step = 0;
  std::vector<std::vector<float>> moment1, moment2;
};

void save_checkpoint(const std::string& path, const RunConfig& cfg,
                     const ParamStore<float>& params, const Adam<float>* opt, long step,
                     const Rng& rng);

LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies payloads into an existing store (and optimizer, when present);
// any name or shape mismatch fails before any compute happens.
void apply_checkpoint(const LoadedCheckpoint& ckpt, ParamStore<float>& params,
                      Adam<float>* opt);

// Human-readable header and tensor directory, one line per entry.
std::vector<std::string> inspect_checkpoint(const std::string& path);

}  // namespace avfuse
