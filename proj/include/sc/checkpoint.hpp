#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sc/models.hpp"
#include "sc/tensor.hpp"

namespace sc {

// Versioned binary container: magic "SCCK", version u32, model hash u64, then
// counted sections of per-tensor records (u32 name length, name bytes, u32
// rank, u32 extents, raw little-endian f32 payload). Params first, then
// optimizer/BN running state. Round-trips bit-exactly.
struct Checkpoint {
  uint32_t version = 1;
  uint64_t model_hash = 0;
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, Tensor>> state;

  Tensor find(const std::string& name) const;  // searches params then state
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Snapshot of a model (+ optional optimizer state tensors).
Checkpoint checkpoint_from_model(const Model& model,
                                 const std::vector<std::pair<std::string, Tensor>>& extra_state = {});

// Copies checkpoint values into the model. trunk_only restores only layers
// before the sc_tap (the pretrain -> finetune handoff); the head keeps its
// fresh initialization. The model hash must match.
void apply_checkpoint(Model& model, const Checkpoint& ckpt, bool trunk_only);

}  // namespace sc
