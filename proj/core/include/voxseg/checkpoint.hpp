#pragma once

#include <cstdint>
#include <filesystem>

#include "voxseg/model.hpp"
#include "voxseg/optim.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// Everything needed to resume training or to predict with the same
// preprocessing the model was trained with.
struct Checkpoint {
  ModelConfig model;
  TrainHyper hyper;
  NormalizationConfig normalization;
  int64_t patch_size = 64;
  ModelParams<float> params;
  AdamState<float> adam;
  int64_t step = 0;
  // Mean foreground validation DSC of this snapshot; -1 when never validated.
  double best_val_dsc = -1.0;
};

// File layout: 8-byte magic "MCKP0001", little-endian u32 header length, a
// JSON header {version, step, model config, hyper, tensor directory, crc32
// of payload, ...}, then the concatenated little-endian f32 tensor payloads
// in directory order. Save and load round-trip byte-identically.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace voxseg
