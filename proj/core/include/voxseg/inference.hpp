#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "voxseg/model.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

// Tile placement for one volume. Axes shorter than the patch are padded
// symmetrically before tiling; pads are recorded so output can be cropped.
struct TilePlan {
  int64_t patch = 0;
  int64_t stride = 0;
  std::array<std::vector<int64_t>, 3> starts;  // strictly increasing per axis
  std::array<int64_t, 3> pad_lo{0, 0, 0};
  std::array<int64_t, 3> pad_hi{0, 0, 0};
  std::array<int64_t, 3> padded_dims{0, 0, 0};
};

// Starts are multiples of the stride, with a final start at D - P so the last
// tile ends exactly at the volume edge. Requires patch >= 8, 1 <= stride <= patch.
TilePlan plan_tiles(const std::array<int64_t, 3>& dims, int64_t patch,
                    int64_t stride);

// Runs the model in inference mode over every tile, softmaxes the logits,
// and averages per-voxel probabilities by hit count. Undersized axes are
// padded with the volume minimum and cropped after aggregation, so output
// dims always equal input dims. Tiles run sequentially; output is
// deterministic.
template <typename F>
Volume sliding_window_predict(const Volume& v, ModelParams<F>& params,
                              const ModelConfig& cfg, int64_t patch,
                              int64_t stride);

// Per-voxel argmax over channels; ties go to the lowest class index.
LabelVolume labels_from_probs(const Volume& probs);

}  // namespace voxseg
