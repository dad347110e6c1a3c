#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "voxseg/rng.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

enum class ShapeKind { kSphere, kCuboid };

// One foreground class: an analytic shape with a size range and an
// intensity profile. Sizes are integer half-extents so the discrete voxel
// membership has an exact counting oracle.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::kSphere;
  int64_t size_lo = 5;
  int64_t size_hi = 10;
  double intensity_mean = 0.5;
  double intensity_std = 0.05;
};

struct PhantomSpec {
  std::array<int64_t, 3> dims{64, 64, 64};
  std::vector<ShapeSpec> classes;  // class c+1 labels classes[c]
  double noise_std = 0.05;
  uint64_t seed = 1;

  // Alternating spheres and cuboids with means spread over (0, 1).
  static PhantomSpec defaults(int num_foreground_classes = 3);
  // Shapes must fit inside dims and intensity means must be pairwise
  // separated by at least twice the noise std, so the task is learnable.
  void validate() const;
};

// Background is 0-mean noise; each class paints its shape at a random
// non-overlapping location, mean plus per-voxel noise. Labels are exact.
// Throws after 1000 rejected placements.
std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec,
                                                Rng& rng);

struct DatasetPaths {
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
};

// Writes image/label MVOL pairs plus train and val manifests under out_dir.
// Subject seeds derive from spec.seed, so the corpus is reproducible
// byte for byte.
DatasetPaths generate_dataset(const PhantomSpec& spec, int64_t n_train,
                              int64_t n_val,
                              const std::filesystem::path& out_dir);

}  // namespace voxseg
