#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "voxseg/tensor.hpp"

namespace voxseg {

enum class VoxelType { kF32, kI16, kU8 };

const char* voxel_type_name(VoxelType t);

// Scalar or multi-channel image grid. Values are stored as float regardless
// of the on-disk voxel type, channel-major with x fastest.
struct Volume {
  std::array<int64_t, 3> dims{0, 0, 0};  // D, H, W
  int64_t channels = 1;
  VoxelType dtype = VoxelType::kF32;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> values;

  int64_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  float at(int64_t c, int64_t z, int64_t y, int64_t x) const {
    return values[static_cast<size_t>(
        ((c * dims[0] + z) * dims[1] + y) * dims[2] + x)];
  }
  float& at(int64_t c, int64_t z, int64_t y, int64_t x) {
    return values[static_cast<size_t>(
        ((c * dims[0] + z) * dims[1] + y) * dims[2] + x)];
  }
};

// Integer class labels, one per voxel.
struct LabelVolume {
  std::array<int64_t, 3> dims{0, 0, 0};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<uint8_t> values;

  int64_t voxels() const { return dims[0] * dims[1] * dims[2]; }
  uint8_t at(int64_t z, int64_t y, int64_t x) const {
    return values[static_cast<size_t>((z * dims[1] + y) * dims[2] + x)];
  }
  uint8_t& at(int64_t z, int64_t y, int64_t x) {
    return values[static_cast<size_t>((z * dims[1] + y) * dims[2] + x)];
  }
};

// Binary volume container: 8-byte magic "MVOL0001", little-endian u32 JSON
// header length, JSON header, then the raw voxel payload in little-endian
// order, channel-major with x fastest.
Volume read_image(const std::filesystem::path& path);
LabelVolume read_label(const std::filesystem::path& path);
std::variant<Volume, LabelVolume> read_volume(const std::filesystem::path& path);
void write_volume(const std::filesystem::path& path, const Volume& volume);
void write_volume(const std::filesystem::path& path, const LabelVolume& label);

struct ManifestRecord {
  std::string id;
  std::filesystem::path image;
  std::filesystem::path label;  // empty when absent
  bool has_label = false;
};

struct Manifest {
  std::vector<ManifestRecord> records;
};

// CSV with header id,image,label; the label column may be empty. Relative
// paths resolve against the manifest's directory. Missing volume files are
// reported when a record is actually loaded, not here.
Manifest read_manifest(const std::filesystem::path& path);

struct NormalizationConfig {
  bool clip = false;
  double clip_lo_pct = 1.0;
  double clip_hi_pct = 99.0;
  void validate() const;
};

// Z-score normalization per channel, with optional percentile clipping first.
// A constant channel maps to all zeros.
Volume normalize_intensity(const Volume& v, const NormalizationConfig& cfg = {});

}  // namespace voxseg
