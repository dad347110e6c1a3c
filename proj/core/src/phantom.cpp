#include "voxseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

namespace voxseg {

PhantomSpec PhantomSpec::defaults(int num_foreground_classes) {
  PhantomSpec spec;
  for (int c = 0; c < num_foreground_classes; ++c) {
    ShapeSpec shape;
    shape.kind = (c % 2 == 0) ? ShapeKind::kSphere : ShapeKind::kCuboid;
    shape.intensity_mean =
        static_cast<double>(c + 1) / (num_foreground_classes + 1);
    spec.classes.push_back(shape);
  }
  return spec;
}

void PhantomSpec::validate() const {
  for (int64_t d : dims) {
    if (d < 8) {
      throw ConfigError("phantom dims must be >= 8, got " + std::to_string(d));
    }
  }
  if (classes.empty() || classes.size() > 254) {
    throw ConfigError("phantom needs 1 to 254 foreground classes, got " +
                      std::to_string(classes.size()));
  }
  if (noise_std < 0.0) {
    throw ConfigError("phantom noise_std must be >= 0");
  }
  const int64_t min_dim = *std::min_element(dims.begin(), dims.end());
  for (size_t c = 0; c < classes.size(); ++c) {
    const ShapeSpec& s = classes[c];
    if (s.size_lo < 1 || s.size_hi < s.size_lo) {
      throw ConfigError("phantom class " + std::to_string(c + 1) +
                        " has an invalid size range");
    }
    if (2 * s.size_hi + 1 > min_dim) {
      throw ConfigError("phantom class " + std::to_string(c + 1) +
                        " cannot fit: size " + std::to_string(s.size_hi) +
                        " exceeds dims");
    }
    if (s.intensity_std < 0.0) {
      throw ConfigError("phantom class " + std::to_string(c + 1) +
                        " intensity_std must be >= 0");
    }
    for (size_t o = 0; o < c; ++o) {
      const double gap =
          std::abs(s.intensity_mean - classes[o].intensity_mean);
      if (gap < 2.0 * noise_std) {
        throw ConfigError(
            "phantom class means " + std::to_string(o + 1) + " and " +
            std::to_string(c + 1) + " are closer than twice the noise std");
      }
    }
  }
}

namespace {

struct PlacedShape {
  ShapeKind kind = ShapeKind::kSphere;
  std::array<int64_t, 3> center{0, 0, 0};
  std::array<int64_t, 3> half{0, 0, 0};  // sphere keeps radius in half[0]
};

bool contains(const PlacedShape& s, int64_t z, int64_t y, int64_t x) {
  if (s.kind == ShapeKind::kSphere) {
    const int64_t dz = z - s.center[0];
    const int64_t dy = y - s.center[1];
    const int64_t dx = x - s.center[2];
    const int64_t r = s.half[0];
    return dz * dz + dy * dy + dx * dx <= r * r;
  }
  return std::abs(z - s.center[0]) <= s.half[0] &&
         std::abs(y - s.center[1]) <= s.half[1] &&
         std::abs(x - s.center[2]) <= s.half[2];
}

std::array<int64_t, 3> bounding_half(const PlacedShape& s) {
  if (s.kind == ShapeKind::kSphere) return {s.half[0], s.half[0], s.half[0]};
  return s.half;
}

}  // namespace

std::pair<Volume, LabelVolume> generate_phantom(const PhantomSpec& spec,
                                                Rng& rng) {
  spec.validate();

  Volume image;
  image.dims = spec.dims;
  image.channels = 1;
  image.dtype = VoxelType::kF32;
  image.values.resize(static_cast<size_t>(image.voxels()));
  LabelVolume label;
  label.dims = spec.dims;
  label.values.assign(static_cast<size_t>(label.voxels()), 0);

  for (float& v : image.values) {
    v = static_cast<float>(spec.noise_std * rng.normal());
  }

  for (size_t c = 0; c < spec.classes.size(); ++c) {
    const ShapeSpec& shape_spec = spec.classes[c];
    const uint8_t class_id = static_cast<uint8_t>(c + 1);
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      PlacedShape shape;
      shape.kind = shape_spec.kind;
      if (shape.kind == ShapeKind::kSphere) {
        const int64_t r =
            shape_spec.size_lo +
            rng.uniform_int(shape_spec.size_hi - shape_spec.size_lo + 1);
        shape.half = {r, r, r};
      } else {
        for (int axis = 0; axis < 3; ++axis) {
          shape.half[static_cast<size_t>(axis)] =
              shape_spec.size_lo +
              rng.uniform_int(shape_spec.size_hi - shape_spec.size_lo + 1);
        }
      }
      const auto bound = bounding_half(shape);
      for (int axis = 0; axis < 3; ++axis) {
        const int64_t h = bound[static_cast<size_t>(axis)];
        const int64_t lo = h;
        const int64_t hi = spec.dims[static_cast<size_t>(axis)] - 1 - h;
        shape.center[static_cast<size_t>(axis)] =
            lo + rng.uniform_int(hi - lo + 1);
      }

      bool overlaps = false;
      for (int64_t z = shape.center[0] - bound[0];
           z <= shape.center[0] + bound[0] && !overlaps; ++z) {
        for (int64_t y = shape.center[1] - bound[1];
             y <= shape.center[1] + bound[1] && !overlaps; ++y) {
          for (int64_t x = shape.center[2] - bound[2];
               x <= shape.center[2] + bound[2]; ++x) {
            if (contains(shape, z, y, x) && label.at(z, y, x) != 0) {
              overlaps = true;
              break;
            }
          }
        }
      }
      if (overlaps) continue;

      for (int64_t z = shape.center[0] - bound[0];
           z <= shape.center[0] + bound[0]; ++z) {
        for (int64_t y = shape.center[1] - bound[1];
             y <= shape.center[1] + bound[1]; ++y) {
          for (int64_t x = shape.center[2] - bound[2];
               x <= shape.center[2] + bound[2]; ++x) {
            if (!contains(shape, z, y, x)) continue;
            label.at(z, y, x) = class_id;
            image.at(0, z, y, x) =
                static_cast<float>(shape_spec.intensity_mean +
                                   shape_spec.intensity_std * rng.normal());
          }
        }
      }
      placed = true;
    }
    if (!placed) {
      throw Error("generate_phantom: could not place class " +
                  std::to_string(c + 1) + " after 1000 attempts");
    }
  }
  return {std::move(image), std::move(label)};
}

DatasetPaths generate_dataset(const PhantomSpec& spec, int64_t n_train,
                              int64_t n_val,
                              const std::filesystem::path& out_dir) {
  if (n_train < 1 || n_val < 1) {
    throw ConfigError("generate_dataset: n_train and n_val must be >= 1");
  }
  spec.validate();
  std::filesystem::create_directories(out_dir);

  const Rng base(spec.seed);
  char name[32];
  auto emit = [&](const char* prefix, int64_t count, int64_t seed_offset,
                  const std::filesystem::path& manifest_path) {
    std::string manifest = "id,image,label\n";
    for (int64_t i = 0; i < count; ++i) {
      std::snprintf(name, sizeof name, "%s_%03lld", prefix,
                    static_cast<long long>(i));
      Rng subject_rng = base.child(static_cast<uint64_t>(seed_offset + i));
      auto [image, label] = generate_phantom(spec, subject_rng);
      const std::string image_file = std::string(name) + "_img.mvol";
      const std::string label_file = std::string(name) + "_lbl.mvol";
      write_volume(out_dir / image_file, image);
      write_volume(out_dir / label_file, label);
      manifest += std::string(name) + "," + image_file + "," + label_file + "\n";
    }
    std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
    if (!out) {
      throw Error("generate_dataset: cannot write '" +
                  manifest_path.string() + "'");
    }
    out << manifest;
    if (!out) {
      throw Error("generate_dataset: failed writing '" +
                  manifest_path.string() + "'");
    }
  };

  DatasetPaths paths;
  paths.train_manifest = out_dir / "train_manifest.csv";
  paths.val_manifest = out_dir / "val_manifest.csv";
  emit("train", n_train, 0, paths.train_manifest);
  emit("val", n_val, n_train, paths.val_manifest);
  return paths;
}

}  // namespace voxseg
