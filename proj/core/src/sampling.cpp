#include "voxseg/sampling.hpp"

#include <algorithm>

namespace voxseg {
namespace {

// Child stream tags for make_batch.
constexpr uint64_t kSubjectStream = 0;
constexpr uint64_t kCenterStream = 1;

}  // namespace

void SamplerConfig::validate() const {
  if (patch_size < 8 || patch_size % 2 != 0) {
    throw ConfigError("sampler.patch_size must be even and >= 8, got " +
                      std::to_string(patch_size));
  }
}

ClassIndex build_class_index(const LabelVolume& label) {
  std::array<std::vector<int64_t>, 256> buckets;
  const int64_t n = label.voxels();
  for (int64_t i = 0; i < n; ++i) {
    buckets[label.values[static_cast<size_t>(i)]].push_back(i);
  }
  ClassIndex index;
  for (int c = 0; c < 256; ++c) {
    if (!buckets[static_cast<size_t>(c)].empty()) {
      index.present.push_back(static_cast<uint8_t>(c));
      index.voxels.push_back(std::move(buckets[static_cast<size_t>(c)]));
    }
  }
  return index;
}

std::vector<Subject> load_subjects(const Manifest& manifest,
                                   const NormalizationConfig& normalization,
                                   bool require_labels) {
  std::vector<Subject> subjects;
  subjects.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    Subject s;
    s.id = rec.id;
    s.image = normalize_intensity(read_image(rec.image), normalization);
    if (s.image.channels != 1) {
      throw Error("subject '" + rec.id + "' must have a single-channel image");
    }
    if (rec.has_label) {
      s.label = read_label(rec.label);
      if (s.label.dims != s.image.dims) {
        throw Error("subject '" + rec.id + "' image and label dims differ");
      }
      s.has_label = true;
      s.class_index = build_class_index(s.label);
    } else if (require_labels) {
      throw Error("subject '" + rec.id + "' has no label volume");
    }
    subjects.push_back(std::move(s));
  }
  return subjects;
}

std::pair<std::vector<float>, std::vector<int32_t>> extract_patch(
    const Volume& image, const LabelVolume& label, Coord center, int64_t size) {
  if (image.channels != 1) {
    throw Error("extract_patch expects a single-channel image");
  }
  const bool with_labels = !label.values.empty();
  if (with_labels && label.dims != image.dims) {
    throw Error("extract_patch: image and label dims differ");
  }
  // For each axis: start offset into the volume and, when the axis is
  // shorter than the patch, the symmetric pad before the data.
  std::array<int64_t, 3> start{}, pad_lo{};
  const std::array<int64_t, 3> centers{center.z, center.y, center.x};
  bool needs_pad = false;
  for (int axis = 0; axis < 3; ++axis) {
    const int64_t dim = image.dims[static_cast<size_t>(axis)];
    if (dim >= size) {
      start[static_cast<size_t>(axis)] =
          std::clamp<int64_t>(centers[static_cast<size_t>(axis)] - size / 2, 0,
                              dim - size);
    } else {
      pad_lo[static_cast<size_t>(axis)] = (size - dim) / 2;
      needs_pad = true;
    }
  }
  float pad_value = 0.0f;
  if (needs_pad) {
    pad_value = *std::min_element(image.values.begin(), image.values.end());
  }
  std::vector<float> values(static_cast<size_t>(size * size * size));
  std::vector<int32_t> labels(with_labels ? values.size() : 0);
  size_t at = 0;
  for (int64_t z = 0; z < size; ++z) {
    const int64_t sz = start[0] + z - pad_lo[0];
    const bool z_in = sz >= 0 && sz < image.dims[0];
    for (int64_t y = 0; y < size; ++y) {
      const int64_t sy = start[1] + y - pad_lo[1];
      const bool y_in = z_in && sy >= 0 && sy < image.dims[1];
      for (int64_t x = 0; x < size; ++x, ++at) {
        const int64_t sx = start[2] + x - pad_lo[2];
        if (y_in && sx >= 0 && sx < image.dims[2]) {
          values[at] = image.at(0, sz, sy, sx);
          if (with_labels) {
            labels[at] = static_cast<int32_t>(label.at(sz, sy, sx));
          }
        } else {
          values[at] = pad_value;
          if (with_labels) labels[at] = 0;
        }
      }
    }
  }
  return {std::move(values), std::move(labels)};
}

Coord sample_center_uniform(const std::array<int64_t, 3>& dims, Rng& rng) {
  Coord c;
  c.z = rng.uniform_int(dims[0]);
  c.y = rng.uniform_int(dims[1]);
  c.x = rng.uniform_int(dims[2]);
  return c;
}

Coord sample_center_class_balanced(const LabelVolume& label,
                                   const ClassIndex& index, Rng& rng,
                                   bool foreground_only) {
  size_t first = 0;
  if (foreground_only && !index.present.empty() && index.present[0] == 0) {
    first = 1;
  }
  const size_t n_classes = index.present.size() - first;
  if (n_classes == 0) {
    throw Error("class-balanced sampling found no eligible classes");
  }
  const size_t pick =
      first + static_cast<size_t>(rng.uniform_int(
                  static_cast<int64_t>(n_classes)));
  const auto& voxels = index.voxels[pick];
  const int64_t flat =
      voxels[static_cast<size_t>(rng.uniform_int(std::ssize(voxels)))];
  Coord c;
  c.z = flat / (label.dims[1] * label.dims[2]);
  c.y = (flat / label.dims[2]) % label.dims[1];
  c.x = flat % label.dims[2];
  return c;
}

PatchBatch make_batch(std::span<const Subject> subjects,
                      const SamplerConfig& cfg, int64_t n, const Rng& rng) {
  cfg.validate();
  if (subjects.empty()) {
    throw Error("make_batch: empty dataset");
  }
  if (n < 1) {
    throw Error("make_batch: batch size must be positive");
  }
  const int64_t p = cfg.patch_size;
  PatchBatch batch;
  batch.n = n;
  batch.patch = p;
  batch.images = Tensor<float>::zeros({n, 1, p, p, p});
  batch.labels.resize(static_cast<size_t>(n * p * p * p));
  batch.origins.resize(static_cast<size_t>(n));

  Rng subject_rng = rng.child(kSubjectStream);
  Rng center_rng = rng.child(kCenterStream);
  auto img = batch.images.mutable_values();
  for (int64_t i = 0; i < n; ++i) {
    const auto& subject = subjects[static_cast<size_t>(
        subject_rng.uniform_int(std::ssize(subjects)))];
    if (!subject.has_label) {
      throw Error("subject '" + subject.id + "' has no label volume");
    }
    Coord center =
        cfg.mode == SamplerMode::kUniform
            ? sample_center_uniform(subject.image.dims, center_rng)
            : sample_center_class_balanced(subject.label, subject.class_index,
                                           center_rng, cfg.foreground_only);
    auto [values, labels] = extract_patch(subject.image, subject.label, center, p);
    std::copy(values.begin(), values.end(),
              img.begin() + i * p * p * p);
    std::copy(labels.begin(), labels.end(),
              batch.labels.begin() + i * p * p * p);
    batch.origins[static_cast<size_t>(i)] = {subject.id, center};
  }
  return batch;
}

const char* sampler_mode_name(SamplerMode m) {
  return m == SamplerMode::kUniform ? "uniform" : "class_balanced";
}

SamplerMode parse_sampler_mode(const std::string& name) {
  if (name == "uniform") return SamplerMode::kUniform;
  if (name == "class_balanced") return SamplerMode::kClassBalanced;
  throw ConfigError("unknown sampler mode '" + name +
                    "', expected uniform or class_balanced");
}

}  // namespace voxseg
