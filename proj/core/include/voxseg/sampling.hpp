#pragma once

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "voxseg/rng.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

enum class SamplerMode { kUniform, kClassBalanced };

struct SamplerConfig {
  int64_t patch_size = 64;
  SamplerMode mode = SamplerMode::kClassBalanced;
  uint64_t seed = 1;
  // Class-balanced draws pick among foreground classes only when set;
  // otherwise the background class competes on equal terms.
  bool foreground_only = false;
  void validate() const;
};

struct Coord {
  int64_t z = 0, y = 0, x = 0;
};

// Flat voxel indices grouped by the classes present in a label volume.
struct ClassIndex {
  std::vector<uint8_t> present;               // ascending class ids
  std::vector<std::vector<int64_t>> voxels;   // parallel to present
};

ClassIndex build_class_index(const LabelVolume& label);

// One loaded subject: normalized image, labels when available, and the
// cached per-class voxel lists the balanced sampler draws from.
struct Subject {
  std::string id;
  Volume image;
  LabelVolume label;
  bool has_label = false;
  ClassIndex class_index;
};

// Reads every manifest record, checks image/label dims agree, and applies
// z-score normalization to the image.
std::vector<Subject> load_subjects(const Manifest& manifest,
                                   const NormalizationConfig& normalization,
                                   bool require_labels);

// Cube of side `size` around `center`; the window is clamped to the volume,
// so centers near a border shift inward. An axis shorter than `size` is
// padded symmetrically instead, image with the volume minimum and labels
// with background. Returns image values and labels in (z, y, x) patch order.
std::pair<std::vector<float>, std::vector<int32_t>> extract_patch(
    const Volume& image, const LabelVolume& label, Coord center, int64_t size);

Coord sample_center_uniform(const std::array<int64_t, 3>& dims, Rng& rng);

// Picks a class uniformly among those present (optionally foreground only),
// then a voxel uniformly within that class.
Coord sample_center_class_balanced(const LabelVolume& label,
                                   const ClassIndex& index, Rng& rng,
                                   bool foreground_only = false);

struct PatchBatch {
  Tensor<float> images;          // (n, 1, P, P, P)
  std::vector<int32_t> labels;   // n * P^3, patch-major
  int64_t n = 0;
  int64_t patch = 0;
  struct Origin {
    std::string subject;
    Coord center;
  };
  std::vector<Origin> origins;
};

// Draws n patches. Subject choice and patch centers come from fixed child
// streams of `rng`, so the subject sequence is identical across sampler
// modes for the same generator.
PatchBatch make_batch(std::span<const Subject> subjects,
                      const SamplerConfig& cfg, int64_t n, const Rng& rng);

const char* sampler_mode_name(SamplerMode m);
SamplerMode parse_sampler_mode(const std::string& name);

// Bounded FIFO handoff between a producer thread and the training loop.
// push blocks while full and returns false once closed; pop blocks while
// empty and returns nullopt once closed and drained.
template <typename T>
class BoundedChannel {
 public:
  explicit BoundedChannel(size_t capacity = 4) : capacity_(capacity) {}

  bool push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [this] { return items_.size() < capacity_ || closed_; });
    if (closed_) return false;
    items_.push_back(std::move(item));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [this] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  size_t capacity_;
  bool closed_ = false;
};

}  // namespace voxseg
