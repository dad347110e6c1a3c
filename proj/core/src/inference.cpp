#include "voxseg/inference.hpp"

#include <algorithm>
#include <cmath>

#include "voxseg/ops.hpp"

namespace voxseg {

TilePlan plan_tiles(const std::array<int64_t, 3>& dims, int64_t patch,
                    int64_t stride) {
  if (patch < 8) {
    throw Error("plan_tiles: patch must be >= 8, got " +
                std::to_string(patch));
  }
  if (stride < 1 || stride > patch) {
    throw Error("plan_tiles: stride must be in [1, patch], got " +
                std::to_string(stride));
  }
  TilePlan plan;
  plan.patch = patch;
  plan.stride = stride;
  for (int axis = 0; axis < 3; ++axis) {
    const int64_t d = dims[static_cast<size_t>(axis)];
    if (d < 1) {
      throw Error("plan_tiles: dims must be positive, got " +
                  std::to_string(d));
    }
    auto& starts = plan.starts[static_cast<size_t>(axis)];
    if (d < patch) {
      plan.pad_lo[static_cast<size_t>(axis)] = (patch - d) / 2;
      plan.pad_hi[static_cast<size_t>(axis)] =
          patch - d - plan.pad_lo[static_cast<size_t>(axis)];
      plan.padded_dims[static_cast<size_t>(axis)] = patch;
      starts = {0};
      continue;
    }
    plan.padded_dims[static_cast<size_t>(axis)] = d;
    for (int64_t s = 0; s + patch < d; s += stride) starts.push_back(s);
    starts.push_back(d - patch);
  }
  return plan;
}

template <typename F>
Volume sliding_window_predict(const Volume& v, ModelParams<F>& params,
                              const ModelConfig& cfg, int64_t patch,
                              int64_t stride) {
  if (v.channels != 1) {
    throw Error("sliding_window_predict: expected a single-channel volume, got " +
                std::to_string(v.channels) + " channels");
  }
  cfg.validate_patch(patch);
  const TilePlan plan = plan_tiles(v.dims, patch, stride);

  float pad_value = 0.0f;
  if (!v.values.empty()) {
    pad_value = *std::min_element(v.values.begin(), v.values.end());
  }

  const auto& pd = plan.padded_dims;
  const int64_t padded_voxels = pd[0] * pd[1] * pd[2];
  std::vector<float> padded(static_cast<size_t>(padded_voxels), pad_value);
  for (int64_t z = 0; z < v.dims[0]; ++z) {
    for (int64_t y = 0; y < v.dims[1]; ++y) {
      const float* src = v.values.data() + (z * v.dims[1] + y) * v.dims[2];
      float* dst = padded.data() +
                   ((z + plan.pad_lo[0]) * pd[1] + y + plan.pad_lo[1]) * pd[2] +
                   plan.pad_lo[2];
      std::copy(src, src + v.dims[2], dst);
    }
  }

  const int64_t classes = cfg.num_classes;
  std::vector<double> acc(static_cast<size_t>(classes * padded_voxels), 0.0);
  std::vector<int32_t> hits(static_cast<size_t>(padded_voxels), 0);

  Tape<F> tape;
  tape.set_recording(false);
  const int64_t p3 = patch * patch * patch;
  std::vector<F> tile_values(static_cast<size_t>(p3));
  for (int64_t z0 : plan.starts[0]) {
    for (int64_t y0 : plan.starts[1]) {
      for (int64_t x0 : plan.starts[2]) {
        for (int64_t z = 0; z < patch; ++z) {
          for (int64_t y = 0; y < patch; ++y) {
            const float* src =
                padded.data() + ((z0 + z) * pd[1] + y0 + y) * pd[2] + x0;
            F* dst = tile_values.data() + (z * patch + y) * patch;
            for (int64_t x = 0; x < patch; ++x) {
              dst[x] = static_cast<F>(src[x]);
            }
          }
        }
        Tensor<F> x = Tensor<F>::from_values({1, 1, patch, patch, patch},
                                             tile_values);
        Tensor<F> logits =
            model_forward(tape, x, params, cfg, ops::NormMode::kInfer);
        Tensor<F> probs = ops::softmax_channels(tape, logits);
        const auto pv = probs.values();
        for (int64_t c = 0; c < classes; ++c) {
          const F* src = pv.data() + c * p3;
          double* dst = acc.data() + c * padded_voxels;
          for (int64_t z = 0; z < patch; ++z) {
            for (int64_t y = 0; y < patch; ++y) {
              const int64_t g = ((z0 + z) * pd[1] + y0 + y) * pd[2] + x0;
              const int64_t l = (z * patch + y) * patch;
              for (int64_t xx = 0; xx < patch; ++xx) {
                dst[g + xx] += static_cast<double>(src[l + xx]);
              }
            }
          }
        }
        for (int64_t z = 0; z < patch; ++z) {
          for (int64_t y = 0; y < patch; ++y) {
            int32_t* dst =
                hits.data() + ((z0 + z) * pd[1] + y0 + y) * pd[2] + x0;
            for (int64_t xx = 0; xx < patch; ++xx) dst[xx] += 1;
          }
        }
      }
    }
  }

  Volume out;
  out.dims = v.dims;
  out.channels = classes;
  out.dtype = VoxelType::kF32;
  out.spacing = v.spacing;
  out.values.resize(static_cast<size_t>(classes * v.voxels()));
  for (int64_t c = 0; c < classes; ++c) {
    for (int64_t z = 0; z < v.dims[0]; ++z) {
      for (int64_t y = 0; y < v.dims[1]; ++y) {
        const int64_t g =
            ((z + plan.pad_lo[0]) * pd[1] + y + plan.pad_lo[1]) * pd[2] +
            plan.pad_lo[2];
        const int64_t o = ((c * v.dims[0] + z) * v.dims[1] + y) * v.dims[2];
        for (int64_t xx = 0; xx < v.dims[2]; ++xx) {
          const int32_t h = hits[static_cast<size_t>(g + xx)];
          out.values[static_cast<size_t>(o + xx)] = static_cast<float>(
              acc[static_cast<size_t>(c * padded_voxels + g + xx)] /
              static_cast<double>(h));
        }
      }
    }
  }
  return out;
}

LabelVolume labels_from_probs(const Volume& probs) {
  if (probs.channels < 2 || probs.channels > 255) {
    throw Error("labels_from_probs: channel count must be in [2, 255], got " +
                std::to_string(probs.channels));
  }
  LabelVolume out;
  out.dims = probs.dims;
  out.spacing = probs.spacing;
  const int64_t n = probs.voxels();
  out.values.resize(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int best = 0;
    float best_p = probs.values[static_cast<size_t>(i)];
    for (int64_t c = 1; c < probs.channels; ++c) {
      const float p = probs.values[static_cast<size_t>(c * n + i)];
      if (p > best_p) {
        best_p = p;
        best = static_cast<int>(c);
      }
    }
    out.values[static_cast<size_t>(i)] = static_cast<uint8_t>(best);
  }
  return out;
}

template Volume sliding_window_predict<float>(const Volume&,
                                              ModelParams<float>&,
                                              const ModelConfig&, int64_t,
                                              int64_t);
template Volume sliding_window_predict<double>(const Volume&,
                                               ModelParams<double>&,
                                               const ModelConfig&, int64_t,
                                               int64_t);

}  // namespace voxseg
