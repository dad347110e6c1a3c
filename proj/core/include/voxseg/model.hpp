#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "voxseg/ops.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

enum class Arch { kUNet, kFcn };
enum class Norm { kBatch, kNone };

struct ModelConfig {
  int num_classes = 14;  // 13 organ labels + background
  int base_filters = 16;
  int num_scales = 4;
  int units_per_scale = 1;
  Arch arch = Arch::kUNet;
  Norm norm = Norm::kBatch;

  void validate() const;
  // The patch must survive num_scales - 1 halvings.
  void validate_patch(int64_t patch_size) const;
};

// Ordered, named parameter set. Entry order is the canonical serialization
// order; running statistics are carried as non-trainable entries.
template <typename F>
struct ModelParams {
  struct Entry {
    std::string name;
    Tensor<F> tensor;
    bool trainable = true;
  };
  std::vector<Entry> entries;
  std::unordered_map<std::string, size_t> index;

  void add(std::string name, Tensor<F> tensor, bool trainable);
  bool contains(const std::string& name) const { return index.contains(name); }
  const Tensor<F>& at(const std::string& name) const;
  Tensor<F>& at(const std::string& name);
  int64_t value_count() const;
  int64_t trainable_count() const;
};

enum class ParamInit { kHeNormal, kZeros, kOnes };

struct ParamSpec {
  std::string name;
  Shape shape;
  bool trainable = true;
  ParamInit init = ParamInit::kZeros;
  int64_t fan_in = 0;  // used by kHeNormal
};

// The full layer walk for a config; build_params and the checkpoint reader
// both follow this list, so entry order is identical everywhere.
std::vector<ParamSpec> param_specs(const ModelConfig& cfg);

template <typename F>
ModelParams<F> build_params(const ModelConfig& cfg, Rng& rng);

// Pre-activation residual unit: norm -> relu -> conv3 (stride) -> norm ->
// relu -> conv3 (1), plus identity or strided 1-cubed projection shortcut.
// Parameter names live under `prefix`.
template <typename F>
Tensor<F> residual_unit(Tape<F>& tape, const Tensor<F>& x,
                        ModelParams<F>& params, const std::string& prefix,
                        int64_t in_ch, int64_t out_ch, int64_t stride,
                        Norm norm, ops::NormMode mode);

template <typename F>
Tensor<F> unet_forward(Tape<F>& tape, const Tensor<F>& x,
                       ModelParams<F>& params, const ModelConfig& cfg,
                       ops::NormMode mode);

template <typename F>
Tensor<F> fcn_forward(Tape<F>& tape, const Tensor<F>& x,
                      ModelParams<F>& params, const ModelConfig& cfg,
                      ops::NormMode mode);

// Dispatches on cfg.arch; the one signature every caller uses.
template <typename F>
Tensor<F> model_forward(Tape<F>& tape, const Tensor<F>& x,
                        ModelParams<F>& params, const ModelConfig& cfg,
                        ops::NormMode mode);

const char* arch_name(Arch a);
Arch parse_arch(const std::string& name);
const char* norm_name(Norm n);
Norm parse_norm(const std::string& name);

}  // namespace voxseg
