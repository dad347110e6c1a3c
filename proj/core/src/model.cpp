#include "voxseg/model.hpp"

#include <cmath>

namespace voxseg {

void ModelConfig::validate() const {
  if (num_classes < 2) {
    throw ConfigError("model.num_classes must be >= 2, got " +
                      std::to_string(num_classes));
  }
  if (num_classes > 255) {
    throw ConfigError("model.num_classes must fit a u8 label, got " +
                      std::to_string(num_classes));
  }
  if (num_scales < 2) {
    throw ConfigError("model.num_scales must be >= 2, got " +
                      std::to_string(num_scales));
  }
  if (base_filters < 1) {
    throw ConfigError("model.base_filters must be >= 1, got " +
                      std::to_string(base_filters));
  }
  if (units_per_scale < 1) {
    throw ConfigError("model.units_per_scale must be >= 1, got " +
                      std::to_string(units_per_scale));
  }
}

void ModelConfig::validate_patch(int64_t patch_size) const {
  const int64_t factor = int64_t(1) << (num_scales - 1);
  if (patch_size % factor != 0 || patch_size / factor < 1) {
    throw ConfigError(
        "model.num_scales incompatible with sampler.patch_size: patch " +
        std::to_string(patch_size) + " is not divisible by 2^(num_scales-1) = " +
        std::to_string(factor));
  }
}

template <typename F>
void ModelParams<F>::add(std::string name, Tensor<F> tensor, bool trainable) {
  if (index.contains(name)) {
    throw Error("duplicate parameter name: " + name);
  }
  index.emplace(name, entries.size());
  entries.push_back(Entry{std::move(name), std::move(tensor), trainable});
}

template <typename F>
const Tensor<F>& ModelParams<F>::at(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) {
    throw Error("unknown parameter: " + name);
  }
  return entries[it->second].tensor;
}

template <typename F>
Tensor<F>& ModelParams<F>::at(const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) {
    throw Error("unknown parameter: " + name);
  }
  return entries[it->second].tensor;
}

template <typename F>
int64_t ModelParams<F>::value_count() const {
  int64_t n = 0;
  for (const auto& e : entries) n += e.tensor.size();
  return n;
}

template <typename F>
int64_t ModelParams<F>::trainable_count() const {
  int64_t n = 0;
  for (const auto& e : entries) {
    if (e.trainable) n += e.tensor.size();
  }
  return n;
}

namespace {

void emit_conv(std::vector<ParamSpec>& specs, const std::string& prefix,
               int64_t cin, int64_t cout, int64_t k) {
  specs.push_back({prefix + ".w", Shape{cout, cin, k, k, k}, true,
                   ParamInit::kHeNormal, cin * k * k * k});
  specs.push_back({prefix + ".b", Shape{cout}, true, ParamInit::kZeros, 0});
}

void emit_norm(std::vector<ParamSpec>& specs, const std::string& prefix,
               int64_t channels) {
  specs.push_back({prefix + ".gamma", Shape{channels}, true, ParamInit::kOnes, 0});
  specs.push_back({prefix + ".beta", Shape{channels}, true, ParamInit::kZeros, 0});
  specs.push_back({prefix + ".running_mean", Shape{channels}, false,
                   ParamInit::kZeros, 0});
  specs.push_back({prefix + ".running_var", Shape{channels}, false,
                   ParamInit::kOnes, 0});
}

void emit_unit(std::vector<ParamSpec>& specs, const std::string& prefix,
               int64_t in_ch, int64_t out_ch, int64_t stride, Norm norm) {
  if (norm == Norm::kBatch) emit_norm(specs, prefix + ".norm1", in_ch);
  emit_conv(specs, prefix + ".conv1", in_ch, out_ch, 3);
  if (norm == Norm::kBatch) emit_norm(specs, prefix + ".norm2", out_ch);
  emit_conv(specs, prefix + ".conv2", out_ch, out_ch, 3);
  if (in_ch != out_ch || stride != 1) {
    emit_conv(specs, prefix + ".shortcut", in_ch, out_ch, 1);
  }
}

// Transposed convolution weight (Cin, Cout, k, k, k) with k == stride; each
// output voxel sums over Cin inputs, so that is the fan-in.
void emit_upsample(std::vector<ParamSpec>& specs, const std::string& prefix,
                   int64_t cin, int64_t cout) {
  specs.push_back({prefix + ".w", Shape{cin, cout, 2, 2, 2}, true,
                   ParamInit::kHeNormal, cin});
}

struct UnitPlan {
  std::string prefix;
  int64_t in_ch, out_ch, stride;
};

std::vector<UnitPlan> encoder_plan(const ModelConfig& cfg) {
  std::vector<UnitPlan> plan;
  int64_t ch = cfg.base_filters;
  for (int s = 0; s < cfg.num_scales; ++s) {
    const int64_t scale_ch = int64_t(cfg.base_filters) << s;
    for (int u = 0; u < cfg.units_per_scale; ++u) {
      const int64_t stride = (s > 0 && u == 0) ? 2 : 1;
      plan.push_back({"enc" + std::to_string(s) + ".unit" + std::to_string(u),
                      ch, scale_ch, stride});
      ch = scale_ch;
    }
  }
  return plan;
}

}  // namespace

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  emit_conv(specs, "stem", 1, cfg.base_filters, 3);
  for (const auto& unit : encoder_plan(cfg)) {
    emit_unit(specs, unit.prefix, unit.in_ch, unit.out_ch, unit.stride,
              cfg.norm);
  }
  const int64_t top_ch = int64_t(cfg.base_filters) << (cfg.num_scales - 1);
  if (cfg.arch == Arch::kUNet) {
    int64_t ch = top_ch;
    for (int s = cfg.num_scales - 1; s >= 1; --s) {
      const std::string prefix = "dec" + std::to_string(s);
      emit_upsample(specs, prefix + ".up", ch, ch / 2);
      // Concatenated with the encoder feature at scale s-1 (ch/2 channels).
      emit_unit(specs, prefix + ".unit", ch, ch / 2, 1, cfg.norm);
      ch /= 2;
    }
    emit_conv(specs, "head", cfg.base_filters, cfg.num_classes, 1);
  } else {
    for (int s = 0; s < cfg.num_scales; ++s) {
      emit_conv(specs, "score" + std::to_string(s),
                int64_t(cfg.base_filters) << s, cfg.num_classes, 1);
    }
    for (int s = cfg.num_scales - 1; s >= 1; --s) {
      emit_upsample(specs, "fup" + std::to_string(s), cfg.num_classes,
                    cfg.num_classes);
    }
  }
  return specs;
}

template <typename F>
ModelParams<F> build_params(const ModelConfig& cfg, Rng& rng) {
  ModelParams<F> params;
  for (const auto& spec : param_specs(cfg)) {
    Tensor<F> t;
    switch (spec.init) {
      case ParamInit::kZeros:
        t = Tensor<F>::zeros(spec.shape, spec.trainable);
        break;
      case ParamInit::kOnes:
        t = Tensor<F>::full(spec.shape, F(1), spec.trainable);
        break;
      case ParamInit::kHeNormal: {
        t = Tensor<F>::zeros(spec.shape, spec.trainable);
        const double std_dev =
            std::sqrt(2.0 / static_cast<double>(spec.fan_in));
        auto v = t.mutable_values();
        for (auto& value : v) {
          value = static_cast<F>(rng.normal() * std_dev);
        }
        break;
      }
    }
    params.add(spec.name, std::move(t), spec.trainable);
  }
  return params;
}

template <typename F>
Tensor<F> residual_unit(Tape<F>& tape, const Tensor<F>& x,
                        ModelParams<F>& params, const std::string& prefix,
                        int64_t in_ch, int64_t out_ch, int64_t stride,
                        Norm norm, ops::NormMode mode) {
  if (x.rank() != 5 || x.dim(1) != in_ch) {
    throw Error("residual_unit " + prefix + ": expected " +
                std::to_string(in_ch) + " input channels, got " +
                shape_str(x.shape()));
  }
  auto normed = [&](const Tensor<F>& t, const std::string& name) {
    if (norm == Norm::kNone) return t;
    return ops::batch_norm(tape, t, params.at(name + ".gamma"),
                           params.at(name + ".beta"),
                           params.at(name + ".running_mean"),
                           params.at(name + ".running_var"), mode);
  };
  Tensor<F> h = normed(x, prefix + ".norm1");
  h = ops::relu(tape, h);
  h = ops::conv3d(tape, h, params.at(prefix + ".conv1.w"),
                  params.at(prefix + ".conv1.b"), stride, ops::Padding::kSame);
  h = normed(h, prefix + ".norm2");
  h = ops::relu(tape, h);
  h = ops::conv3d(tape, h, params.at(prefix + ".conv2.w"),
                  params.at(prefix + ".conv2.b"), 1, ops::Padding::kSame);
  Tensor<F> shortcut = x;
  if (in_ch != out_ch || stride != 1) {
    shortcut = ops::conv3d(tape, x, params.at(prefix + ".shortcut.w"),
                           params.at(prefix + ".shortcut.b"), stride,
                           ops::Padding::kSame);
  }
  return ops::add(tape, h, shortcut);
}

namespace {

template <typename F>
void check_input(const Tensor<F>& x, const ModelConfig& cfg) {
  cfg.validate();
  if (x.rank() != 5 || x.dim(1) != 1) {
    throw Error("model input must be (N, 1, D, H, W), got " +
                shape_str(x.shape()));
  }
  for (int axis = 2; axis < 5; ++axis) {
    cfg.validate_patch(x.dim(axis));
  }
}

// Runs the shared encoder; returns the final feature of each scale.
template <typename F>
std::vector<Tensor<F>> encode(Tape<F>& tape, const Tensor<F>& x,
                              ModelParams<F>& params, const ModelConfig& cfg,
                              ops::NormMode mode) {
  Tensor<F> h = ops::conv3d(tape, x, params.at("stem.w"), params.at("stem.b"),
                            1, ops::Padding::kSame);
  std::vector<Tensor<F>> features(static_cast<size_t>(cfg.num_scales));
  int64_t ch = cfg.base_filters;
  for (int s = 0; s < cfg.num_scales; ++s) {
    const int64_t scale_ch = int64_t(cfg.base_filters) << s;
    for (int u = 0; u < cfg.units_per_scale; ++u) {
      const int64_t stride = (s > 0 && u == 0) ? 2 : 1;
      h = residual_unit(tape, h,
                        params, "enc" + std::to_string(s) + ".unit" +
                        std::to_string(u),
                        ch, scale_ch, stride, cfg.norm, mode);
      ch = scale_ch;
    }
    features[static_cast<size_t>(s)] = h;
  }
  return features;
}

}  // namespace

template <typename F>
Tensor<F> unet_forward(Tape<F>& tape, const Tensor<F>& x,
                       ModelParams<F>& params, const ModelConfig& cfg,
                       ops::NormMode mode) {
  check_input(x, cfg);
  auto features = encode(tape, x, params, cfg, mode);
  Tensor<F> h = features.back();
  int64_t ch = int64_t(cfg.base_filters) << (cfg.num_scales - 1);
  for (int s = cfg.num_scales - 1; s >= 1; --s) {
    const std::string prefix = "dec" + std::to_string(s);
    h = ops::transposed_conv3d(tape, h, params.at(prefix + ".up.w"), 2);
    h = ops::concat_channels(tape, h, features[static_cast<size_t>(s - 1)]);
    h = residual_unit(tape, h, params, prefix + ".unit", ch, ch / 2, 1,
                      cfg.norm, mode);
    ch /= 2;
  }
  return ops::conv3d(tape, h, params.at("head.w"), params.at("head.b"), 1,
                     ops::Padding::kSame);
}

template <typename F>
Tensor<F> fcn_forward(Tape<F>& tape, const Tensor<F>& x,
                      ModelParams<F>& params, const ModelConfig& cfg,
                      ops::NormMode mode) {
  check_input(x, cfg);
  auto features = encode(tape, x, params, cfg, mode);
  std::vector<Tensor<F>> scores(features.size());
  for (int s = 0; s < cfg.num_scales; ++s) {
    scores[static_cast<size_t>(s)] = ops::conv3d(
        tape, features[static_cast<size_t>(s)],
        params.at("score" + std::to_string(s) + ".w"),
        params.at("score" + std::to_string(s) + ".b"), 1, ops::Padding::kSame);
  }
  Tensor<F> h = scores.back();
  for (int s = cfg.num_scales - 1; s >= 1; --s) {
    h = ops::transposed_conv3d(tape, h,
                               params.at("fup" + std::to_string(s) + ".w"), 2);
    h = ops::add(tape, h, scores[static_cast<size_t>(s - 1)]);
  }
  return h;
}

template <typename F>
Tensor<F> model_forward(Tape<F>& tape, const Tensor<F>& x,
                        ModelParams<F>& params, const ModelConfig& cfg,
                        ops::NormMode mode) {
  return cfg.arch == Arch::kUNet ? unet_forward(tape, x, params, cfg, mode)
                                 : fcn_forward(tape, x, params, cfg, mode);
}

const char* arch_name(Arch a) { return a == Arch::kUNet ? "unet" : "fcn"; }

Arch parse_arch(const std::string& name) {
  if (name == "unet") return Arch::kUNet;
  if (name == "fcn") return Arch::kFcn;
  throw ConfigError("model.arch must be 'unet' or 'fcn', got '" + name + "'");
}

const char* norm_name(Norm n) { return n == Norm::kBatch ? "batch" : "none"; }

Norm parse_norm(const std::string& name) {
  if (name == "batch") return Norm::kBatch;
  if (name == "none") return Norm::kNone;
  throw ConfigError("model.norm must be 'batch' or 'none', got '" + name + "'");
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<float> build_params(const ModelConfig&, Rng&);
template ModelParams<double> build_params(const ModelConfig&, Rng&);
template Tensor<float> residual_unit(Tape<float>&, const Tensor<float>&,
                                     ModelParams<float>&, const std::string&,
                                     int64_t, int64_t, int64_t, Norm,
                                     ops::NormMode);
template Tensor<double> residual_unit(Tape<double>&, const Tensor<double>&,
                                      ModelParams<double>&, const std::string&,
                                      int64_t, int64_t, int64_t, Norm,
                                      ops::NormMode);
template Tensor<float> unet_forward(Tape<float>&, const Tensor<float>&,
                                    ModelParams<float>&, const ModelConfig&,
                                    ops::NormMode);
template Tensor<double> unet_forward(Tape<double>&, const Tensor<double>&,
                                     ModelParams<double>&, const ModelConfig&,
                                     ops::NormMode);
template Tensor<float> fcn_forward(Tape<float>&, const Tensor<float>&,
                                   ModelParams<float>&, const ModelConfig&,
                                   ops::NormMode);
template Tensor<double> fcn_forward(Tape<double>&, const Tensor<double>&,
                                    ModelParams<double>&, const ModelConfig&,
                                    ops::NormMode);
template Tensor<float> model_forward(Tape<float>&, const Tensor<float>&,
                                     ModelParams<float>&, const ModelConfig&,
                                     ops::NormMode);
template Tensor<double> model_forward(Tape<double>&, const Tensor<double>&,
                                      ModelParams<double>&, const ModelConfig&,
                                      ops::NormMode);

}  // namespace voxseg
