#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "voxseg/trainer.hpp"

namespace voxseg {

// The one JSON config surface: sections data, model, sampler, loss, train,
// infer. Every field has a default; unknown keys are rejected.
struct ExperimentConfig {
  std::filesystem::path train_manifest;
  std::filesystem::path val_manifest;
  NormalizationConfig normalization;
  ModelConfig model;
  SamplerConfig sampler;
  LossConfig loss;
  TrainHyper train;
  int64_t infer_stride = 0;  // 0 means patch_size / 2

  TrainOptions train_options() const;
  // Cross-section checks plus every sub-config's own validate().
  void validate() const;
};

// Reads the JSON file, applies dotted-path overrides ("train.seed=7"), and
// validates. Relative manifest paths resolve against the config file's
// directory. Throws ConfigError naming the offending field.
ExperimentConfig load_experiment_config(
    const std::filesystem::path& path,
    const std::vector<std::string>& overrides = {});

// Overrides applied to an in-memory config, same syntax as --set.
ExperimentConfig parse_experiment_config(
    const std::string& json_text, const std::vector<std::string>& overrides,
    const std::filesystem::path& base_dir);

struct GridArm {
  std::string name;
  Arch arch;
  LossKind loss;
  SamplerMode sampler;
};

// The fixed 12-arm grid: {unet,fcn} x {ce,balanced_ce,dice} x
// {uniform,class_balanced}, in that nesting order.
std::vector<GridArm> grid_arms();

struct GridArmResult {
  std::string name;
  bool ok = false;
  double best_val_dsc = -1.0;
  std::string error;
};

struct GridResult {
  std::vector<GridArmResult> arms;
  std::filesystem::path comparison_path;
  bool all_ok = false;
};

// Runs every arm with the base config's seeds so only the varied component
// differs, each arm in its own subdirectory. Subjects are loaded once and
// shared read-only; arms run on `jobs` worker threads. Writes
// comparison.csv (arm,best_val_mean_dsc) in arm order; a failed arm keeps
// its row with an empty value.
GridResult run_grid(const ExperimentConfig& config,
                    const std::filesystem::path& out_dir, int jobs = 1);

}  // namespace voxseg
