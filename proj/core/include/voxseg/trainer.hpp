#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "voxseg/checkpoint.hpp"
#include "voxseg/loss.hpp"
#include "voxseg/metrics.hpp"
#include "voxseg/model.hpp"
#include "voxseg/optim.hpp"
#include "voxseg/sampling.hpp"

namespace voxseg {

struct HistoryRow {
  int64_t step = 0;
  double train_loss = 0.0;
  std::optional<double> val_mean_dsc;
};

struct TrainOptions {
  ModelConfig model;
  LossConfig loss;
  SamplerConfig sampler;
  TrainHyper hyper;
  NormalizationConfig normalization;
  int64_t infer_stride = 0;  // 0 means patch_size / 2
  // When set, batches come from a producer thread through a bounded channel.
  // Batches are a pure function of the step index, so the history is
  // identical either way.
  bool async_producer = false;
  // Ends training after the first validation reaching this mean DSC.
  // Negative disables. Used by harnesses to bound convergence runs; not part
  // of the experiment config surface.
  double stop_at_val_dsc = -1.0;
  std::function<void(const HistoryRow&)> on_step;
};

struct TrainResult {
  Checkpoint best;
  std::vector<HistoryRow> history;
  std::filesystem::path best_path;
  std::filesystem::path history_path;
};

// Sliding-window prediction over each labeled subject, scored with
// per-class confusion metrics.
std::vector<SubjectMetrics> validate(ModelParams<float>& params,
                                     const ModelConfig& cfg,
                                     std::span<const Subject> subjects,
                                     int64_t patch, int64_t stride);

// CSV `step,train_loss,val_mean_dsc`, the last column empty on steps
// without validation.
void write_history_csv(const std::filesystem::path& path,
                       std::span<const HistoryRow> history);

// Full loop: per step sample a batch, forward, loss, backward, adam update;
// every val_every steps validate and keep the best checkpoint by mean
// foreground DSC. Writes best.mckp, last.mckp and history.csv under out_dir.
// Deterministic for fixed seeds.
TrainResult train_on_subjects(const TrainOptions& options,
                              std::span<const Subject> train_subjects,
                              std::span<const Subject> val_subjects,
                              const std::filesystem::path& out_dir);

TrainResult train(const TrainOptions& options,
                  const std::filesystem::path& train_manifest,
                  const std::filesystem::path& val_manifest,
                  const std::filesystem::path& out_dir);

}  // namespace voxseg
