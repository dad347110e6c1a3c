#include "voxseg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "voxseg/inference.hpp"

namespace voxseg {

std::vector<SubjectMetrics> validate(ModelParams<float>& params,
                                     const ModelConfig& cfg,
                                     std::span<const Subject> subjects,
                                     int64_t patch, int64_t stride) {
  std::vector<SubjectMetrics> out;
  out.reserve(subjects.size());
  for (const Subject& subject : subjects) {
    if (!subject.has_label) {
      throw Error("validate: subject '" + subject.id + "' has no label");
    }
    const Volume probs =
        sliding_window_predict(subject.image, params, cfg, patch, stride);
    const LabelVolume pred = labels_from_probs(probs);
    const ConfusionCounts counts =
        confusion_counts(pred, subject.label, cfg.num_classes);
    out.push_back(per_class_metrics(counts, subject.id));
  }
  return out;
}

void write_history_csv(const std::filesystem::path& path,
                       std::span<const HistoryRow> history) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("write_history_csv: cannot open '" + path.string() + "'");
  }
  out << "step,train_loss,val_mean_dsc\n";
  char buf[64];
  for (const HistoryRow& row : history) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,",
                  static_cast<long long>(row.step), row.train_loss);
    out << buf;
    if (row.val_mean_dsc) {
      std::snprintf(buf, sizeof buf, "%.9g", *row.val_mean_dsc);
      out << buf;
    }
    out << '\n';
  }
  if (!out) {
    throw Error("write_history_csv: failed writing '" + path.string() + "'");
  }
}

namespace {

Checkpoint snapshot(const TrainOptions& options,
                    const ModelParams<float>& params,
                    const AdamState<float>& adam, int64_t step,
                    double val_dsc) {
  Checkpoint c;
  c.model = options.model;
  c.hyper = options.hyper;
  c.normalization = options.normalization;
  c.patch_size = options.sampler.patch_size;
  c.step = step;
  c.best_val_dsc = val_dsc;
  c.params = params;
  c.adam = adam;
  return c;
}

}  // namespace

TrainResult train_on_subjects(const TrainOptions& options,
                              std::span<const Subject> train_subjects,
                              std::span<const Subject> val_subjects,
                              const std::filesystem::path& out_dir) {
  options.model.validate();
  options.loss.validate();
  options.sampler.validate();
  options.hyper.validate();
  options.normalization.validate();
  options.model.validate_patch(options.sampler.patch_size);
  if (train_subjects.empty()) {
    throw Error("train: no training subjects");
  }
  if (options.infer_stride < 0 ||
      options.infer_stride > options.sampler.patch_size) {
    throw ConfigError("infer.stride must be in [1, patch_size], got " +
                      std::to_string(options.infer_stride));
  }
  const int64_t patch = options.sampler.patch_size;
  const int64_t stride =
      options.infer_stride == 0 ? patch / 2 : options.infer_stride;

  std::filesystem::create_directories(out_dir);
  TrainResult result;
  result.best_path = out_dir / "best.mckp";
  result.history_path = out_dir / "history.csv";

  Rng init_rng(options.hyper.seed);
  ModelParams<float> params = build_params<float>(options.model, init_rng);
  AdamState<float> adam = init_adam(params);

  const Rng data_rng(options.sampler.seed);
  auto batch_for_step = [&](int64_t step) {
    const Rng step_rng = data_rng.child(static_cast<uint64_t>(step));
    return make_batch(train_subjects, options.sampler,
                      options.hyper.batch_size, step_rng);
  };

  // Producer thread for async mode. Batches depend only on the step index,
  // so the consumed sequence matches the synchronous one.
  BoundedChannel<PatchBatch> channel(4);
  std::thread producer;
  if (options.async_producer) {
    producer = std::thread([&] {
      for (int64_t s = 1; s <= options.hyper.max_steps; ++s) {
        if (!channel.push(batch_for_step(s))) return;
      }
      channel.close();
    });
  }
  // Joins the producer on every exit path, including thrown errors.
  struct ProducerGuard {
    BoundedChannel<PatchBatch>& channel;
    std::thread& thread;
    ~ProducerGuard() {
      channel.close();
      if (thread.joinable()) thread.join();
    }
  } guard{channel, producer};

  double best_dsc = -1.0;
  bool saved_best = false;

  for (int64_t step = 1; step <= options.hyper.max_steps; ++step) {
    PatchBatch batch;
    if (options.async_producer) {
      auto popped = channel.pop();
      if (!popped) {
        throw Error("train: batch producer stopped early at step " +
                    std::to_string(step));
      }
      batch = std::move(*popped);
    } else {
      batch = batch_for_step(step);
    }

    for (auto& entry : params.entries) {
      if (entry.trainable) entry.tensor.zero_grad();
    }
    Tape<float> tape;
    const Tensor<float> logits = model_forward(
        tape, batch.images, params, options.model, ops::NormMode::kTrain);
    const Tensor<float> loss =
        evaluate_loss(tape, options.loss, logits, batch.labels);
    const double loss_value = static_cast<double>(loss.item());
    if (!std::isfinite(loss_value)) {
      throw Error("train: non-finite loss at step " + std::to_string(step));
    }
    tape.backward(loss);
    adam_step(params, adam, options.hyper);

    HistoryRow row{step, loss_value, std::nullopt};
    if (options.hyper.val_every > 0 && step % options.hyper.val_every == 0 &&
        !val_subjects.empty()) {
      const std::vector<SubjectMetrics> metrics =
          validate(params, options.model, val_subjects, patch, stride);
      const double dsc = mean_foreground_dsc(metrics);
      row.val_mean_dsc = dsc;
      if (dsc > best_dsc) {
        best_dsc = dsc;
        save_checkpoint(result.best_path,
                        snapshot(options, params, adam, step, dsc));
        saved_best = true;
      }
    }
    result.history.push_back(row);
    if (options.on_step) options.on_step(row);
    if (row.val_mean_dsc && options.stop_at_val_dsc >= 0.0 &&
        *row.val_mean_dsc >= options.stop_at_val_dsc) {
      break;
    }
  }

  const int64_t last_step =
      result.history.empty() ? 0 : result.history.back().step;
  const double last_dsc = (!result.history.empty() &&
                           result.history.back().val_mean_dsc)
                              ? *result.history.back().val_mean_dsc
                              : -1.0;
  save_checkpoint(out_dir / "last.mckp",
                  snapshot(options, params, adam, last_step, last_dsc));
  if (!saved_best) {
    save_checkpoint(result.best_path,
                    snapshot(options, params, adam, last_step, -1.0));
  }
  write_history_csv(result.history_path, result.history);
  result.best = load_checkpoint(result.best_path);
  return result;
}

TrainResult train(const TrainOptions& options,
                  const std::filesystem::path& train_manifest,
                  const std::filesystem::path& val_manifest,
                  const std::filesystem::path& out_dir) {
  const std::vector<Subject> train_subjects = load_subjects(
      read_manifest(train_manifest), options.normalization, true);
  const std::vector<Subject> val_subjects = load_subjects(
      read_manifest(val_manifest), options.normalization, true);
  return train_on_subjects(options, train_subjects, val_subjects, out_dir);
}

}  // namespace voxseg
