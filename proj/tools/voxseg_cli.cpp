#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "voxseg/experiment.hpp"
#include "voxseg/gradcheck.hpp"
#include "voxseg/inference.hpp"
#include "voxseg/phantom.hpp"
#include "voxseg/trainer.hpp"

namespace {

using namespace voxseg;

int cmd_train(const std::string& config_path,
              const std::vector<std::string>& sets, const std::string& out,
              bool async_producer) {
  ExperimentConfig config = load_experiment_config(config_path, sets);
  TrainOptions options = config.train_options();
  options.async_producer = async_producer;
  options.on_step = [](const HistoryRow& row) {
    if (row.val_mean_dsc) {
      std::printf("step %lld  train_loss %.6f  val_mean_dsc %.6f\n",
                  static_cast<long long>(row.step), row.train_loss,
                  *row.val_mean_dsc);
      std::fflush(stdout);
    }
  };
  const TrainResult result =
      train(options, config.train_manifest, config.val_manifest, out);
  std::printf("best checkpoint: %s (step %lld, val_mean_dsc %.6f)\n",
              result.best_path.string().c_str(),
              static_cast<long long>(result.best.step),
              result.best.best_val_dsc);
  std::printf("history: %s\n", result.history_path.string().c_str());
  return 0;
}

int cmd_predict(const std::string& checkpoint_path, const std::string& input,
                const std::string& output, int64_t stride, bool probs) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Volume raw = read_image(input);
  if (raw.channels != 1) {
    throw ConfigError("input must be single-channel, got " +
                      std::to_string(raw.channels) + " channels");
  }
  if (stride < 0 || stride > ckpt.patch_size) {
    throw ConfigError("--stride must be in [1, " +
                      std::to_string(ckpt.patch_size) + "], got " +
                      std::to_string(stride));
  }
  const int64_t effective_stride = stride == 0 ? ckpt.patch_size / 2 : stride;
  const Volume normalized = normalize_intensity(raw, ckpt.normalization);
  const Volume probability = sliding_window_predict(
      normalized, ckpt.params, ckpt.model, ckpt.patch_size, effective_stride);
  if (probs) {
    write_volume(output, probability);
  } else {
    write_volume(output, labels_from_probs(probability));
  }
  std::printf("wrote %s\n", output.c_str());
  return 0;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& manifest_path,
                 const std::string& out_dir) {
  const Manifest manifest = read_manifest(manifest_path);
  if (manifest.records.empty()) {
    throw Error("manifest has no records: " + manifest_path);
  }

  std::vector<std::string> missing;
  for (const auto& record : manifest.records) {
    const auto pred_path =
        std::filesystem::path(pred_dir) / (record.id + ".mvol");
    if (!std::filesystem::exists(pred_path)) {
      missing.push_back(record.id);
    }
  }
  if (!missing.empty()) {
    std::string message = "missing predictions for:";
    for (const auto& id : missing) message += " " + id;
    throw Error(message);
  }

  struct Pair {
    std::string id;
    LabelVolume truth;
    LabelVolume pred;
  };
  std::vector<Pair> pairs;
  int num_classes = 2;
  for (const auto& record : manifest.records) {
    Pair pair;
    pair.id = record.id;
    if (record.label.empty()) {
      throw Error("manifest row '" + record.id + "' has no label column");
    }
    pair.truth = read_label(record.label);
    pair.pred = read_label(std::filesystem::path(pred_dir) /
                           (record.id + ".mvol"));
    if (pair.truth.dims != pair.pred.dims) {
      throw Error("subject '" + record.id +
                  "': prediction dims do not match truth dims");
    }
    for (const uint8_t v : pair.truth.values) {
      num_classes = std::max(num_classes, static_cast<int>(v) + 1);
    }
    for (const uint8_t v : pair.pred.values) {
      num_classes = std::max(num_classes, static_cast<int>(v) + 1);
    }
    pairs.push_back(std::move(pair));
  }

  std::vector<SubjectMetrics> subjects;
  for (const auto& pair : pairs) {
    subjects.push_back(per_class_metrics(
        confusion_counts(pair.pred, pair.truth, num_classes), pair.id));
  }
  const AggregateStats stats = aggregate_stats(subjects, num_classes);
  emit_report(stats, subjects, out_dir);
  std::printf("mean foreground DSC over subjects: %.6f\n",
              mean_foreground_dsc(subjects));
  std::printf("mean foreground DSC over classes:  %.6f\n",
              mean_foreground_dsc_by_class(subjects));
  std::printf("wrote %s and %s\n",
              (std::filesystem::path(out_dir) / "metrics_subjects.csv")
                  .string()
                  .c_str(),
              (std::filesystem::path(out_dir) / "metrics_summary.csv")
                  .string()
                  .c_str());
  return 0;
}

int cmd_grid(const std::string& config_path,
             const std::vector<std::string>& sets, const std::string& out,
             int jobs) {
  const ExperimentConfig config = load_experiment_config(config_path, sets);
  const GridResult result = run_grid(config, out, jobs);
  for (const auto& arm : result.arms) {
    if (arm.ok) {
      std::printf("%-32s best_val_mean_dsc %.6f\n", arm.name.c_str(),
                  arm.best_val_dsc);
    } else {
      std::printf("%-32s FAILED: %s\n", arm.name.c_str(), arm.error.c_str());
    }
  }
  std::printf("comparison: %s\n", result.comparison_path.string().c_str());
  return result.all_ok ? 0 : 1;
}

int cmd_gradcheck(uint64_t seed) {
  const double tolerance = 1e-4;
  const auto items = run_gradcheck_suite(seed, tolerance);
  int failures = 0;
  for (const auto& item : items) {
    std::printf("%-40s max_rel_err %.3e  %s\n", item.name.c_str(),
                item.max_rel_err, item.pass ? "PASS" : "FAIL");
    failures += item.pass ? 0 : 1;
  }
  std::printf("%zu checks, %d failures, tolerance %.1e\n", items.size(),
              failures, tolerance);
  return failures == 0 ? 0 : 1;
}

int cmd_phantom(const std::string& out, int64_t n_train, int64_t n_val,
                uint64_t seed, int64_t dim, int classes, double noise) {
  PhantomSpec spec = PhantomSpec::defaults(classes);
  spec.dims = {dim, dim, dim};
  spec.seed = seed;
  spec.noise_std = noise;
  const DatasetPaths paths = generate_dataset(spec, n_train, n_val, out);
  std::printf("wrote %s and %s\n", paths.train_manifest.string().c_str(),
              paths.val_manifest.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D volumetric segmentation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out, checkpoint_path, input, output, pred_dir,
      manifest_path;
  std::vector<std::string> sets;
  bool async_producer = false;
  bool probs = false;
  int64_t stride = 0;
  int jobs = 1;
  uint64_t seed = 1;
  int64_t n_train = 4, n_val = 2, dim = 64;
  int classes = 3;
  double noise = 0.05;

  CLI::App* train = app.add_subcommand("train", "Train a model from a config");
  train->add_option("--config", config_path, "Experiment config JSON")
      ->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--set", sets,
                    "Override a config field, e.g. --set train.seed=7");
  train->add_flag("--async", async_producer,
                  "Sample batches on a producer thread");

  CLI::App* predict =
      app.add_subcommand("predict", "Segment a volume with a checkpoint");
  predict->add_option("--checkpoint", checkpoint_path, "Checkpoint file")
      ->required();
  predict->add_option("--input", input, "Input image MVOL")->required();
  predict->add_option("--output", output, "Output MVOL path")->required();
  predict->add_option("--stride", stride,
                      "Tile stride, default patch_size / 2");
  predict->add_flag("--probs", probs,
                    "Write class probabilities instead of labels");

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "Score predictions against a manifest");
  evaluate->add_option("--pred-dir", pred_dir, "Directory with <id>.mvol")
      ->required();
  evaluate->add_option("--manifest", manifest_path, "Manifest with labels")
      ->required();
  evaluate->add_option("--out", out, "Output directory for the CSVs")
      ->required();

  CLI::App* grid =
      app.add_subcommand("grid", "Run the 12-arm architecture/loss/sampler grid");
  grid->add_option("--config", config_path, "Base experiment config JSON")
      ->required();
  grid->add_option("--out", out, "Output directory")->required();
  grid->add_option("--set", sets, "Override a config field");
  grid->add_option("--jobs", jobs, "Concurrent arms");

  CLI::App* gradcheck =
      app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--seed", seed, "Suite seed");

  CLI::App* phantom =
      app.add_subcommand("phantom", "Generate a synthetic labeled dataset");
  phantom->add_option("--out", out, "Output directory")->required();
  phantom->add_option("--n-train", n_train, "Training subjects");
  phantom->add_option("--n-val", n_val, "Validation subjects");
  phantom->add_option("--seed", seed, "Master seed");
  phantom->add_option("--dim", dim, "Cubic volume side length");
  phantom->add_option("--classes", classes, "Foreground classes");
  phantom->add_option("--noise", noise, "Background noise std");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(config_path, sets, out, async_producer);
    if (predict->parsed())
      return cmd_predict(checkpoint_path, input, output, stride, probs);
    if (evaluate->parsed()) return cmd_evaluate(pred_dir, manifest_path, out);
    if (grid->parsed()) return cmd_grid(config_path, sets, out, jobs);
    if (gradcheck->parsed()) return cmd_gradcheck(seed);
    if (phantom->parsed())
      return cmd_phantom(out, n_train, n_val, seed, dim, classes, noise);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
