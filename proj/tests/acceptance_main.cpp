// Acceptance suite. Each criterion prints exactly one PASS or FAIL line;
// the process exits nonzero if any requested criterion fails.
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <voxseg/experiment.hpp>
#include <voxseg/gradcheck.hpp>
#include <voxseg/inference.hpp>
#include <voxseg/phantom.hpp>

namespace {

using namespace voxseg;

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& detail) {
  if (!ok) throw Failure(detail);
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir =
      std::filesystem::temp_directory_path() / "voxseg_acceptance" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

bool files_equal(const std::filesystem::path& a,
                 const std::filesystem::path& b) {
  return read_file(a) == read_file(b);
}

std::string format(const char* fmt, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return std::string(buf);
}

// ---------------------------------------------------------------------------
// 1. Finite-difference gradients for every op, the residual unit, micro
//    models, and all three losses, at 64-bit with tolerance 1e-4.

std::string criterion_1() {
  const auto items = run_gradcheck_suite(1, 1e-4);
  require(!items.empty(), "gradient suite produced no checks");
  int failures = 0;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& item : items) {
    if (!item.pass) ++failures;
    if (item.max_rel_err > worst) {
      worst = item.max_rel_err;
      worst_name = item.name;
    }
  }
  for (const char* prefix :
       {"conv3d_s1_same.", "transposed_conv3d_s2.", "batch_norm_train.",
        "softmax_channels.", "residual_unit_s1.", "unet_micro.", "fcn_micro.",
        "loss_ce.", "loss_balanced_ce.", "loss_dice."}) {
    bool found = false;
    for (const auto& item : items) {
      if (item.name.rfind(prefix, 0) == 0) {
        found = true;
        break;
      }
    }
    require(found, std::string("suite is missing checks for ") + prefix);
  }
  require(failures == 0,
          format("%d of %zu checks exceeded 1e-4, worst %s at %.3e", failures,
                 items.size(), worst_name.c_str(), worst));
  return format("%zu gradient checks under 1e-4, worst %s at %.3e",
                items.size(), worst_name.c_str(), worst);
}

// ---------------------------------------------------------------------------
// 2. Five optimizer steps on a 3-parameter toy against an independently
//    computed trace, 64-bit, agreement to 1e-12, epsilon-after-sqrt 1e-5.

std::string criterion_2() {
  const std::array<double, 3> curvature{1.0, 0.5, 2.0};
  const std::array<double, 3> target{-0.3, 0.7, 1.1};
  const std::array<double, 3> start{0.5, -1.25, 2.0};

  TrainHyper hyper;
  hyper.learning_rate = 1e-3;
  hyper.beta1 = 0.9;
  hyper.beta2 = 0.999;
  hyper.epsilon = 1e-5;

  ModelParams<double> params;
  params.add("p", Tensor<double>::from_values(
                      {3}, std::vector<double>(start.begin(), start.end())),
             true);
  AdamState<double> state = init_adam(params);

  // Reference trace, written straight from the update rule with explicit
  // bias-corrected moments.
  std::array<double, 3> p = start;
  std::array<double, 3> m{0.0, 0.0, 0.0};
  std::array<double, 3> v{0.0, 0.0, 0.0};

  double max_diff = 0.0;
  for (int step = 1; step <= 5; ++step) {
    Tensor<double>& tensor = params.at("p");
    std::span<double> grad = tensor.grad_buffer();
    for (size_t i = 0; i < 3; ++i) {
      grad[i] = 2.0 * curvature[i] * (tensor.values()[i] - target[i]);
    }
    adam_step(params, state, hyper);

    for (size_t i = 0; i < 3; ++i) {
      const double g = 2.0 * curvature[i] * (p[i] - target[i]);
      m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
      v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
      const double m_hat = m[i] / (1.0 - std::pow(hyper.beta1, step));
      const double v_hat = v[i] / (1.0 - std::pow(hyper.beta2, step));
      p[i] -= hyper.learning_rate * m_hat /
              (std::sqrt(v_hat) + hyper.epsilon);
      const double diff = std::abs(p[i] - tensor.values()[i]);
      max_diff = std::max(max_diff, diff);
      require(diff <= 1e-12,
              format("step %d parameter %zu deviates by %.3e", step, i, diff));
    }
  }
  require(state.t == 5, "optimizer step counter is not 5");
  return format("5-step trace matches to %.1e (max deviation %.3e)", 1e-12,
                max_diff);
}

// ---------------------------------------------------------------------------
// 3. Class-balanced training reaches mean foreground validation DSC >= 0.90
//    on the phantom corpus within 500 steps; uniform sampling on the same
//    seeds and the same step budget does not beat it.

std::string criterion_3() {
  const auto dir = scratch("criterion3");
  PhantomSpec spec = PhantomSpec::defaults(3);
  const DatasetPaths data = generate_dataset(spec, 4, 2, dir / "data");

  TrainOptions options;
  options.model.num_classes = 4;
  options.model.base_filters = 16;
  options.model.num_scales = 2;
  options.model.arch = Arch::kUNet;
  options.model.norm = Norm::kBatch;
  options.sampler.patch_size = 16;
  options.sampler.mode = SamplerMode::kClassBalanced;
  options.sampler.seed = 3;
  options.loss.kind = LossKind::kCrossEntropy;
  options.hyper.learning_rate = 2e-3;
  options.hyper.max_steps = 500;
  options.hyper.batch_size = 4;
  options.hyper.val_every = 50;
  options.hyper.seed = 5;
  options.infer_stride = 8;
  options.stop_at_val_dsc = 0.90;

  const TrainResult balanced =
      train(options, data.train_manifest, data.val_manifest, dir / "balanced");
  const double balanced_dsc = balanced.best.best_val_dsc;
  const int64_t steps_used = balanced.history.back().step;
  require(balanced_dsc >= 0.90,
          format("class-balanced run reached only %.4f in %lld steps",
                 balanced_dsc, static_cast<long long>(steps_used)));

  TrainOptions uniform = options;
  uniform.sampler.mode = SamplerMode::kUniform;
  uniform.stop_at_val_dsc = -1.0;
  uniform.hyper.max_steps = steps_used;  // the budget balanced actually used
  const TrainResult plain =
      train(uniform, data.train_manifest, data.val_manifest, dir / "uniform");
  const double uniform_dsc = plain.best.best_val_dsc;
  require(uniform_dsc <= balanced_dsc,
          format("uniform sampling scored %.4f, above balanced %.4f",
                 uniform_dsc, balanced_dsc));
  return format("balanced %.4f in %lld steps, uniform %.4f on that budget",
                balanced_dsc, static_cast<long long>(steps_used), uniform_dsc);
}

// ---------------------------------------------------------------------------
// 4. Sliding-window inference is shape invariant, matches a direct forward
//    pass on a single tile, yields normalized probabilities, and the tile
//    planner covers every voxel for random geometry.

std::string criterion_4() {
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.base_filters = 2;
  cfg.num_scales = 2;
  cfg.arch = Arch::kUNet;
  cfg.norm = Norm::kBatch;
  Rng init(101);
  auto params = build_params<float>(cfg, init);

  // (a) dims preserved and (c) probabilities normalized, over 20 random
  // shapes in [8, 140]^3 with several axes below the 64 patch.
  Rng rng(202);
  int sub_patch_axes = 0;
  for (int trial = 0; trial < 20; ++trial) {
    std::array<int64_t, 3> dims;
    for (auto& d : dims) d = 8 + static_cast<int64_t>(rng.uniform_int(133));
    Volume v;
    v.dims = dims;
    v.values.resize(static_cast<size_t>(v.voxels()));
    for (auto& x : v.values) x = static_cast<float>(rng.normal());

    const Volume probs = sliding_window_predict(v, params, cfg, 64, 32);
    require(probs.dims == dims,
            format("dims changed for shape %lld,%lld,%lld",
                   static_cast<long long>(dims[0]),
                   static_cast<long long>(dims[1]),
                   static_cast<long long>(dims[2])));
    require(probs.channels == 3, "channel count is not num_classes");
    const int64_t voxels = probs.voxels();
    for (int64_t i = 0; i < voxels; ++i) {
      double sum = 0.0;
      for (int64_t c = 0; c < 3; ++c) {
        sum += probs.values[static_cast<size_t>(c * voxels + i)];
      }
      require(std::abs(sum - 1.0) <= 1e-5,
              format("probability sum %.8f at voxel %lld", sum,
                     static_cast<long long>(i)));
    }
    for (const int64_t d : dims) sub_patch_axes += d < 64 ? 1 : 0;
  }
  require(sub_patch_axes > 0, "no sampled axis fell below the patch size");

  // (b) a volume equal to one tile reproduces the direct forward pass.
  Volume tile;
  tile.dims = {64, 64, 64};
  tile.values.resize(static_cast<size_t>(tile.voxels()));
  for (auto& x : tile.values) x = static_cast<float>(rng.normal());
  const Volume windowed = sliding_window_predict(tile, params, cfg, 64, 32);

  Tape<float> tape;
  tape.set_recording(false);
  std::vector<float> values(tile.values);
  const auto x =
      Tensor<float>::from_values({1, 1, 64, 64, 64}, std::move(values));
  const auto logits =
      model_forward(tape, x, params, cfg, ops::NormMode::kInfer);
  const auto direct = ops::softmax_channels(tape, logits);
  double max_gap = 0.0;
  for (int64_t i = 0; i < direct.size(); ++i) {
    max_gap = std::max(
        max_gap, static_cast<double>(std::abs(
                     windowed.values[static_cast<size_t>(i)] -
                     direct.values()[i])));
  }
  require(max_gap <= 1e-6,
          format("single-tile window deviates from direct forward by %.3e",
                 max_gap));

  // (d) planner coverage on random dims and strides.
  Rng geometry(303);
  for (int trial = 0; trial < 1000; ++trial) {
    std::array<int64_t, 3> dims;
    for (auto& d : dims) d = 1 + static_cast<int64_t>(geometry.uniform_int(140));
    const int64_t patch = 8 + static_cast<int64_t>(geometry.uniform_int(57));
    const int64_t stride = 1 + static_cast<int64_t>(geometry.uniform_int(patch));
    const TilePlan plan = plan_tiles(dims, patch, stride);
    for (int axis = 0; axis < 3; ++axis) {
      const auto& starts = plan.starts[static_cast<size_t>(axis)];
      const int64_t padded = plan.padded_dims[static_cast<size_t>(axis)];
      require(!starts.empty() && starts.front() == 0 &&
                  starts.back() == padded - patch,
              "tile plan does not span the padded axis");
      int64_t covered_to = 0;
      for (const int64_t s : starts) {
        require(s <= covered_to, "gap between tiles");
        covered_to = std::max(covered_to, s + patch);
      }
      require(covered_to == padded, "tiles stop before the axis ends");
      require(padded ==
                  plan.pad_lo[static_cast<size_t>(axis)] +
                      dims[static_cast<size_t>(axis)] +
                      plan.pad_hi[static_cast<size_t>(axis)],
              "padding bookkeeping mismatch");
    }
  }
  return format("20 shapes preserved with |sum-1| <= 1e-5, single tile within "
                "%.1e, 1000 plans cover",
                1e-6);
}

// ---------------------------------------------------------------------------
// 5. Sampling distributions on a phantom that is at least 95% background:
//    class-balanced center classes are uniform within 2%, uniform centers
//    match the voxel frequencies within 2%.

std::string criterion_5() {
  PhantomSpec spec = PhantomSpec::defaults(3);
  for (auto& shape : spec.classes) {
    shape.size_lo = 4;
    shape.size_hi = 6;
  }
  Rng gen(1);
  const auto [image, label] = generate_phantom(spec, gen);

  const int64_t voxels = label.voxels();
  std::array<int64_t, 4> voxel_counts{0, 0, 0, 0};
  for (const uint8_t v : label.values) ++voxel_counts[v];
  const double background =
      static_cast<double>(voxel_counts[0]) / static_cast<double>(voxels);
  require(background >= 0.95,
          format("phantom background fraction %.4f is below 0.95", background));

  const ClassIndex index = build_class_index(label);
  const int draws = 10000;

  Rng balanced_rng(42);
  std::array<int64_t, 4> balanced_counts{0, 0, 0, 0};
  for (int i = 0; i < draws; ++i) {
    const Coord c = sample_center_class_balanced(label, index, balanced_rng);
    ++balanced_counts[label.at(c.z, c.y, c.x)];
  }
  for (int c = 0; c < 4; ++c) {
    const double freq =
        static_cast<double>(balanced_counts[static_cast<size_t>(c)]) / draws;
    require(std::abs(freq - 0.25) <= 0.02,
            format("class-balanced frequency of class %d is %.4f", c, freq));
  }

  Rng uniform_rng(43);
  std::array<int64_t, 4> uniform_counts{0, 0, 0, 0};
  for (int i = 0; i < draws; ++i) {
    const Coord c = sample_center_uniform(label.dims, uniform_rng);
    ++uniform_counts[label.at(c.z, c.y, c.x)];
  }
  double worst_gap = 0.0;
  for (int c = 0; c < 4; ++c) {
    const double freq =
        static_cast<double>(uniform_counts[static_cast<size_t>(c)]) / draws;
    const double expect =
        static_cast<double>(voxel_counts[static_cast<size_t>(c)]) /
        static_cast<double>(voxels);
    worst_gap = std::max(worst_gap, std::abs(freq - expect));
    require(std::abs(freq - expect) <= 0.02,
            format("uniform frequency of class %d is %.4f, expected %.4f", c,
                   freq, expect));
  }
  return format("background %.3f, balanced within 2%% of 0.25, uniform within "
                "%.4f of voxel frequencies",
                background, worst_gap);
}

// ---------------------------------------------------------------------------
// 6. Confusion metrics equal a brute-force recount on random label pairs,
//    plus the fixed TP=3 FP=3 FN=1 oracle.

std::string criterion_6() {
  Rng rng(7);
  const int num_classes = 3;
  for (int trial = 0; trial < 200; ++trial) {
    LabelVolume truth, pred;
    truth.dims = pred.dims = {4, 4, 4};
    truth.values.resize(64);
    pred.values.resize(64);
    for (auto& v : truth.values) {
      v = static_cast<uint8_t>(rng.uniform_int(num_classes));
    }
    for (auto& v : pred.values) {
      v = static_cast<uint8_t>(rng.uniform_int(num_classes));
    }

    const SubjectMetrics fast = per_class_metrics(
        confusion_counts(pred, truth, num_classes), "subject");
    for (int c = 0; c < num_classes; ++c) {
      int64_t tp = 0, fp = 0, fn = 0;
      for (size_t i = 0; i < truth.values.size(); ++i) {
        const bool in_truth = truth.values[i] == c;
        const bool in_pred = pred.values[i] == c;
        tp += in_truth && in_pred;
        fp += !in_truth && in_pred;
        fn += in_truth && !in_pred;
      }
      const ClassMetrics& got = fast.classes[static_cast<size_t>(c)];
      require(got.present_in_truth == (tp + fn > 0), "presence flag differs");
      require(got.dsc.defined == (2 * tp + fp + fn > 0), "dsc defined differs");
      require(got.recall.defined == (tp + fn > 0), "recall defined differs");
      require(got.precision.defined == (tp + fp > 0),
              "precision defined differs");
      if (got.dsc.defined) {
        const double want = 2.0 * static_cast<double>(tp) /
                            static_cast<double>(2 * tp + fp + fn);
        require(std::abs(got.dsc.value - want) <= 1e-12, "dsc value differs");
      }
      if (got.recall.defined) {
        const double want =
            static_cast<double>(tp) / static_cast<double>(tp + fn);
        require(std::abs(got.recall.value - want) <= 1e-12,
                "recall value differs");
      }
      if (got.precision.defined) {
        const double want =
            static_cast<double>(tp) / static_cast<double>(tp + fp);
        require(std::abs(got.precision.value - want) <= 1e-12,
                "precision value differs");
      }
    }
  }

  // Fixture: TP=3, FP=3, FN=1 for class 1 on a 2x2x2 volume.
  LabelVolume truth, pred;
  truth.dims = pred.dims = {2, 2, 2};
  truth.values = {1, 1, 1, 1, 0, 0, 0, 0};
  pred.values = {1, 1, 1, 0, 1, 1, 1, 0};
  const SubjectMetrics fixture =
      per_class_metrics(confusion_counts(pred, truth, 2), "fixture");
  const ClassMetrics& one = fixture.classes[1];
  require(one.dsc.defined && one.dsc.value == 0.6, "fixture DSC is not 0.6");
  require(one.precision.defined && one.precision.value == 0.5,
          "fixture precision is not 0.5");
  require(one.recall.defined && one.recall.value == 0.75,
          "fixture recall is not 0.75");
  return "200 random volumes match brute force at 1e-12; fixture gives "
         "0.6/0.5/0.75";
}

// ---------------------------------------------------------------------------
// 7. Persistence: MVOL and checkpoint round trips are bit-exact, payload
//    corruption is caught by the checkpoint checksum, and fixed seeds give
//    byte-identical history and report CSVs.

std::string criterion_7() {
  const auto dir = scratch("criterion7");

  // MVOL image and label round trips.
  Rng rng(5);
  Volume image;
  image.dims = {6, 5, 4};
  image.channels = 2;
  image.spacing = {1.5, 0.8, 0.8};
  image.values.resize(static_cast<size_t>(image.channels * image.voxels()));
  for (auto& v : image.values) v = static_cast<float>(rng.normal());
  write_volume(dir / "image_a.mvol", image);
  const Volume image_back = read_image(dir / "image_a.mvol");
  write_volume(dir / "image_b.mvol", image_back);
  require(files_equal(dir / "image_a.mvol", dir / "image_b.mvol"),
          "image MVOL round trip changed bytes");

  LabelVolume label;
  label.dims = {6, 5, 4};
  label.values.resize(static_cast<size_t>(label.voxels()));
  for (auto& v : label.values) v = static_cast<uint8_t>(rng.uniform_int(4));
  write_volume(dir / "label_a.mvol", label);
  write_volume(dir / "label_b.mvol", read_label(dir / "label_a.mvol"));
  require(files_equal(dir / "label_a.mvol", dir / "label_b.mvol"),
          "label MVOL round trip changed bytes");

  // Checkpoint round trip and checksum detection.
  Checkpoint ckpt;
  ckpt.model.num_classes = 3;
  ckpt.model.base_filters = 4;
  ckpt.model.num_scales = 2;
  Rng init(9);
  ckpt.params = build_params<float>(ckpt.model, init);
  ckpt.adam = init_adam(ckpt.params);
  ckpt.step = 17;
  ckpt.best_val_dsc = 0.5;
  save_checkpoint(dir / "ckpt_a.mckp", ckpt);
  save_checkpoint(dir / "ckpt_b.mckp", load_checkpoint(dir / "ckpt_a.mckp"));
  require(files_equal(dir / "ckpt_a.mckp", dir / "ckpt_b.mckp"),
          "checkpoint round trip changed bytes");

  std::string bytes = read_file(dir / "ckpt_a.mckp");
  bytes[bytes.size() - 3] ^= 0x10;
  {
    std::ofstream out(dir / "ckpt_bad.mckp", std::ios::binary);
    out << bytes;
  }
  bool caught = false;
  try {
    (void)load_checkpoint(dir / "ckpt_bad.mckp");
  } catch (const Error& e) {
    caught = std::string(e.what()).find("checksum") != std::string::npos;
  }
  require(caught, "corrupted checkpoint payload was not caught by checksum");

  // Fixed-seed reruns: identical history bytes and identical report bytes.
  PhantomSpec spec = PhantomSpec::defaults(2);
  spec.dims = {16, 16, 16};
  for (auto& shape : spec.classes) {
    shape.size_lo = 3;
    shape.size_hi = 4;
  }
  const DatasetPaths data = generate_dataset(spec, 2, 1, dir / "data");

  TrainOptions options;
  options.model.num_classes = 3;
  options.model.base_filters = 4;
  options.model.num_scales = 2;
  options.sampler.patch_size = 8;
  options.sampler.seed = 3;
  options.hyper.max_steps = 6;
  options.hyper.batch_size = 2;
  options.hyper.val_every = 3;
  options.hyper.seed = 5;
  options.infer_stride = 8;
  const TrainResult run_a =
      train(options, data.train_manifest, data.val_manifest, dir / "run_a");
  const TrainResult run_b =
      train(options, data.train_manifest, data.val_manifest, dir / "run_b");
  require(files_equal(run_a.history_path, run_b.history_path),
          "rerun history CSVs differ");
  require(files_equal(run_a.best_path, run_b.best_path),
          "rerun best checkpoints differ");

  const auto subjects = load_subjects(read_manifest(data.val_manifest),
                                      options.normalization, true);
  for (const char* tag : {"report_a", "report_b"}) {
    std::vector<SubjectMetrics> metrics;
    for (const Subject& subject : subjects) {
      ModelParams<float> params = run_a.best.params;
      const Volume probs =
          sliding_window_predict(subject.image, params, run_a.best.model,
                                 run_a.best.patch_size, 8);
      metrics.push_back(per_class_metrics(
          confusion_counts(labels_from_probs(probs), subject.label,
                           run_a.best.model.num_classes),
          subject.id));
    }
    emit_report(aggregate_stats(metrics, run_a.best.model.num_classes),
                metrics, dir / tag);
  }
  require(files_equal(dir / "report_a" / "metrics_subjects.csv",
                      dir / "report_b" / "metrics_subjects.csv"),
          "rerun subject reports differ");
  require(files_equal(dir / "report_a" / "metrics_summary.csv",
                      dir / "report_b" / "metrics_summary.csv"),
          "rerun summary reports differ");
  return "round trips bit-exact, checksum catches corruption, reruns "
         "byte-identical";
}

// ---------------------------------------------------------------------------
// 8. The 12-arm grid completes on a reduced budget with a stable
//    comparison table.

std::string criterion_8() {
  const auto start = std::chrono::steady_clock::now();
  const auto dir = scratch("criterion8");
  PhantomSpec spec = PhantomSpec::defaults(3);
  spec.dims = {32, 32, 32};
  const DatasetPaths data = generate_dataset(spec, 2, 1, dir / "data");

  ExperimentConfig config;
  config.train_manifest = data.train_manifest;
  config.val_manifest = data.val_manifest;
  config.model.num_classes = 4;
  config.model.base_filters = 4;
  config.model.num_scales = 2;
  config.sampler.patch_size = 16;
  config.sampler.seed = 3;
  config.train.max_steps = 100;
  config.train.batch_size = 2;
  config.train.val_every = 50;
  config.train.seed = 5;
  config.infer_stride = 8;

  const GridResult result = run_grid(config, dir / "grid", 1);
  require(result.arms.size() == 12, "grid did not produce 12 arms");
  for (const auto& arm : result.arms) {
    require(arm.ok, "arm " + arm.name + " failed: " + arm.error);
  }
  require(result.all_ok, "grid reports a failed arm");

  const std::vector<std::string> expect{
      "unet_ce_uniform",          "unet_ce_class_balanced",
      "unet_balanced_ce_uniform", "unet_balanced_ce_class_balanced",
      "unet_dice_uniform",        "unet_dice_class_balanced",
      "fcn_ce_uniform",           "fcn_ce_class_balanced",
      "fcn_balanced_ce_uniform",  "fcn_balanced_ce_class_balanced",
      "fcn_dice_uniform",         "fcn_dice_class_balanced"};
  std::istringstream csv(read_file(result.comparison_path));
  std::string line;
  require(static_cast<bool>(std::getline(csv, line)) &&
              line == "arm,best_val_mean_dsc",
          "comparison.csv header is wrong");
  for (size_t i = 0; i < expect.size(); ++i) {
    require(static_cast<bool>(std::getline(csv, line)),
            "comparison.csv has fewer than 12 rows");
    require(line.rfind(expect[i] + ",", 0) == 0,
            "row " + std::to_string(i + 1) + " is '" + line +
                "', expected arm " + expect[i]);
    require(line.size() > expect[i].size() + 1,
            "arm " + expect[i] + " has an empty value");
  }
  require(!std::getline(csv, line), "comparison.csv has extra rows");

  const double minutes =
      std::chrono::duration_cast<std::chrono::duration<double>>(
          std::chrono::steady_clock::now() - start)
          .count() /
      60.0;
  require(minutes <= 30.0, format("grid took %.1f minutes", minutes));
  return format("12 arms completed in %.1f minutes with a full comparison "
                "table",
                minutes);
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> wanted;
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n < 1 || n > 8) {
      std::fprintf(stderr, "usage: %s [criterion 1..8]...\n", argv[0]);
      return 2;
    }
    wanted.push_back(n);
  }
  if (wanted.empty()) wanted = {1, 2, 3, 4, 5, 6, 7, 8};

  const std::function<std::string()> criteria[8] = {
      criterion_1, criterion_2, criterion_3, criterion_4,
      criterion_5, criterion_6, criterion_7, criterion_8};

  int failures = 0;
  for (const int n : wanted) {
    const auto start = std::chrono::steady_clock::now();
    std::string detail;
    bool pass = false;
    try {
      detail = criteria[n - 1]();
      pass = true;
    } catch (const std::exception& e) {
      detail = e.what();
    }
    const double seconds =
        std::chrono::duration_cast<std::chrono::duration<double>>(
            std::chrono::steady_clock::now() - start)
            .count();
    std::printf("criterion %d: %s  %s  (%.1fs)\n", n, pass ? "PASS" : "FAIL",
                detail.c_str(), seconds);
    std::fflush(stdout);
    failures += pass ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
