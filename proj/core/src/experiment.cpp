#include "voxseg/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <thread>

#include <json.hpp>

namespace voxseg {

namespace {

using nlohmann::json;

void check_keys(const json& obj, std::initializer_list<const char*> known,
                const std::string& section) {
  if (!obj.is_object()) {
    throw ConfigError("config section '" +
                      (section.empty() ? "(root)" : section) +
                      "' must be a JSON object");
  }
  for (const auto& [key, value] : obj.items()) {
    bool found = false;
    for (const char* k : known) {
      if (key == k) {
        found = true;
        break;
      }
    }
    if (!found) {
      throw ConfigError("unknown config field '" +
                        (section.empty() ? key : section + "." + key) + "'");
    }
  }
}

template <typename T>
void read_field(const json& obj, const char* key, const std::string& section,
                T& out) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + section + "." + key +
                      "' has the wrong type");
  }
}

std::string read_string(const json& obj, const char* key,
                        const std::string& section, std::string fallback) {
  std::string out = std::move(fallback);
  read_field(obj, key, section, out);
  return out;
}

void apply_override(json& doc, const std::string& spec) {
  const size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + spec + "' is not of the form path=value");
  }
  const std::string path = spec.substr(0, eq);
  const std::string text = spec.substr(eq + 1);

  json value;
  try {
    value = json::parse(text);
    if (!value.is_primitive()) value = text;
  } catch (const json::exception&) {
    value = text;
  }

  json* cursor = &doc;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string part =
        path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) {
      throw ConfigError("override '" + spec + "' has an empty path segment");
    }
    if (dot == std::string::npos) {
      (*cursor)[part] = std::move(value);
      return;
    }
    cursor = &(*cursor)[part];
    if (!cursor->is_object()) {
      *cursor = json::object();
    }
    start = dot + 1;
  }
}

}  // namespace

TrainOptions ExperimentConfig::train_options() const {
  TrainOptions options;
  options.model = model;
  options.loss = loss;
  options.sampler = sampler;
  options.hyper = train;
  options.normalization = normalization;
  options.infer_stride = infer_stride;
  return options;
}

void ExperimentConfig::validate() const {
  model.validate();
  sampler.validate();
  loss.validate();
  train.validate();
  normalization.validate();
  model.validate_patch(sampler.patch_size);
  if (infer_stride < 0 || infer_stride > sampler.patch_size) {
    throw ConfigError("infer.stride must be in [1, sampler.patch_size], got " +
                      std::to_string(infer_stride));
  }
  if (train_manifest.empty()) {
    throw ConfigError("data.train_manifest is required");
  }
  if (val_manifest.empty()) {
    throw ConfigError("data.val_manifest is required");
  }
  for (const auto& [field, path] :
       {std::pair{"data.train_manifest", &train_manifest},
        std::pair{"data.val_manifest", &val_manifest}}) {
    if (!std::filesystem::exists(*path)) {
      throw ConfigError(std::string(field) + ": file not found: " +
                        path->string());
    }
  }
}

ExperimentConfig parse_experiment_config(
    const std::string& json_text, const std::vector<std::string>& overrides,
    const std::filesystem::path& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config parse error: ") + e.what());
  }
  if (!doc.is_object()) {
    throw ConfigError("config root must be a JSON object");
  }
  for (const std::string& o : overrides) apply_override(doc, o);

  check_keys(doc, {"data", "model", "sampler", "loss", "train", "infer"}, "");

  ExperimentConfig cfg;
  if (doc.contains("data")) {
    const json& data = doc.at("data");
    check_keys(data, {"train_manifest", "val_manifest", "normalization"},
               "data");
    const std::string train_path =
        read_string(data, "train_manifest", "data", "");
    const std::string val_path = read_string(data, "val_manifest", "data", "");
    if (!train_path.empty()) {
      cfg.train_manifest = std::filesystem::path(train_path).is_absolute()
                               ? std::filesystem::path(train_path)
                               : base_dir / train_path;
    }
    if (!val_path.empty()) {
      cfg.val_manifest = std::filesystem::path(val_path).is_absolute()
                             ? std::filesystem::path(val_path)
                             : base_dir / val_path;
    }
    if (data.contains("normalization")) {
      const json& norm = data.at("normalization");
      check_keys(norm, {"clip", "clip_lo_pct", "clip_hi_pct"},
                 "data.normalization");
      read_field(norm, "clip", "data.normalization", cfg.normalization.clip);
      read_field(norm, "clip_lo_pct", "data.normalization",
                 cfg.normalization.clip_lo_pct);
      read_field(norm, "clip_hi_pct", "data.normalization",
                 cfg.normalization.clip_hi_pct);
    }
  }
  if (doc.contains("model")) {
    const json& model = doc.at("model");
    check_keys(model,
               {"num_classes", "base_filters", "num_scales", "units_per_scale",
                "arch", "norm"},
               "model");
    read_field(model, "num_classes", "model", cfg.model.num_classes);
    read_field(model, "base_filters", "model", cfg.model.base_filters);
    read_field(model, "num_scales", "model", cfg.model.num_scales);
    read_field(model, "units_per_scale", "model", cfg.model.units_per_scale);
    cfg.model.arch =
        parse_arch(read_string(model, "arch", "model", arch_name(cfg.model.arch)));
    cfg.model.norm =
        parse_norm(read_string(model, "norm", "model", norm_name(cfg.model.norm)));
  }
  if (doc.contains("sampler")) {
    const json& sampler = doc.at("sampler");
    check_keys(sampler, {"patch_size", "mode", "seed", "foreground_only"},
               "sampler");
    read_field(sampler, "patch_size", "sampler", cfg.sampler.patch_size);
    read_field(sampler, "seed", "sampler", cfg.sampler.seed);
    read_field(sampler, "foreground_only", "sampler",
               cfg.sampler.foreground_only);
    cfg.sampler.mode = parse_sampler_mode(read_string(
        sampler, "mode", "sampler", sampler_mode_name(cfg.sampler.mode)));
  }
  if (doc.contains("loss")) {
    const json& loss = doc.at("loss");
    check_keys(loss,
               {"kind", "dice_smooth", "weight_floor",
                "dice_includes_background"},
               "loss");
    read_field(loss, "dice_smooth", "loss", cfg.loss.dice_smooth);
    read_field(loss, "weight_floor", "loss", cfg.loss.weight_floor);
    read_field(loss, "dice_includes_background", "loss",
               cfg.loss.dice_includes_background);
    cfg.loss.kind =
        parse_loss(read_string(loss, "kind", "loss", loss_name(cfg.loss.kind)));
  }
  if (doc.contains("train")) {
    const json& train = doc.at("train");
    check_keys(train,
               {"learning_rate", "beta1", "beta2", "epsilon", "max_steps",
                "batch_size", "val_every", "seed"},
               "train");
    read_field(train, "learning_rate", "train", cfg.train.learning_rate);
    read_field(train, "beta1", "train", cfg.train.beta1);
    read_field(train, "beta2", "train", cfg.train.beta2);
    read_field(train, "epsilon", "train", cfg.train.epsilon);
    read_field(train, "max_steps", "train", cfg.train.max_steps);
    read_field(train, "batch_size", "train", cfg.train.batch_size);
    read_field(train, "val_every", "train", cfg.train.val_every);
    read_field(train, "seed", "train", cfg.train.seed);
  }
  if (doc.contains("infer")) {
    const json& infer = doc.at("infer");
    check_keys(infer, {"stride"}, "infer");
    read_field(infer, "stride", "infer", cfg.infer_stride);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_experiment_config(
    const std::filesystem::path& path,
    const std::vector<std::string>& overrides) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw ConfigError("cannot open config file: " + path.string());
  }
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  const std::filesystem::path base =
      path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  return parse_experiment_config(text, overrides, base);
}

std::vector<GridArm> grid_arms() {
  std::vector<GridArm> arms;
  for (Arch arch : {Arch::kUNet, Arch::kFcn}) {
    for (LossKind loss :
         {LossKind::kCrossEntropy, LossKind::kBalancedCrossEntropy,
          LossKind::kDice}) {
      for (SamplerMode mode :
           {SamplerMode::kUniform, SamplerMode::kClassBalanced}) {
        GridArm arm;
        arm.arch = arch;
        arm.loss = loss;
        arm.sampler = mode;
        arm.name = std::string(arch_name(arch)) + "_" + loss_name(loss) + "_" +
                   sampler_mode_name(mode);
        arms.push_back(std::move(arm));
      }
    }
  }
  return arms;
}

GridResult run_grid(const ExperimentConfig& config,
                    const std::filesystem::path& out_dir, int jobs) {
  if (jobs < 1) {
    throw ConfigError("grid jobs must be >= 1, got " + std::to_string(jobs));
  }
  config.validate();
  std::filesystem::create_directories(out_dir);

  const std::vector<Subject> train_subjects = load_subjects(
      read_manifest(config.train_manifest), config.normalization, true);
  const std::vector<Subject> val_subjects = load_subjects(
      read_manifest(config.val_manifest), config.normalization, true);

  const std::vector<GridArm> arms = grid_arms();
  GridResult result;
  result.arms.resize(arms.size());

  std::atomic<size_t> next{0};
  auto worker = [&] {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= arms.size()) return;
      const GridArm& arm = arms[i];
      GridArmResult& row = result.arms[i];
      row.name = arm.name;
      try {
        TrainOptions options = config.train_options();
        options.model.arch = arm.arch;
        options.loss.kind = arm.loss;
        options.sampler.mode = arm.sampler;
        const TrainResult trained = train_on_subjects(
            options, train_subjects, val_subjects, out_dir / arm.name);
        row.best_val_dsc = trained.best.best_val_dsc;
        row.ok = true;
      } catch (const std::exception& e) {
        row.ok = false;
        row.error = e.what();
      }
    }
  };

  const size_t n_workers = std::min<size_t>(static_cast<size_t>(jobs),
                                            arms.size());
  std::vector<std::thread> workers;
  for (size_t i = 0; i + 1 < n_workers; ++i) workers.emplace_back(worker);
  worker();
  for (auto& w : workers) w.join();

  result.comparison_path = out_dir / "comparison.csv";
  std::string csv = "arm,best_val_mean_dsc\n";
  char buf[64];
  for (const GridArmResult& row : result.arms) {
    csv += row.name;
    csv += ',';
    if (row.ok) {
      std::snprintf(buf, sizeof buf, "%.6f", row.best_val_dsc);
      csv += buf;
    }
    csv += '\n';
  }
  std::ofstream out(result.comparison_path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error("run_grid: cannot write '" + result.comparison_path.string() +
                "'");
  }
  out << csv;
  if (!out) {
    throw Error("run_grid: failed writing '" +
                result.comparison_path.string() + "'");
  }

  result.all_ok = true;
  for (const GridArmResult& row : result.arms) {
    result.all_ok = result.all_ok && row.ok;
  }
  return result;
}

}  // namespace voxseg
