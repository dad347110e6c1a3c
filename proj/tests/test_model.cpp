#include <doctest.h>

#include <cmath>
#include <string>

#include <voxseg/model.hpp>

using voxseg::Arch;
using voxseg::ConfigError;
using voxseg::Error;
using voxseg::ModelConfig;
using voxseg::ModelParams;
using voxseg::Norm;
using voxseg::Rng;
using voxseg::Shape;
using voxseg::Tape;
using voxseg::Tensor;

namespace {

ModelConfig micro_unet() {
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.base_filters = 4;
  cfg.num_scales = 2;
  cfg.units_per_scale = 1;
  cfg.arch = Arch::kUNet;
  cfg.norm = Norm::kBatch;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("parameter count matches the hand-computed layer walk") {
  // bf = 4, scales = 2, C = 3, batch norm, U-Net:
  //   stem   conv 1->4 k3          4*1*27 + 4             =  112
  //   enc0   unit 4->4 s1          2 norms(4) + 2 convs   =  904
  //   enc1   unit 4->8 s2          norms + convs + short  = 2696
  //   dec1   up 8->4 k2            8*4*8                  =  256
  //          unit 8->4 s1          norms + convs + short  = 1388
  //   head   conv 4->3 k1          3*4 + 3                =   15
  const ModelConfig cfg = micro_unet();
  const auto specs = voxseg::param_specs(cfg);

  int64_t total = 0, trainable = 0;
  for (const auto& s : specs) {
    total += voxseg::numel(s.shape);
    if (s.trainable) trainable += voxseg::numel(s.shape);
  }
  CHECK(total == 5371);
  // Six norm layers on widths 4,4,4,8,8,4 carry 64 running-stat values.
  CHECK(trainable == 5307);

  Rng rng(1);
  const auto params = voxseg::build_params<float>(cfg, rng);
  CHECK(params.value_count() == 5371);
  CHECK(params.trainable_count() == 5307);
  CHECK(params.entries.size() == specs.size());
}

TEST_CASE("fcn with the same encoder has fewer parameters") {
  ModelConfig fcn = micro_unet();
  fcn.arch = Arch::kFcn;
  const auto specs = voxseg::param_specs(fcn);
  int64_t total = 0;
  for (const auto& s : specs) total += voxseg::numel(s.shape);
  // encoder 112 + 904 + 2696, score heads 15 + 27, upsample 72.
  CHECK(total == 3826);
  CHECK(total < 5371);
}

TEST_CASE("config validation") {
  ModelConfig cfg = micro_unet();
  cfg.num_classes = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = micro_unet();
  cfg.base_filters = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = micro_unet();
  cfg.num_scales = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);

  cfg = micro_unet();
  cfg.num_scales = 3;
  CHECK_NOTHROW(cfg.validate_patch(16));
  CHECK_THROWS_WITH_AS(cfg.validate_patch(10),
                       doctest::Contains("num_scales incompatible"),
                       ConfigError);
}

TEST_CASE("parameter initialization scheme per kind") {
  ModelConfig cfg = micro_unet();
  Rng rng(3);
  auto params = voxseg::build_params<double>(cfg, rng);

  // He weights: zero-mean with sd near sqrt(2 / fan_in), fan_in = 27.
  const auto& w = params.at("stem.w");
  double sum = 0.0, sumsq = 0.0;
  for (double v : w.values()) {
    sum += v;
    sumsq += v * v;
  }
  const double n = double(w.size());
  const double sd = std::sqrt(sumsq / n - (sum / n) * (sum / n));
  CHECK(std::abs(sd - std::sqrt(2.0 / 27.0)) < 0.08);

  for (double v : params.at("stem.b").values()) CHECK(v == 0.0);
  for (double v : params.at("enc0.unit0.norm1.gamma").values()) {
    CHECK(v == 1.0);
  }
  for (double v : params.at("enc0.unit0.norm1.running_var").values()) {
    CHECK(v == 1.0);
  }
  for (double v : params.at("enc0.unit0.norm1.running_mean").values()) {
    CHECK(v == 0.0);
  }

  // Trainable flags: running stats excluded, everything else included.
  for (const auto& e : params.entries) {
    const bool running = e.name.find("running_") != std::string::npos;
    CHECK(e.trainable == !running);
    CHECK(e.tensor.requires_grad() == e.trainable);
  }

  CHECK_THROWS_WITH_AS((void)params.at("nope.w"),
                       doctest::Contains("unknown parameter"), Error);
}

TEST_CASE("build_params is deterministic in the seed") {
  ModelConfig cfg = micro_unet();
  Rng r1(5), r2(5);
  auto a = voxseg::build_params<float>(cfg, r1);
  auto b = voxseg::build_params<float>(cfg, r2);
  REQUIRE(a.entries.size() == b.entries.size());
  for (size_t i = 0; i < a.entries.size(); ++i) {
    CHECK(a.entries[i].name == b.entries[i].name);
    for (int64_t j = 0; j < a.entries[i].tensor.size(); ++j) {
      CHECK(a.entries[i].tensor.values()[j] == b.entries[i].tensor.values()[j]);
    }
  }
}

TEST_CASE("residual unit with a zeroed branch is the identity") {
  ModelConfig cfg = micro_unet();
  cfg.norm = Norm::kNone;
  Rng rng(7);
  auto params = voxseg::build_params<double>(cfg, rng);

  auto zero_out = [&](const std::string& name) {
    auto vals = params.at(name).mutable_values();
    for (auto& v : vals) v = 0.0;
  };
  zero_out("enc0.unit0.conv2.w");
  zero_out("enc0.unit0.conv2.b");

  Rng xr(9);
  std::vector<double> xv(4 * 27);
  for (auto& v : xv) v = xr.normal();
  auto x = Tensor<double>::from_values({1, 4, 3, 3, 3}, xv);

  Tape<double> tape;
  tape.set_recording(false);
  auto y = voxseg::residual_unit(tape, x, params, "enc0.unit0", 4, 4, 1,
                                 Norm::kNone, voxseg::ops::NormMode::kInfer);
  REQUIRE(y.shape() == x.shape());
  for (int64_t i = 0; i < x.size(); ++i) {
    CHECK(y.values()[i] == x.values()[i]);
  }
}

TEST_CASE("forward output shape is (N, C, D, H, W) for both archs") {
  for (auto arch : {Arch::kUNet, Arch::kFcn}) {
    ModelConfig cfg = micro_unet();
    cfg.arch = arch;
    Rng rng(11);
    auto params = voxseg::build_params<float>(cfg, rng);

    Rng xr(13);
    std::vector<float> xv(2 * 8 * 8 * 8);
    for (auto& v : xv) v = float(xr.normal());
    auto x = Tensor<float>::from_values({2, 1, 8, 8, 8}, xv);

    Tape<float> tape;
    auto y = voxseg::model_forward(tape, x, params, cfg,
                                   voxseg::ops::NormMode::kTrain);
    CHECK(y.shape() == Shape{2, 3, 8, 8, 8});
  }
}

TEST_CASE("model_forward rejects a patch the scales cannot halve") {
  ModelConfig cfg = micro_unet();
  cfg.num_scales = 3;
  Rng rng(15);
  auto params = voxseg::build_params<float>(cfg, rng);
  auto x = Tensor<float>::zeros({1, 1, 6, 6, 6});
  Tape<float> tape;
  CHECK_THROWS_AS((void)voxseg::model_forward(
                      tape, x, params, cfg, voxseg::ops::NormMode::kInfer),
                  ConfigError);
}

TEST_CASE("name round trips") {
  CHECK(std::string(voxseg::arch_name(Arch::kUNet)) == "unet");
  CHECK(std::string(voxseg::arch_name(Arch::kFcn)) == "fcn");
  CHECK(voxseg::parse_arch("fcn") == Arch::kFcn);
  CHECK_THROWS_AS((void)voxseg::parse_arch("resnet"), ConfigError);
  CHECK(std::string(voxseg::norm_name(Norm::kBatch)) == "batch");
  CHECK(voxseg::parse_norm("none") == Norm::kNone);
  CHECK_THROWS_AS((void)voxseg::parse_norm("layer"), ConfigError);
}

TEST_SUITE_END();
