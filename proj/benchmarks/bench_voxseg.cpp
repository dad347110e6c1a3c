#include <benchmark/benchmark.h>

#include <voxseg/inference.hpp>
#include <voxseg/model.hpp>
#include <voxseg/ops.hpp>
#include <voxseg/optim.hpp>
#include <voxseg/phantom.hpp>
#include <voxseg/sampling.hpp>

namespace {

using namespace voxseg;

Tensor<float> random_tensor(const Shape& shape, uint64_t seed) {
  Rng rng(seed);
  int64_t n = 1;
  for (const int64_t d : shape) n *= d;
  std::vector<float> values(static_cast<size_t>(n));
  for (auto& v : values) v = static_cast<float>(rng.normal());
  return Tensor<float>::from_values(shape, std::move(values));
}

void BM_Conv3d(benchmark::State& state, ops::ConvAlgo algo) {
  Tape<float> tape;
  tape.set_recording(false);
  const auto x = random_tensor({1, 8, 24, 24, 24}, 1);
  const auto w = random_tensor({8, 8, 3, 3, 3}, 2);
  const auto b = random_tensor({8}, 3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        ops::conv3d(tape, x, w, b, 1, ops::Padding::kSame, algo));
  }
}

void BM_ResidualUnitForward(benchmark::State& state) {
  ModelConfig cfg;
  cfg.num_classes = 2;
  cfg.base_filters = 8;
  cfg.num_scales = 1;
  Rng rng(1);
  auto params = build_params<float>(cfg, rng);
  const auto x = random_tensor({1, 8, 24, 24, 24}, 2);
  for (auto _ : state) {
    Tape<float> tape;
    tape.set_recording(false);
    benchmark::DoNotOptimize(residual_unit(tape, x, params, "enc0.unit0", 8, 8,
                                           1, cfg.norm,
                                           ops::NormMode::kInfer));
  }
}

void BM_ResidualUnitTrainStep(benchmark::State& state) {
  ModelConfig cfg;
  cfg.num_classes = 2;
  cfg.base_filters = 8;
  cfg.num_scales = 1;
  Rng rng(1);
  auto params = build_params<float>(cfg, rng);
  const auto x = random_tensor({1, 8, 16, 16, 16}, 2);
  for (auto _ : state) {
    for (auto& entry : params.entries) {
      if (entry.trainable) entry.tensor.zero_grad();
    }
    Tape<float> tape;
    const auto y = residual_unit(tape, x, params, "enc0.unit0", 8, 8, 1,
                                 cfg.norm, ops::NormMode::kTrain);
    const auto loss = ops::reduce_mean(tape, ops::mul(tape, y, y), {});
    tape.backward(loss);
    benchmark::DoNotOptimize(params.entries.front().tensor.grad_buffer());
  }
}

void BM_AdamStep(benchmark::State& state) {
  const int64_t n = state.range(0);
  ModelParams<float> params;
  params.add("p", random_tensor({n}, 1), true);
  AdamState<float> adam = init_adam(params);
  TrainHyper hyper;
  auto grad = params.at("p").grad_buffer();
  for (size_t i = 0; i < grad.size(); ++i) {
    grad[i] = 1e-3f * static_cast<float>(i % 17);
  }
  for (auto _ : state) {
    adam_step(params, adam, hyper);
    benchmark::DoNotOptimize(params.at("p").values());
  }
}

void BM_MakeBatch(benchmark::State& state) {
  PhantomSpec spec = PhantomSpec::defaults(3);
  spec.dims = {48, 48, 48};
  Rng gen(1);
  auto [image, label] = generate_phantom(spec, gen);
  Subject subject;
  subject.id = "bench";
  subject.image = std::move(image);
  subject.label = std::move(label);
  subject.has_label = true;
  subject.class_index = build_class_index(subject.label);
  const std::vector<Subject> subjects{std::move(subject)};

  SamplerConfig cfg;
  cfg.patch_size = 32;
  const Rng rng(7);
  int64_t step = 0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(make_batch(subjects, cfg, 4,
                                        rng.child(static_cast<uint64_t>(step))));
    ++step;
  }
}

void BM_SlidingWindow(benchmark::State& state) {
  ModelConfig cfg;
  cfg.num_classes = 3;
  cfg.base_filters = 4;
  cfg.num_scales = 2;
  Rng rng(1);
  auto params = build_params<float>(cfg, rng);
  Volume v;
  v.dims = {48, 48, 48};
  v.values.resize(static_cast<size_t>(v.voxels()));
  Rng noise(2);
  for (auto& x : v.values) x = static_cast<float>(noise.normal());
  for (auto _ : state) {
    benchmark::DoNotOptimize(sliding_window_predict(v, params, cfg, 32, 16));
  }
}

void BM_SoftmaxChannels(benchmark::State& state) {
  Tape<float> tape;
  tape.set_recording(false);
  const auto x = random_tensor({1, 14, 32, 32, 32}, 1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(ops::softmax_channels(tape, x));
  }
}

}  // namespace

BENCHMARK_CAPTURE(BM_Conv3d, direct, voxseg::ops::ConvAlgo::kDirect)
    ->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(BM_Conv3d, im2col, voxseg::ops::ConvAlgo::kIm2col)
    ->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ResidualUnitForward)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ResidualUnitTrainStep)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AdamStep)->Arg(1 << 12)->Arg(1 << 18);
BENCHMARK(BM_MakeBatch)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SlidingWindow)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SoftmaxChannels)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
