#include <cmath>
#include <memory>
#include <utility>

#include "voxseg/gradcheck.hpp"
#include "voxseg/loss.hpp"
#include "voxseg/model.hpp"
#include "voxseg/ops.hpp"
#include "voxseg/rng.hpp"

namespace voxseg {

namespace {

using TensorD = Tensor<double>;
using TapeD = Tape<double>;

TensorD rand_tensor(Shape shape, Rng& rng, bool requires_grad,
                    double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& e : v) e = lo + (hi - lo) * rng.uniform();
  return TensorD::from_values(std::move(shape), std::move(v), requires_grad);
}

// Uniform magnitude in [0.1, 1], random sign, so finite differences never
// straddle the relu kink.
TensorD rand_away_from_zero(Shape shape, Rng& rng, bool requires_grad) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  for (auto& e : v) {
    const double u = rng.uniform() * 2.0 - 1.0;
    e = (u < 0.0 ? -1.0 : 1.0) * (0.1 + 0.9 * std::abs(u));
  }
  return TensorD::from_values(std::move(shape), std::move(v), requires_grad);
}

std::vector<int32_t> rand_labels(int64_t count, int64_t classes, Rng& rng) {
  std::vector<int32_t> labels(static_cast<size_t>(count));
  for (auto& l : labels) {
    l = static_cast<int32_t>(rng.uniform_int(classes));
  }
  return labels;
}

// Reduces an arbitrary output to a scalar with fixed random weights, so
// every output element influences the gradient.
TensorD weighted_sum(TapeD& tape, const TensorD& t, const TensorD& weights) {
  return ops::reduce_sum(tape, ops::mul(tape, t, weights));
}

struct SuiteCase {
  std::string name;
  std::function<TensorD(TapeD&)> f;
  std::vector<std::pair<std::string, TensorD>> params;
};

std::vector<std::pair<std::string, TensorD>> trainable_with_prefix(
    const ModelParams<double>& params, const std::string& prefix) {
  std::vector<std::pair<std::string, TensorD>> out;
  for (const auto& entry : params.entries) {
    if (entry.trainable && entry.name.starts_with(prefix)) {
      out.emplace_back(entry.name, entry.tensor);
    }
  }
  return out;
}

}  // namespace

std::vector<GradSuiteItem> run_gradcheck_suite(uint64_t seed,
                                               double tolerance) {
  const double h = 1e-4;
  const Rng root(seed);
  std::vector<SuiteCase> cases;

  {
    Rng rng = root.child(0);
    TensorD x = rand_tensor({1, 2, 6, 6, 6}, rng, true);
    TensorD w = rand_tensor({3, 2, 3, 3, 3}, rng, true);
    TensorD b = rand_tensor({3}, rng, true);
    TensorD r = rand_tensor({1, 3, 6, 6, 6}, rng, false);
    cases.push_back(
        {"conv3d_s1_same",
         [=](TapeD& tape) {
           return weighted_sum(
               tape,
               ops::conv3d(tape, x, w, b, 1, ops::Padding::kSame), r);
         },
         {{"x", x}, {"w", w}, {"b", b}}});
  }
  {
    Rng rng = root.child(1);
    TensorD x = rand_tensor({1, 2, 6, 6, 6}, rng, true);
    TensorD w = rand_tensor({3, 2, 3, 3, 3}, rng, true);
    TensorD b = rand_tensor({3}, rng, true);
    TensorD r = rand_tensor({1, 3, 3, 3, 3}, rng, false);
    cases.push_back(
        {"conv3d_s2_same",
         [=](TapeD& tape) {
           return weighted_sum(
               tape,
               ops::conv3d(tape, x, w, b, 2, ops::Padding::kSame), r);
         },
         {{"x", x}, {"w", w}, {"b", b}}});
  }
  {
    Rng rng = root.child(2);
    TensorD x = rand_tensor({1, 2, 6, 6, 6}, rng, true);
    TensorD w = rand_tensor({3, 2, 3, 3, 3}, rng, true);
    TensorD b = rand_tensor({3}, rng, true);
    TensorD r = rand_tensor({1, 3, 4, 4, 4}, rng, false);
    cases.push_back(
        {"conv3d_s1_valid",
         [=](TapeD& tape) {
           return weighted_sum(
               tape,
               ops::conv3d(tape, x, w, b, 1, ops::Padding::kValid), r);
         },
         {{"x", x}, {"w", w}, {"b", b}}});
  }
  {
    Rng rng = root.child(3);
    TensorD x = rand_tensor({1, 2, 4, 4, 4}, rng, true);
    TensorD w = rand_tensor({2, 3, 2, 2, 2}, rng, true);
    TensorD r = rand_tensor({1, 3, 8, 8, 8}, rng, false);
    cases.push_back({"transposed_conv3d_s2",
                     [=](TapeD& tape) {
                       return weighted_sum(
                           tape, ops::transposed_conv3d(tape, x, w, 2), r);
                     },
                     {{"x", x}, {"w", w}}});
  }
  {
    Rng rng = root.child(4);
    TensorD x = rand_away_from_zero({2, 3, 4, 4}, rng, true);
    TensorD r = rand_tensor({2, 3, 4, 4}, rng, false);
    cases.push_back({"relu",
                     [=](TapeD& tape) {
                       return weighted_sum(tape, ops::relu(tape, x), r);
                     },
                     {{"x", x}}});
  }
  {
    Rng rng = root.child(5);
    TensorD x = rand_tensor({2, 3, 4, 4, 4}, rng, true);
    TensorD gamma = rand_tensor({3}, rng, true, 0.5, 1.5);
    TensorD beta = rand_tensor({3}, rng, true);
    TensorD mean = TensorD::zeros({3});
    TensorD var = TensorD::full({3}, 1.0);
    TensorD r = rand_tensor({2, 3, 4, 4, 4}, rng, false);
    cases.push_back(
        {"batch_norm_train",
         [=](TapeD& tape) {
           return weighted_sum(
               tape,
               ops::batch_norm(tape, x, gamma, beta, mean, var,
                               ops::NormMode::kTrain),
               r);
         },
         {{"x", x}, {"gamma", gamma}, {"beta", beta}}});
  }
  {
    Rng rng = root.child(6);
    TensorD x = rand_tensor({2, 3, 4, 4, 4}, rng, true);
    TensorD gamma = rand_tensor({3}, rng, true, 0.5, 1.5);
    TensorD beta = rand_tensor({3}, rng, true);
    TensorD mean = rand_tensor({3}, rng, false);
    TensorD var = rand_tensor({3}, rng, false, 0.5, 1.5);
    TensorD r = rand_tensor({2, 3, 4, 4, 4}, rng, false);
    cases.push_back(
        {"batch_norm_infer",
         [=](TapeD& tape) {
           return weighted_sum(
               tape,
               ops::batch_norm(tape, x, gamma, beta, mean, var,
                               ops::NormMode::kInfer),
               r);
         },
         {{"x", x}, {"gamma", gamma}, {"beta", beta}}});
  }
  {
    Rng rng = root.child(7);
    TensorD x = rand_tensor({1, 3, 2, 2, 2}, rng, true);
    TensorD r = rand_tensor({1, 3, 2, 2, 2}, rng, false);
    cases.push_back(
        {"softmax_channels",
         [=](TapeD& tape) {
           return weighted_sum(tape, ops::softmax_channels(tape, x), r);
         },
         {{"x", x}}});
  }
  {
    Rng rng = root.child(8);
    TensorD a = rand_tensor({1, 2, 3, 3, 3}, rng, true);
    TensorD b = rand_tensor({1, 3, 3, 3, 3}, rng, true);
    TensorD r = rand_tensor({1, 5, 3, 3, 3}, rng, false);
    cases.push_back(
        {"concat_channels",
         [=](TapeD& tape) {
           return weighted_sum(tape, ops::concat_channels(tape, a, b), r);
         },
         {{"a", a}, {"b", b}}});
  }
  {
    Rng rng = root.child(9);
    TensorD a = rand_tensor({2, 3, 4}, rng, true);
    TensorD b = rand_tensor({2, 3, 4}, rng, true);
    TensorD r = rand_tensor({2, 3, 4}, rng, false);
    cases.push_back({"add",
                     [=](TapeD& tape) {
                       return weighted_sum(tape, ops::add(tape, a, b), r);
                     },
                     {{"a", a}, {"b", b}}});
  }
  {
    Rng rng = root.child(10);
    TensorD a = rand_tensor({2, 3, 4}, rng, true);
    TensorD b = rand_tensor({2, 3, 4}, rng, true);
    TensorD r = rand_tensor({2, 3, 4}, rng, false);
    cases.push_back({"mul",
                     [=](TapeD& tape) {
                       return weighted_sum(tape, ops::mul(tape, a, b), r);
                     },
                     {{"a", a}, {"b", b}}});
  }
  {
    Rng rng = root.child(11);
    TensorD a = rand_tensor({2, 3, 4}, rng, true);
    TensorD s = rand_tensor({1}, rng, true);
    TensorD r = rand_tensor({2, 3, 4}, rng, false);
    cases.push_back({"add_scalar",
                     [=](TapeD& tape) {
                       return weighted_sum(tape, ops::add(tape, a, s), r);
                     },
                     {{"a", a}, {"s", s}}});
  }
  {
    Rng rng = root.child(12);
    TensorD a = rand_tensor({2, 3, 4}, rng, true);
    TensorD s = rand_tensor({1}, rng, true);
    TensorD r = rand_tensor({2, 3, 4}, rng, false);
    cases.push_back({"mul_scalar",
                     [=](TapeD& tape) {
                       return weighted_sum(tape, ops::mul(tape, a, s), r);
                     },
                     {{"a", a}, {"s", s}}});
  }
  {
    Rng rng = root.child(13);
    TensorD x = rand_tensor({2, 3, 4, 5}, rng, true);
    TensorD r = rand_tensor({2, 4}, rng, false);
    cases.push_back(
        {"reduce_sum_axes",
         [=](TapeD& tape) {
           return weighted_sum(tape, ops::reduce_sum(tape, x, {1, 3}), r);
         },
         {{"x", x}}});
  }
  {
    Rng rng = root.child(14);
    TensorD x = rand_tensor({2, 3, 4}, rng, true);
    cases.push_back({"reduce_mean_all",
                     [=](TapeD& tape) { return ops::reduce_mean(tape, x); },
                     {{"x", x}}});
  }

  {
    Rng rng = root.child(15);
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.base_filters = 4;
    cfg.num_scales = 2;
    cfg.units_per_scale = 1;
    cfg.norm = Norm::kBatch;
    auto params = std::make_shared<ModelParams<double>>(
        build_params<double>(cfg, rng));
    TensorD x = rand_tensor({1, 4, 4, 4, 4}, rng, true);
    TensorD r = rand_tensor({1, 4, 4, 4, 4}, rng, false);
    auto checked = trainable_with_prefix(*params, "enc0.unit0.");
    checked.emplace_back("x", x);
    cases.push_back(
        {"residual_unit_s1",
         [=](TapeD& tape) {
           return weighted_sum(
               tape,
               residual_unit(tape, x, *params, "enc0.unit0", 4, 4, 1,
                             Norm::kBatch, ops::NormMode::kTrain),
               r);
         },
         std::move(checked)});
  }
  {
    Rng rng = root.child(16);
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.base_filters = 4;
    cfg.num_scales = 2;
    cfg.units_per_scale = 1;
    cfg.norm = Norm::kBatch;
    auto params = std::make_shared<ModelParams<double>>(
        build_params<double>(cfg, rng));
    TensorD x = rand_tensor({1, 4, 4, 4, 4}, rng, true);
    TensorD r = rand_tensor({1, 8, 2, 2, 2}, rng, false);
    auto checked = trainable_with_prefix(*params, "enc1.unit0.");
    checked.emplace_back("x", x);
    cases.push_back(
        {"residual_unit_s2",
         [=](TapeD& tape) {
           return weighted_sum(
               tape,
               residual_unit(tape, x, *params, "enc1.unit0", 4, 8, 2,
                             Norm::kBatch, ops::NormMode::kTrain),
               r);
         },
         std::move(checked)});
  }

  for (const Arch arch : {Arch::kUNet, Arch::kFcn}) {
    Rng rng = root.child(arch == Arch::kUNet ? 17 : 18);
    ModelConfig cfg;
    cfg.num_classes = 2;
    cfg.base_filters = 2;
    cfg.num_scales = 2;
    cfg.units_per_scale = 1;
    cfg.arch = arch;
    cfg.norm = Norm::kNone;
    auto params = std::make_shared<ModelParams<double>>(
        build_params<double>(cfg, rng));
    TensorD x = rand_tensor({1, 1, 8, 8, 8}, rng, true);
    TensorD r = rand_tensor({1, 2, 8, 8, 8}, rng, false);
    auto checked = trainable_with_prefix(*params, "");
    checked.emplace_back("x", x);
    cases.push_back(
        {arch == Arch::kUNet ? "unet_micro" : "fcn_micro",
         [=](TapeD& tape) {
           return weighted_sum(
               tape,
               model_forward(tape, x, *params, cfg, ops::NormMode::kTrain),
               r);
         },
         std::move(checked)});
  }

  {
    Rng rng = root.child(19);
    TensorD logits = rand_tensor({2, 3, 4, 4, 4}, rng, true);
    auto labels = std::make_shared<std::vector<int32_t>>(
        rand_labels(2 * 64, 3, rng));
    cases.push_back({"loss_ce",
                     [=](TapeD& tape) {
                       return cross_entropy(tape, logits, *labels);
                     },
                     {{"logits", logits}}});
  }
  {
    Rng rng = root.child(20);
    TensorD logits = rand_tensor({2, 3, 4, 4, 4}, rng, true);
    auto labels = std::make_shared<std::vector<int32_t>>(
        rand_labels(2 * 64, 3, rng));
    cases.push_back(
        {"loss_balanced_ce",
         [=](TapeD& tape) {
           return class_balanced_cross_entropy(tape, logits, *labels);
         },
         {{"logits", logits}}});
  }
  {
    Rng rng = root.child(21);
    TensorD logits = rand_tensor({2, 3, 4, 4, 4}, rng, true);
    auto labels = std::make_shared<std::vector<int32_t>>(
        rand_labels(2 * 64, 3, rng));
    cases.push_back({"loss_dice",
                     [=](TapeD& tape) {
                       return soft_dice_loss(tape, logits, *labels);
                     },
                     {{"logits", logits}}});
  }

  std::vector<GradSuiteItem> items;
  for (const SuiteCase& c : cases) {
    const auto reports = grad_check<double>(c.f, c.params, h, tolerance);
    for (const auto& r : reports) {
      items.push_back({c.name + "." + r.param, r.max_rel_err, r.pass});
    }
  }
  return items;
}

}  // namespace voxseg
