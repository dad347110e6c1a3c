#pragma once

#include <span>
#include <string>

#include "voxseg/tensor.hpp"

namespace voxseg {

enum class LossKind { kCrossEntropy, kBalancedCrossEntropy, kDice };

struct LossConfig {
  LossKind kind = LossKind::kCrossEntropy;
  double dice_smooth = 1e-5;
  double weight_floor = 1e-6;
  bool dice_includes_background = true;
  void validate() const;
};

// All losses take (N, C, ...) logits and one integer label per voxel in the
// same (N, ...) order, and return a differentiable scalar.

// Mean over voxels of -log softmax(logits)[label], in log-sum-exp form.
template <typename F>
Tensor<F> cross_entropy(Tape<F>& tape, const Tensor<F>& logits,
                        std::span<const int32_t> labels);

// Per-voxel CE weighted by w_c = 1 / (K * max(f_c, floor)) where f_c is the
// batch frequency of class c and K the number of classes present.
template <typename F>
Tensor<F> class_balanced_cross_entropy(Tape<F>& tape, const Tensor<F>& logits,
                                       std::span<const int32_t> labels,
                                       double weight_floor = 1e-6);

// 1 - mean over included classes of (2*overlap + s) / (mass_p + mass_g + s)
// on softmax probabilities against one-hot labels.
template <typename F>
Tensor<F> soft_dice_loss(Tape<F>& tape, const Tensor<F>& logits,
                         std::span<const int32_t> labels, double smooth = 1e-5,
                         bool include_background = true);

template <typename F>
Tensor<F> evaluate_loss(Tape<F>& tape, const LossConfig& cfg,
                        const Tensor<F>& logits,
                        std::span<const int32_t> labels);

const char* loss_name(LossKind k);
LossKind parse_loss(const std::string& name);

}  // namespace voxseg
