#pragma once

#include <vector>

#include "voxseg/tensor.hpp"

namespace voxseg::ops {

enum class Padding { kSame, kValid };

// kAuto picks per call from the work size; the choice is a pure function of
// the shapes involved, never of thread count or data.
enum class ConvAlgo { kAuto, kDirect, kIm2col };

enum class NormMode { kTrain, kInfer };

// 3-D convolution over tensors shaped (N, C, D, H, W) with a cubic kernel.
// w is (Cout, Cin, k, k, k) with k odd for same padding; b is (Cout).
// Same padding pads (k-1)/2 on every side, so D' = ceil(D / stride);
// valid padding requires k <= each spatial dim and D' = (D-k)/stride + 1.
template <typename F>
Tensor<F> conv3d(Tape<F>& tape, const Tensor<F>& x, const Tensor<F>& w,
                 const Tensor<F>& b, int64_t stride, Padding padding,
                 ConvAlgo algo = ConvAlgo::kAuto);

// Transposed convolution restricted to kernel == stride, so every output
// voxel receives exactly one contribution per input channel. w is
// (Cin, Cout, k, k, k); output spatial dims are the input's times stride.
template <typename F>
Tensor<F> transposed_conv3d(Tape<F>& tape, const Tensor<F>& x,
                            const Tensor<F>& w, int64_t stride);

template <typename F>
Tensor<F> relu(Tape<F>& tape, const Tensor<F>& x);

// Per-channel batch normalization over (N, D, H, W). Train mode uses biased
// batch statistics and folds them into the running buffers with
// new = momentum * old + (1 - momentum) * batch; infer mode reads the
// running buffers. Running buffers are mutated in train mode regardless of
// whether the tape is recording.
template <typename F>
Tensor<F> batch_norm(Tape<F>& tape, const Tensor<F>& x, const Tensor<F>& gamma,
                     const Tensor<F>& beta, Tensor<F> running_mean,
                     Tensor<F> running_var, NormMode mode, F momentum = F(0.9),
                     F eps = F(1e-5));

// Softmax over axis 1 of an (N, C, ...) tensor, C >= 2.
template <typename F>
Tensor<F> softmax_channels(Tape<F>& tape, const Tensor<F>& x);

// Concatenation along axis 1; all other dims must match.
template <typename F>
Tensor<F> concat_channels(Tape<F>& tape, const Tensor<F>& a,
                          const Tensor<F>& b);

// Elementwise ops accept equal shapes, or one single-element operand which
// broadcasts against the other.
template <typename F>
Tensor<F> add(Tape<F>& tape, const Tensor<F>& a, const Tensor<F>& b);
template <typename F>
Tensor<F> mul(Tape<F>& tape, const Tensor<F>& a, const Tensor<F>& b);

// Reductions over the given axes; an empty axis list reduces every axis to a
// rank-0 scalar. Axes must be unique and in range.
template <typename F>
Tensor<F> reduce_sum(Tape<F>& tape, const Tensor<F>& x,
                     const std::vector<int>& axes = {});
template <typename F>
Tensor<F> reduce_mean(Tape<F>& tape, const Tensor<F>& x,
                      const std::vector<int>& axes = {});

}  // namespace voxseg::ops
