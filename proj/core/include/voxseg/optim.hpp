#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "voxseg/model.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

struct TrainHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  // Added to sqrt(v-hat) in the update, tuned against loss spikes.
  double epsilon = 1e-5;
  int64_t max_steps = 500;
  int64_t batch_size = 4;
  int64_t val_every = 50;
  uint64_t seed = 1;
  void validate() const;
};

// First/second-moment buffers, one slot per trainable parameter, in the
// parameter set's entry order.
template <typename F>
struct AdamState {
  struct Slot {
    std::string name;
    Tensor<F> m;
    Tensor<F> v;
  };
  std::vector<Slot> slots;
  int64_t t = 0;
};

template <typename F>
AdamState<F> init_adam(const ModelParams<F>& params);

// One update: t += 1; m = b1*m + (1-b1)*g; v = b2*v + (1-b2)*g^2;
// p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps).
// A parameter with no gradient buffer counts as zero gradient. Any non-finite
// gradient aborts before any parameter or state is touched, naming the
// offending parameter.
template <typename F>
void adam_step(ModelParams<F>& params, AdamState<F>& state,
               const TrainHyper& hyper);

}  // namespace voxseg
