#include "voxseg/optim.hpp"

#include <cmath>

namespace voxseg {

void TrainHyper::validate() const {
  if (!(learning_rate > 0.0)) {
    throw ConfigError("train.learning_rate must be > 0");
  }
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must lie in (0, 1)");
  }
  if (!(epsilon > 0.0)) {
    throw ConfigError("train.epsilon must be > 0");
  }
  if (max_steps < 1) {
    throw ConfigError("train.max_steps must be >= 1");
  }
  if (batch_size < 1) {
    throw ConfigError("train.batch_size must be >= 1");
  }
  if (val_every < 0) {
    throw ConfigError("train.val_every must be >= 0");
  }
}

template <typename F>
AdamState<F> init_adam(const ModelParams<F>& params) {
  AdamState<F> state;
  for (const auto& entry : params.entries) {
    if (!entry.trainable) continue;
    state.slots.push_back({entry.name, Tensor<F>::zeros(entry.tensor.shape()),
                           Tensor<F>::zeros(entry.tensor.shape())});
  }
  return state;
}

template <typename F>
void adam_step(ModelParams<F>& params, AdamState<F>& state,
               const TrainHyper& hyper) {
  hyper.validate();
  size_t slot_idx = 0;
  std::vector<std::pair<size_t, size_t>> pairs;  // (entry, slot)
  for (size_t i = 0; i < params.entries.size(); ++i) {
    const auto& entry = params.entries[i];
    if (!entry.trainable) continue;
    if (slot_idx >= state.slots.size() ||
        state.slots[slot_idx].name != entry.name ||
        state.slots[slot_idx].m.shape() != entry.tensor.shape()) {
      throw Error("adam_step: optimizer state does not match parameter '" +
                  entry.name + "'");
    }
    pairs.emplace_back(i, slot_idx);
    ++slot_idx;
  }
  if (slot_idx != state.slots.size()) {
    throw Error("adam_step: optimizer state has extra slots");
  }

  // Validate every gradient before mutating anything, so a bad batch leaves
  // parameters and moments untouched.
  for (const auto& [ei, si] : pairs) {
    const auto& entry = params.entries[ei];
    if (!entry.tensor.has_grad()) continue;
    for (F g : entry.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) {
        throw Error("adam_step: non-finite gradient for parameter '" +
                    entry.name + "'");
      }
    }
  }

  state.t += 1;
  const double b1 = hyper.beta1;
  const double b2 = hyper.beta2;
  const double bias1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  const double lr = hyper.learning_rate;
  const double eps = hyper.epsilon;
  for (const auto& [ei, si] : pairs) {
    auto& entry = params.entries[ei];
    auto& slot = state.slots[si];
    auto p = entry.tensor.mutable_values();
    auto m = slot.m.mutable_values();
    auto v = slot.v.mutable_values();
    const bool has_grad = entry.tensor.has_grad();
    std::span<const F> g;
    if (has_grad) g = entry.tensor.grad();
    const int64_t n = entry.tensor.size();
#pragma omp parallel for schedule(static)
    for (int64_t j = 0; j < n; ++j) {
      const double gj = has_grad ? static_cast<double>(g[j]) : 0.0;
      const double mj = b1 * static_cast<double>(m[j]) + (1.0 - b1) * gj;
      const double vj = b2 * static_cast<double>(v[j]) + (1.0 - b2) * gj * gj;
      m[j] = static_cast<F>(mj);
      v[j] = static_cast<F>(vj);
      const double m_hat = mj / bias1;
      const double v_hat = vj / bias2;
      p[j] = static_cast<F>(static_cast<double>(p[j]) -
                            lr * m_hat / (std::sqrt(v_hat) + eps));
    }
  }
}

template struct AdamState<float>;
template struct AdamState<double>;
template AdamState<float> init_adam(const ModelParams<float>&);
template AdamState<double> init_adam(const ModelParams<double>&);
template void adam_step(ModelParams<float>&, AdamState<float>&,
                        const TrainHyper&);
template void adam_step(ModelParams<double>&, AdamState<double>&,
                        const TrainHyper&);

}  // namespace voxseg
