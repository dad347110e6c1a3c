#include "voxseg/loss.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <vector>

namespace voxseg {
namespace {

struct LogitsGeom {
  int64_t n = 0, c = 0, spatial = 0, voxels = 0;
};

template <typename F>
LogitsGeom check_logits(const Tensor<F>& logits,
                        std::span<const int32_t> labels) {
  if (!logits.defined() || logits.rank() < 2 || logits.dim(1) < 2) {
    throw Error("loss: logits must be (N, C, ...) with C >= 2");
  }
  LogitsGeom g;
  g.n = logits.dim(0);
  g.c = logits.dim(1);
  g.spatial = 1;
  for (int axis = 2; axis < logits.rank(); ++axis) g.spatial *= logits.dim(axis);
  g.voxels = g.n * g.spatial;
  if (std::ssize(labels) != g.voxels) {
    throw Error("loss: expected " + std::to_string(g.voxels) +
                " labels, got " + std::to_string(labels.size()));
  }
  for (int64_t v = 0; v < g.voxels; ++v) {
    const int32_t label = labels[static_cast<size_t>(v)];
    if (label < 0 || label >= g.c) {
      throw Error("loss: label " + std::to_string(label) +
                  " out of range for " + std::to_string(g.c) + " classes");
    }
  }
  return g;
}

// Deterministic parallel sum: fixed chunk boundaries, partials combined in
// chunk order regardless of thread count.
template <typename Body>
double chunked_sum(int64_t n, const Body& body) {
  constexpr int64_t kChunk = 65536;
  const int64_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<double> partial(static_cast<size_t>(chunks), 0.0);
#pragma omp parallel for schedule(static)
  for (int64_t t = 0; t < chunks; ++t) {
    double acc = 0.0;
    const int64_t hi = std::min(n, (t + 1) * kChunk);
    for (int64_t i = t * kChunk; i < hi; ++i) acc += body(i);
    partial[static_cast<size_t>(t)] = acc;
  }
  double total = 0.0;
  for (double p : partial) total += p;
  return total;
}

// Index of (voxel v, channel ch) in an (N, C, S) layout where v = n * S + s.
inline int64_t logit_at(int64_t v, int64_t ch, int64_t c, int64_t spatial) {
  const int64_t n = v / spatial;
  const int64_t s = v % spatial;
  return (n * c + ch) * spatial + s;
}

template <typename F>
double voxel_lse(const F* x, int64_t v, int64_t c, int64_t spatial) {
  const int64_t base = logit_at(v, 0, c, spatial);
  double max_v = static_cast<double>(x[base]);
  for (int64_t ch = 1; ch < c; ++ch) {
    max_v = std::max(max_v, static_cast<double>(x[base + ch * spatial]));
  }
  double denom = 0.0;
  for (int64_t ch = 0; ch < c; ++ch) {
    denom += std::exp(static_cast<double>(x[base + ch * spatial]) - max_v);
  }
  return max_v + std::log(denom);
}

// Weighted cross entropy: loss = (1/V) * sum_v w(label_v) * ce_v. Plain
// cross entropy is the unit-weight case.
template <typename F>
Tensor<F> weighted_ce(Tape<F>& tape, const Tensor<F>& logits,
                      std::span<const int32_t> labels,
                      std::shared_ptr<std::vector<double>> class_weights) {
  const LogitsGeom g = check_logits(logits, labels);
  const F* x = logits.values().data();
  const int32_t* lab = labels.data();
  const auto& w = *class_weights;
  const double total = chunked_sum(g.voxels, [&](int64_t v) {
    const double lse = voxel_lse(x, v, g.c, g.spatial);
    const double logit =
        static_cast<double>(x[logit_at(v, lab[v], g.c, g.spatial)]);
    return w[static_cast<size_t>(lab[v])] * (lse - logit);
  });
  auto out =
      Tensor<F>::scalar(static_cast<F>(total / static_cast<double>(g.voxels)));

  auto labels_copy = std::make_shared<std::vector<int32_t>>(labels.begin(),
                                                            labels.end());
  tape.record({logits}, out, [&tape, logits, out, labels_copy, class_weights,
                              g] {
    if (!tape.wants_grad(logits)) return;
    const double gscale = static_cast<double>(out.grad()[0]) /
                          static_cast<double>(g.voxels);
    auto gx = logits.grad_buffer();
    const F* x2 = logits.values().data();
    const auto& w2 = *class_weights;
    const int32_t* lab2 = labels_copy->data();
#pragma omp parallel for schedule(static)
    for (int64_t v = 0; v < g.voxels; ++v) {
      const int64_t base = logit_at(v, 0, g.c, g.spatial);
      double max_v = static_cast<double>(x2[base]);
      for (int64_t ch = 1; ch < g.c; ++ch) {
        max_v = std::max(max_v, static_cast<double>(x2[base + ch * g.spatial]));
      }
      double denom = 0.0;
      for (int64_t ch = 0; ch < g.c; ++ch) {
        denom += std::exp(static_cast<double>(x2[base + ch * g.spatial]) - max_v);
      }
      const double scale = gscale * w2[static_cast<size_t>(lab2[v])];
      for (int64_t ch = 0; ch < g.c; ++ch) {
        const double p =
            std::exp(static_cast<double>(x2[base + ch * g.spatial]) - max_v) /
            denom;
        const double onehot = ch == lab2[v] ? 1.0 : 0.0;
        gx[base + ch * g.spatial] += static_cast<F>(scale * (p - onehot));
      }
    }
  });
  return out;
}

}  // namespace

void LossConfig::validate() const {
  if (!(dice_smooth > 0.0)) {
    throw ConfigError("loss.dice_smooth must be > 0");
  }
  if (!(weight_floor > 0.0)) {
    throw ConfigError("loss.weight_floor must be > 0");
  }
}

template <typename F>
Tensor<F> cross_entropy(Tape<F>& tape, const Tensor<F>& logits,
                        std::span<const int32_t> labels) {
  const int64_t c = logits.defined() && logits.rank() >= 2 ? logits.dim(1) : 0;
  auto weights = std::make_shared<std::vector<double>>(
      static_cast<size_t>(std::max<int64_t>(c, 0)), 1.0);
  return weighted_ce(tape, logits, labels, std::move(weights));
}

template <typename F>
Tensor<F> class_balanced_cross_entropy(Tape<F>& tape, const Tensor<F>& logits,
                                       std::span<const int32_t> labels,
                                       double weight_floor) {
  const LogitsGeom g = check_logits(logits, labels);
  if (!(weight_floor > 0.0)) {
    throw ConfigError("loss.weight_floor must be > 0");
  }
  std::vector<int64_t> counts(static_cast<size_t>(g.c), 0);
  for (int64_t v = 0; v < g.voxels; ++v) {
    counts[static_cast<size_t>(labels[static_cast<size_t>(v)])]++;
  }
  int64_t present = 0;
  for (int64_t count : counts) present += count > 0 ? 1 : 0;
  auto weights = std::make_shared<std::vector<double>>(
      static_cast<size_t>(g.c), 0.0);
  for (int64_t ch = 0; ch < g.c; ++ch) {
    const double freq = static_cast<double>(counts[static_cast<size_t>(ch)]) /
                        static_cast<double>(g.voxels);
    (*weights)[static_cast<size_t>(ch)] =
        1.0 / (static_cast<double>(present) * std::max(freq, weight_floor));
  }
  return weighted_ce(tape, logits, labels, std::move(weights));
}

template <typename F>
Tensor<F> soft_dice_loss(Tape<F>& tape, const Tensor<F>& logits,
                         std::span<const int32_t> labels, double smooth,
                         bool include_background) {
  const LogitsGeom g = check_logits(logits, labels);
  if (!(smooth > 0.0)) {
    throw ConfigError("loss.dice_smooth must be > 0");
  }
  const int64_t first = include_background ? 0 : 1;
  const int64_t included = g.c - first;
  if (included < 1) {
    throw Error("soft_dice_loss: no classes left to average over");
  }

  // Softmax probabilities, kept for the backward pass.
  auto probs = std::make_shared<std::vector<F>>(logits.values().size());
  {
    const F* x = logits.values().data();
    F* p = probs->data();
#pragma omp parallel for schedule(static)
    for (int64_t v = 0; v < g.voxels; ++v) {
      const int64_t base = logit_at(v, 0, g.c, g.spatial);
      double max_v = static_cast<double>(x[base]);
      for (int64_t ch = 1; ch < g.c; ++ch) {
        max_v = std::max(max_v, static_cast<double>(x[base + ch * g.spatial]));
      }
      double denom = 0.0;
      for (int64_t ch = 0; ch < g.c; ++ch) {
        const double e =
            std::exp(static_cast<double>(x[base + ch * g.spatial]) - max_v);
        p[base + ch * g.spatial] = static_cast<F>(e);
        denom += e;
      }
      const double inv = 1.0 / denom;
      for (int64_t ch = 0; ch < g.c; ++ch) {
        p[base + ch * g.spatial] = static_cast<F>(
            static_cast<double>(p[base + ch * g.spatial]) * inv);
      }
    }
  }

  auto inter = std::make_shared<std::vector<double>>(static_cast<size_t>(g.c), 0.0);
  auto denom = std::make_shared<std::vector<double>>(static_cast<size_t>(g.c), 0.0);
  const F* p = probs->data();
  for (int64_t ch = first; ch < g.c; ++ch) {
    const double psum = chunked_sum(g.voxels, [&](int64_t v) {
      return static_cast<double>(p[logit_at(v, ch, g.c, g.spatial)]);
    });
    const double isum = chunked_sum(g.voxels, [&](int64_t v) {
      return labels[static_cast<size_t>(v)] == ch
                 ? static_cast<double>(p[logit_at(v, ch, g.c, g.spatial)])
                 : 0.0;
    });
    int64_t gcount = 0;
    for (int64_t v = 0; v < g.voxels; ++v) {
      if (labels[static_cast<size_t>(v)] == ch) ++gcount;
    }
    (*inter)[static_cast<size_t>(ch)] = isum;
    (*denom)[static_cast<size_t>(ch)] =
        psum + static_cast<double>(gcount) + smooth;
  }
  double mean_term = 0.0;
  for (int64_t ch = first; ch < g.c; ++ch) {
    mean_term += (2.0 * (*inter)[static_cast<size_t>(ch)] + smooth) /
                 (*denom)[static_cast<size_t>(ch)];
  }
  mean_term /= static_cast<double>(included);
  auto out = Tensor<F>::scalar(static_cast<F>(1.0 - mean_term));

  auto labels_copy = std::make_shared<std::vector<int32_t>>(labels.begin(),
                                                            labels.end());
  tape.record({logits}, out, [&tape, logits, out, probs, labels_copy, inter,
                              denom, g, first, included, smooth] {
    if (!tape.wants_grad(logits)) return;
    const double gscale = static_cast<double>(out.grad()[0]);
    auto gx = logits.grad_buffer();
    const F* p2 = probs->data();
    const int32_t* lab = labels_copy->data();
    // d(term_c)/dp_c[v] = (2*[label==c]*den_c - (2*I_c + s)) / den_c^2,
    // and dL/dp_c = -(1/included) * that.
    std::vector<double> u(static_cast<size_t>(g.c), 0.0);
    std::vector<double> q(static_cast<size_t>(g.c), 0.0);
    for (int64_t ch = first; ch < g.c; ++ch) {
      const double den = (*denom)[static_cast<size_t>(ch)];
      u[static_cast<size_t>(ch)] = 2.0 / den;
      q[static_cast<size_t>(ch)] =
          (2.0 * (*inter)[static_cast<size_t>(ch)] + smooth) / (den * den);
    }
    const double inv_inc = 1.0 / static_cast<double>(included);
#pragma omp parallel for schedule(static)
    for (int64_t v = 0; v < g.voxels; ++v) {
      const int64_t base = logit_at(v, 0, g.c, g.spatial);
      // dL/dp for this voxel, then chain through softmax.
      double dot = 0.0;
      for (int64_t ch = first; ch < g.c; ++ch) {
        const double dldp =
            -inv_inc * ((lab[v] == ch ? u[static_cast<size_t>(ch)] : 0.0) -
                        q[static_cast<size_t>(ch)]);
        dot += dldp * static_cast<double>(p2[base + ch * g.spatial]);
      }
      for (int64_t ch = 0; ch < g.c; ++ch) {
        double dldp = 0.0;
        if (ch >= first) {
          dldp = -inv_inc * ((lab[v] == ch ? u[static_cast<size_t>(ch)] : 0.0) -
                             q[static_cast<size_t>(ch)]);
        }
        const double pv = static_cast<double>(p2[base + ch * g.spatial]);
        gx[base + ch * g.spatial] +=
            static_cast<F>(gscale * pv * (dldp - dot));
      }
    }
  });
  return out;
}

template <typename F>
Tensor<F> evaluate_loss(Tape<F>& tape, const LossConfig& cfg,
                        const Tensor<F>& logits,
                        std::span<const int32_t> labels) {
  cfg.validate();
  switch (cfg.kind) {
    case LossKind::kCrossEntropy:
      return cross_entropy(tape, logits, labels);
    case LossKind::kBalancedCrossEntropy:
      return class_balanced_cross_entropy(tape, logits, labels,
                                          cfg.weight_floor);
    case LossKind::kDice:
      return soft_dice_loss(tape, logits, labels, cfg.dice_smooth,
                            cfg.dice_includes_background);
  }
  throw Error("unknown loss kind");
}

const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::kCrossEntropy: return "ce";
    case LossKind::kBalancedCrossEntropy: return "balanced_ce";
    case LossKind::kDice: return "dice";
  }
  return "?";
}

LossKind parse_loss(const std::string& name) {
  if (name == "ce") return LossKind::kCrossEntropy;
  if (name == "balanced_ce") return LossKind::kBalancedCrossEntropy;
  if (name == "dice") return LossKind::kDice;
  throw ConfigError("loss.kind must be 'ce', 'balanced_ce' or 'dice', got '" +
                    name + "'");
}

template Tensor<float> cross_entropy(Tape<float>&, const Tensor<float>&,
                                     std::span<const int32_t>);
template Tensor<double> cross_entropy(Tape<double>&, const Tensor<double>&,
                                      std::span<const int32_t>);
template Tensor<float> class_balanced_cross_entropy(Tape<float>&,
                                                    const Tensor<float>&,
                                                    std::span<const int32_t>,
                                                    double);
template Tensor<double> class_balanced_cross_entropy(Tape<double>&,
                                                     const Tensor<double>&,
                                                     std::span<const int32_t>,
                                                     double);
template Tensor<float> soft_dice_loss(Tape<float>&, const Tensor<float>&,
                                      std::span<const int32_t>, double, bool);
template Tensor<double> soft_dice_loss(Tape<double>&, const Tensor<double>&,
                                       std::span<const int32_t>, double, bool);
template Tensor<float> evaluate_loss(Tape<float>&, const LossConfig&,
                                     const Tensor<float>&,
                                     std::span<const int32_t>);
template Tensor<double> evaluate_loss(Tape<double>&, const LossConfig&,
                                      const Tensor<double>&,
                                      std::span<const int32_t>);

}  // namespace voxseg
