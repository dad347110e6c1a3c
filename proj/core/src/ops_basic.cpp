#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "voxseg/ops.hpp"

namespace voxseg::ops {
namespace {

template <typename F>
void check_defined(const Tensor<F>& t, const char* op) {
  if (!t.defined()) {
    throw Error(std::string(op) + ": undefined tensor argument");
  }
}

}  // namespace

template <typename F>
Tensor<F> relu(Tape<F>& tape, const Tensor<F>& x) {
  check_defined(x, "relu");
  auto out = Tensor<F>::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.mutable_values();
  const int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) ov[i] = xv[i] > F(0) ? xv[i] : F(0);
  tape.record({x}, out, [&tape, x, out] {
    if (!tape.wants_grad(x)) return;
    auto g = x.grad_buffer();
    auto og = out.grad();
    auto xv2 = x.values();
    // Subgradient 0 at the kink.
    for (int64_t i = 0; i < std::ssize(xv2); ++i) {
      if (xv2[i] > F(0)) g[i] += og[i];
    }
  });
  return out;
}

namespace {

enum class Elementwise { kAdd, kMul };

template <typename F>
Tensor<F> binary_op(Tape<F>& tape, const Tensor<F>& a, const Tensor<F>& b,
                    Elementwise kind) {
  const char* name = kind == Elementwise::kAdd ? "add" : "mul";
  check_defined(a, name);
  check_defined(b, name);
  const bool a_scalar = a.size() == 1;
  const bool b_scalar = b.size() == 1;
  if (a.shape() != b.shape() && !a_scalar && !b_scalar) {
    throw Error(std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
                " vs " + shape_str(b.shape()));
  }
  const Shape& out_shape = a_scalar ? b.shape() : a.shape();
  auto out = Tensor<F>::zeros(out_shape);
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.mutable_values();
  const int64_t n = out.size();
  for (int64_t i = 0; i < n; ++i) {
    const F av_i = av[a_scalar ? 0 : i];
    const F bv_i = bv[b_scalar ? 0 : i];
    ov[i] = kind == Elementwise::kAdd ? av_i + bv_i : av_i * bv_i;
  }
  tape.record({a, b}, out, [&tape, a, b, out, kind, a_scalar, b_scalar] {
    auto og = out.grad();
    const int64_t n2 = out.size();
    auto accumulate = [&](const Tensor<F>& t, bool t_scalar,
                          const Tensor<F>& other, bool other_scalar) {
      if (!tape.wants_grad(t)) return;
      auto g = t.grad_buffer();
      auto otherv = other.values();
      if (t_scalar) {
        double acc = 0.0;
        for (int64_t i = 0; i < n2; ++i) {
          const double factor =
              kind == Elementwise::kAdd
                  ? 1.0
                  : static_cast<double>(otherv[other_scalar ? 0 : i]);
          acc += static_cast<double>(og[i]) * factor;
        }
        g[0] += static_cast<F>(acc);
      } else {
        for (int64_t i = 0; i < n2; ++i) {
          const F factor = kind == Elementwise::kAdd
                               ? F(1)
                               : otherv[other_scalar ? 0 : i];
          g[i] += og[i] * factor;
        }
      }
    };
    accumulate(a, a_scalar, b, b_scalar);
    accumulate(b, b_scalar, a, a_scalar);
  });
  return out;
}

}  // namespace

template <typename F>
Tensor<F> add(Tape<F>& tape, const Tensor<F>& a, const Tensor<F>& b) {
  return binary_op(tape, a, b, Elementwise::kAdd);
}

template <typename F>
Tensor<F> mul(Tape<F>& tape, const Tensor<F>& a, const Tensor<F>& b) {
  return binary_op(tape, a, b, Elementwise::kMul);
}

namespace {

struct ReducePlan {
  Shape out_shape;
  std::vector<int64_t> out_stride_per_axis;  // 0 for reduced axes
  int64_t count = 1;
};

ReducePlan plan_reduction(const Shape& in_shape, const std::vector<int>& axes) {
  const int rank = static_cast<int>(in_shape.size());
  std::vector<bool> reduced(static_cast<size_t>(rank), false);
  if (axes.empty()) {
    std::fill(reduced.begin(), reduced.end(), true);
  } else {
    for (int a : axes) {
      if (a < 0 || a >= rank) {
        throw Error("reduce: axis " + std::to_string(a) +
                    " out of range for shape " + shape_str(in_shape));
      }
      if (reduced[static_cast<size_t>(a)]) {
        throw Error("reduce: duplicate axis " + std::to_string(a));
      }
      reduced[static_cast<size_t>(a)] = true;
    }
  }
  ReducePlan plan;
  for (int a = 0; a < rank; ++a) {
    if (reduced[static_cast<size_t>(a)]) {
      plan.count *= in_shape[static_cast<size_t>(a)];
    } else {
      plan.out_shape.push_back(in_shape[static_cast<size_t>(a)]);
    }
  }
  // Row-major strides of the output, spread over the input axes.
  plan.out_stride_per_axis.assign(static_cast<size_t>(rank), 0);
  int64_t stride = 1;
  for (int a = rank - 1; a >= 0; --a) {
    if (!reduced[static_cast<size_t>(a)]) {
      plan.out_stride_per_axis[static_cast<size_t>(a)] = stride;
      stride *= in_shape[static_cast<size_t>(a)];
    }
  }
  return plan;
}

template <typename F>
Tensor<F> reduce_impl(Tape<F>& tape, const Tensor<F>& x,
                      const std::vector<int>& axes, bool mean) {
  check_defined(x, "reduce");
  const ReducePlan plan = plan_reduction(x.shape(), axes);
  const Shape& in_shape = x.shape();
  const int rank = x.rank();
  auto out = Tensor<F>::zeros(plan.out_shape);
  auto xv = x.values();

  // Map every input index to its output slot; accumulate in double so the
  // result does not depend on summation luck.
  std::vector<double> acc(static_cast<size_t>(out.size()), 0.0);
  std::vector<int64_t> idx(static_cast<size_t>(rank), 0);
  std::vector<int64_t> out_index_cache(static_cast<size_t>(x.size()));
  int64_t out_idx = 0;
  for (int64_t i = 0; i < x.size(); ++i) {
    acc[static_cast<size_t>(out_idx)] += static_cast<double>(xv[i]);
    out_index_cache[static_cast<size_t>(i)] = out_idx;
    for (int a = rank - 1; a >= 0; --a) {
      idx[static_cast<size_t>(a)]++;
      out_idx += plan.out_stride_per_axis[static_cast<size_t>(a)];
      if (idx[static_cast<size_t>(a)] < in_shape[static_cast<size_t>(a)]) break;
      idx[static_cast<size_t>(a)] = 0;
      out_idx -= plan.out_stride_per_axis[static_cast<size_t>(a)] *
                 in_shape[static_cast<size_t>(a)];
    }
  }
  const double scale = mean ? 1.0 / static_cast<double>(plan.count) : 1.0;
  auto ov = out.mutable_values();
  for (int64_t i = 0; i < out.size(); ++i) {
    ov[i] = static_cast<F>(acc[static_cast<size_t>(i)] * scale);
  }

  auto cache = std::make_shared<std::vector<int64_t>>(std::move(out_index_cache));
  tape.record({x}, out, [&tape, x, out, cache, scale] {
    if (!tape.wants_grad(x)) return;
    auto g = x.grad_buffer();
    auto og = out.grad();
    const auto& map = *cache;
    for (int64_t i = 0; i < std::ssize(map); ++i) {
      g[i] += static_cast<F>(
          static_cast<double>(og[map[static_cast<size_t>(i)]]) * scale);
    }
  });
  return out;
}

}  // namespace

template <typename F>
Tensor<F> reduce_sum(Tape<F>& tape, const Tensor<F>& x,
                     const std::vector<int>& axes) {
  return reduce_impl(tape, x, axes, false);
}

template <typename F>
Tensor<F> reduce_mean(Tape<F>& tape, const Tensor<F>& x,
                      const std::vector<int>& axes) {
  return reduce_impl(tape, x, axes, true);
}

template <typename F>
Tensor<F> concat_channels(Tape<F>& tape, const Tensor<F>& a,
                          const Tensor<F>& b) {
  check_defined(a, "concat_channels");
  check_defined(b, "concat_channels");
  if (a.rank() < 2 || b.rank() != a.rank()) {
    throw Error("concat_channels: operands must share rank >= 2");
  }
  for (int axis = 0; axis < a.rank(); ++axis) {
    if (axis != 1 && a.dim(axis) != b.dim(axis)) {
      throw Error("concat_channels: shape mismatch " + shape_str(a.shape()) +
                  " vs " + shape_str(b.shape()));
    }
  }
  Shape out_shape = a.shape();
  out_shape[1] = a.dim(1) + b.dim(1);
  auto out = Tensor<F>::zeros(out_shape);

  const int64_t n = a.dim(0);
  int64_t spatial = 1;
  for (int axis = 2; axis < a.rank(); ++axis) spatial *= a.dim(axis);
  const int64_t a_block = a.dim(1) * spatial;
  const int64_t b_block = b.dim(1) * spatial;
  auto av = a.values();
  auto bv = b.values();
  auto ov = out.mutable_values();
  for (int64_t i = 0; i < n; ++i) {
    std::memcpy(ov.data() + i * (a_block + b_block), av.data() + i * a_block,
                static_cast<size_t>(a_block) * sizeof(F));
    std::memcpy(ov.data() + i * (a_block + b_block) + a_block,
                bv.data() + i * b_block,
                static_cast<size_t>(b_block) * sizeof(F));
  }
  tape.record({a, b}, out, [&tape, a, b, out, n, a_block, b_block] {
    auto og = out.grad();
    if (tape.wants_grad(a)) {
      auto g = a.grad_buffer();
      for (int64_t i = 0; i < n; ++i) {
        const F* src = og.data() + i * (a_block + b_block);
        F* dst = g.data() + i * a_block;
        for (int64_t j = 0; j < a_block; ++j) dst[j] += src[j];
      }
    }
    if (tape.wants_grad(b)) {
      auto g = b.grad_buffer();
      for (int64_t i = 0; i < n; ++i) {
        const F* src = og.data() + i * (a_block + b_block) + a_block;
        F* dst = g.data() + i * b_block;
        for (int64_t j = 0; j < b_block; ++j) dst[j] += src[j];
      }
    }
  });
  return out;
}

template <typename F>
Tensor<F> softmax_channels(Tape<F>& tape, const Tensor<F>& x) {
  check_defined(x, "softmax_channels");
  if (x.rank() < 2 || x.dim(1) < 2) {
    throw Error("softmax_channels: need an (N, C, ...) tensor with C >= 2, got " +
                shape_str(x.shape()));
  }
  const int64_t n = x.dim(0);
  const int64_t c = x.dim(1);
  int64_t spatial = 1;
  for (int axis = 2; axis < x.rank(); ++axis) spatial *= x.dim(axis);

  auto out = Tensor<F>::zeros(x.shape());
  auto xv = x.values();
  auto ov = out.mutable_values();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t s = 0; s < spatial; ++s) {
      const int64_t base = i * c * spatial + s;
      F max_v = xv[base];
      for (int64_t ch = 1; ch < c; ++ch) {
        max_v = std::max(max_v, xv[base + ch * spatial]);
      }
      double denom = 0.0;
      for (int64_t ch = 0; ch < c; ++ch) {
        const double e = std::exp(static_cast<double>(xv[base + ch * spatial]) -
                                  static_cast<double>(max_v));
        ov[base + ch * spatial] = static_cast<F>(e);
        denom += e;
      }
      const double inv = 1.0 / denom;
      for (int64_t ch = 0; ch < c; ++ch) {
        ov[base + ch * spatial] = static_cast<F>(
            static_cast<double>(ov[base + ch * spatial]) * inv);
      }
    }
  }
  tape.record({x}, out, [&tape, x, out, n, c, spatial] {
    if (!tape.wants_grad(x)) return;
    auto g = x.grad_buffer();
    auto og = out.grad();
    auto pv = out.values();
    for (int64_t i = 0; i < n; ++i) {
      for (int64_t s = 0; s < spatial; ++s) {
        const int64_t base = i * c * spatial + s;
        double dot = 0.0;
        for (int64_t ch = 0; ch < c; ++ch) {
          const int64_t at = base + ch * spatial;
          dot += static_cast<double>(og[at]) * static_cast<double>(pv[at]);
        }
        for (int64_t ch = 0; ch < c; ++ch) {
          const int64_t at = base + ch * spatial;
          g[at] += static_cast<F>(static_cast<double>(pv[at]) *
                                  (static_cast<double>(og[at]) - dot));
        }
      }
    }
  });
  return out;
}

template Tensor<float> relu(Tape<float>&, const Tensor<float>&);
template Tensor<double> relu(Tape<double>&, const Tensor<double>&);
template Tensor<float> add(Tape<float>&, const Tensor<float>&,
                           const Tensor<float>&);
template Tensor<double> add(Tape<double>&, const Tensor<double>&,
                            const Tensor<double>&);
template Tensor<float> mul(Tape<float>&, const Tensor<float>&,
                           const Tensor<float>&);
template Tensor<double> mul(Tape<double>&, const Tensor<double>&,
                            const Tensor<double>&);
template Tensor<float> reduce_sum(Tape<float>&, const Tensor<float>&,
                                  const std::vector<int>&);
template Tensor<double> reduce_sum(Tape<double>&, const Tensor<double>&,
                                   const std::vector<int>&);
template Tensor<float> reduce_mean(Tape<float>&, const Tensor<float>&,
                                   const std::vector<int>&);
template Tensor<double> reduce_mean(Tape<double>&, const Tensor<double>&,
                                    const std::vector<int>&);
template Tensor<float> concat_channels(Tape<float>&, const Tensor<float>&,
                                       const Tensor<float>&);
template Tensor<double> concat_channels(Tape<double>&, const Tensor<double>&,
                                        const Tensor<double>&);
template Tensor<float> softmax_channels(Tape<float>&, const Tensor<float>&);
template Tensor<double> softmax_channels(Tape<double>&, const Tensor<double>&);

}  // namespace voxseg::ops
