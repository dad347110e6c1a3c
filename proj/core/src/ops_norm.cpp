#include <cmath>
#include <memory>
#include <vector>

#include "voxseg/ops.hpp"

namespace voxseg::ops {

template <typename F>
Tensor<F> batch_norm(Tape<F>& tape, const Tensor<F>& x, const Tensor<F>& gamma,
                     const Tensor<F>& beta, Tensor<F> running_mean,
                     Tensor<F> running_var, NormMode mode, F momentum, F eps) {
  if (!x.defined() || x.rank() != 5) {
    throw Error("batch_norm: input must be (N, C, D, H, W)");
  }
  const int64_t n = x.dim(0);
  const int64_t c = x.dim(1);
  const int64_t spatial = x.dim(2) * x.dim(3) * x.dim(4);
  for (const Tensor<F>* t : std::initializer_list<const Tensor<F>*>{
           &gamma, &beta, &running_mean, &running_var}) {
    if (!t->defined() || t->rank() != 1 || t->dim(0) != c) {
      throw Error("batch_norm: channel mismatch, input has " +
                  std::to_string(c) + " channels");
    }
  }
  const int64_t m = n * spatial;

  auto mu = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  auto sigma = std::make_shared<std::vector<double>>(static_cast<size_t>(c));
  auto xv = x.values();
  if (mode == NormMode::kTrain) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const F* p = xv.data() + (i * c + ch) * spatial;
        for (int64_t s = 0; s < spatial; ++s) sum += static_cast<double>(p[s]);
      }
      const double mean = sum / static_cast<double>(m);
      double var_sum = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const F* p = xv.data() + (i * c + ch) * spatial;
        for (int64_t s = 0; s < spatial; ++s) {
          const double d = static_cast<double>(p[s]) - mean;
          var_sum += d * d;
        }
      }
      const double var = var_sum / static_cast<double>(m);
      (*mu)[static_cast<size_t>(ch)] = mean;
      (*sigma)[static_cast<size_t>(ch)] =
          std::sqrt(var + static_cast<double>(eps));
      // Running buffers fold in the biased batch statistics.
      auto rm = running_mean.mutable_values();
      auto rv = running_var.mutable_values();
      rm[ch] = momentum * rm[ch] + (F(1) - momentum) * static_cast<F>(mean);
      rv[ch] = momentum * rv[ch] + (F(1) - momentum) * static_cast<F>(var);
    }
  } else {
    auto rm = running_mean.values();
    auto rv = running_var.values();
    for (int64_t ch = 0; ch < c; ++ch) {
      (*mu)[static_cast<size_t>(ch)] = static_cast<double>(rm[ch]);
      (*sigma)[static_cast<size_t>(ch)] = std::sqrt(
          static_cast<double>(rv[ch]) + static_cast<double>(eps));
    }
  }

  auto out = Tensor<F>::zeros(x.shape());
  auto ov = out.mutable_values();
  auto gv = gamma.values();
  auto bv = beta.values();
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t ch = 0; ch < c; ++ch) {
      const F* p = xv.data() + (i * c + ch) * spatial;
      F* q = ov.data() + (i * c + ch) * spatial;
      const double inv = 1.0 / (*sigma)[static_cast<size_t>(ch)];
      const double mean = (*mu)[static_cast<size_t>(ch)];
      const double g = static_cast<double>(gv[ch]);
      const double b = static_cast<double>(bv[ch]);
      for (int64_t s = 0; s < spatial; ++s) {
        q[s] = static_cast<F>(
            g * ((static_cast<double>(p[s]) - mean) * inv) + b);
      }
    }
  }

  tape.record({x, gamma, beta}, out,
              [&tape, x, gamma, beta, out, mu, sigma, mode, n, c, spatial, m] {
    auto og = out.grad();
    auto xv2 = x.values();
    auto gv2 = gamma.values();
    const bool want_x = tape.wants_grad(x);
    const bool want_gamma = tape.wants_grad(gamma);
    const bool want_beta = tape.wants_grad(beta);
    for (int64_t ch = 0; ch < c; ++ch) {
      const double mean = (*mu)[static_cast<size_t>(ch)];
      const double inv = 1.0 / (*sigma)[static_cast<size_t>(ch)];
      double sum_dy = 0.0;
      double sum_dy_xhat = 0.0;
      for (int64_t i = 0; i < n; ++i) {
        const F* go = og.data() + (i * c + ch) * spatial;
        const F* px = xv2.data() + (i * c + ch) * spatial;
        for (int64_t s = 0; s < spatial; ++s) {
          const double dy = static_cast<double>(go[s]);
          const double xhat = (static_cast<double>(px[s]) - mean) * inv;
          sum_dy += dy;
          sum_dy_xhat += dy * xhat;
        }
      }
      if (want_gamma) {
        gamma.grad_buffer()[ch] += static_cast<F>(sum_dy_xhat);
      }
      if (want_beta) {
        beta.grad_buffer()[ch] += static_cast<F>(sum_dy);
      }
      if (want_x) {
        auto gx = x.grad_buffer();
        const double g = static_cast<double>(gv2[ch]);
        if (mode == NormMode::kTrain) {
          const double inv_m = 1.0 / static_cast<double>(m);
          for (int64_t i = 0; i < n; ++i) {
            const F* go = og.data() + (i * c + ch) * spatial;
            const F* px = xv2.data() + (i * c + ch) * spatial;
            F* dst = gx.data() + (i * c + ch) * spatial;
            for (int64_t s = 0; s < spatial; ++s) {
              const double dy = static_cast<double>(go[s]);
              const double xhat = (static_cast<double>(px[s]) - mean) * inv;
              dst[s] += static_cast<F>(
                  g * inv *
                  (dy - sum_dy * inv_m - xhat * sum_dy_xhat * inv_m));
            }
          }
        } else {
          // Affine map with frozen statistics.
          for (int64_t i = 0; i < n; ++i) {
            const F* go = og.data() + (i * c + ch) * spatial;
            F* dst = gx.data() + (i * c + ch) * spatial;
            for (int64_t s = 0; s < spatial; ++s) {
              dst[s] += static_cast<F>(static_cast<double>(go[s]) * g * inv);
            }
          }
        }
      }
    }
  });
  return out;
}

template Tensor<float> batch_norm(Tape<float>&, const Tensor<float>&,
                                  const Tensor<float>&, const Tensor<float>&,
                                  Tensor<float>, Tensor<float>, NormMode, float,
                                  float);
template Tensor<double> batch_norm(Tape<double>&, const Tensor<double>&,
                                   const Tensor<double>&, const Tensor<double>&,
                                   Tensor<double>, Tensor<double>, NormMode,
                                   double, double);

}  // namespace voxseg::ops
