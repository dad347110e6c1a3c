#include <algorithm>
#include <cstring>

#include <Eigen/Core>

#include "voxseg/ops.hpp"

namespace voxseg::ops {
namespace {

template <typename F>
using ColMat = Eigen::Matrix<F, Eigen::Dynamic, Eigen::Dynamic>;
template <typename F>
using RowMat = Eigen::Matrix<F, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Conv3dGeom {
  int64_t n = 0, cin = 0, d = 0, h = 0, w = 0;
  int64_t cout = 0, k = 0, stride = 1, pad = 0;
  int64_t od = 0, oh = 0, ow = 0;
  int64_t out_spatial() const { return od * oh * ow; }
  int64_t in_spatial() const { return d * h * w; }
  int64_t patch_rows() const { return cin * k * k * k; }
};

Conv3dGeom conv_geometry(const Shape& xs, const Shape& ws, const Shape& bs,
                         int64_t stride, Padding padding) {
  if (xs.size() != 5) {
    throw Error("conv3d: input must be (N, C, D, H, W), got " + shape_str(xs));
  }
  if (ws.size() != 5 || ws[2] != ws[3] || ws[2] != ws[4]) {
    throw Error("conv3d: weight must be (Cout, Cin, k, k, k), got " +
                shape_str(ws));
  }
  if (ws[1] != xs[1]) {
    throw Error("conv3d: channel mismatch, input has " + std::to_string(xs[1]) +
                " channels but weight expects " + std::to_string(ws[1]));
  }
  if (bs.size() != 1 || bs[0] != ws[0]) {
    throw Error("conv3d: bias must have one value per output channel");
  }
  if (stride < 1) {
    throw Error("conv3d: stride must be positive, got " +
                std::to_string(stride));
  }
  Conv3dGeom g;
  g.n = xs[0];
  g.cin = xs[1];
  g.d = xs[2];
  g.h = xs[3];
  g.w = xs[4];
  g.cout = ws[0];
  g.k = ws[2];
  g.stride = stride;
  if (padding == Padding::kSame) {
    if (g.k % 2 == 0) {
      throw Error("conv3d: same padding requires an odd kernel, got k=" +
                  std::to_string(g.k));
    }
    g.pad = (g.k - 1) / 2;
    g.od = (g.d - 1) / stride + 1;
    g.oh = (g.h - 1) / stride + 1;
    g.ow = (g.w - 1) / stride + 1;
  } else {
    if (g.k > g.d || g.k > g.h || g.k > g.w) {
      throw Error("conv3d: valid padding requires k <= every spatial dim, k=" +
                  std::to_string(g.k) + " vs input " + shape_str(xs));
    }
    g.pad = 0;
    g.od = (g.d - g.k) / stride + 1;
    g.oh = (g.h - g.k) / stride + 1;
    g.ow = (g.w - g.k) / stride + 1;
  }
  return g;
}

// Column-buffer width used by the im2col path. A pure function of the patch
// size, so tile boundaries (and with them every accumulation order) depend
// only on the shapes involved, not on thread count.
int64_t col_tile_width(int64_t patch_rows, size_t elem_size) {
  const int64_t budget = 8ll << 20;
  const int64_t width = budget / (patch_rows * static_cast<int64_t>(elem_size));
  return std::clamp<int64_t>(width, 64, 16384);
}

bool use_im2col(const Conv3dGeom& g, ConvAlgo algo) {
  if (algo == ConvAlgo::kDirect) return false;
  if (algo == ConvAlgo::kIm2col) return true;
  const int64_t macs = g.n * g.out_spatial() * g.cout * g.patch_rows();
  return macs >= (1ll << 24);
}

template <typename F>
void conv_forward_direct(const Conv3dGeom& g, const F* x, const F* w,
                         const F* b, F* out) {
#pragma omp parallel for collapse(3) schedule(static)
  for (int64_t ni = 0; ni < g.n; ++ni) {
    for (int64_t co = 0; co < g.cout; ++co) {
      for (int64_t oz = 0; oz < g.od; ++oz) {
        for (int64_t oy = 0; oy < g.oh; ++oy) {
          for (int64_t ox = 0; ox < g.ow; ++ox) {
            F acc = F(0);
            const int64_t iz0 = oz * g.stride - g.pad;
            const int64_t iy0 = oy * g.stride - g.pad;
            const int64_t ix0 = ox * g.stride - g.pad;
            for (int64_t ci = 0; ci < g.cin; ++ci) {
              for (int64_t kz = 0; kz < g.k; ++kz) {
                const int64_t iz = iz0 + kz;
                if (iz < 0 || iz >= g.d) continue;
                for (int64_t ky = 0; ky < g.k; ++ky) {
                  const int64_t iy = iy0 + ky;
                  if (iy < 0 || iy >= g.h) continue;
                  const F* xrow =
                      x + (((ni * g.cin + ci) * g.d + iz) * g.h + iy) * g.w;
                  const F* wrow =
                      w + (((co * g.cin + ci) * g.k + kz) * g.k + ky) * g.k;
                  for (int64_t kx = 0; kx < g.k; ++kx) {
                    const int64_t ix = ix0 + kx;
                    if (ix < 0 || ix >= g.w) continue;
                    acc += xrow[ix] * wrow[kx];
                  }
                }
              }
            }
            out[((ni * g.cout + co) * g.od + oz) * g.oh * g.ow + oy * g.ow +
                ox] = acc + b[co];
          }
        }
      }
    }
  }
}

// Fills columns [m0, m0+tw) of the patch matrix for batch item ni.
// Column j holds the receptive field of output voxel m0 + j, rows ordered
// (ci, kz, ky, kx). Out-of-range positions are zero.
template <typename F>
void fill_columns(const Conv3dGeom& g, const F* x, int64_t ni, int64_t m0,
                  int64_t tw, F* col, int64_t col_rows) {
  for (int64_t j = 0; j < tw; ++j) {
    const int64_t m = m0 + j;
    const int64_t oz = m / (g.oh * g.ow);
    const int64_t oy = (m / g.ow) % g.oh;
    const int64_t ox = m % g.ow;
    const int64_t iz0 = oz * g.stride - g.pad;
    const int64_t iy0 = oy * g.stride - g.pad;
    const int64_t ix0 = ox * g.stride - g.pad;
    F* column = col + j * col_rows;
    int64_t r = 0;
    for (int64_t ci = 0; ci < g.cin; ++ci) {
      for (int64_t kz = 0; kz < g.k; ++kz) {
        const int64_t iz = iz0 + kz;
        if (iz < 0 || iz >= g.d) {
          std::fill(column + r, column + r + g.k * g.k, F(0));
          r += g.k * g.k;
          continue;
        }
        for (int64_t ky = 0; ky < g.k; ++ky) {
          const int64_t iy = iy0 + ky;
          if (iy < 0 || iy >= g.h) {
            std::fill(column + r, column + r + g.k, F(0));
            r += g.k;
            continue;
          }
          const F* xrow =
              x + (((ni * g.cin + ci) * g.d + iz) * g.h + iy) * g.w;
          for (int64_t kx = 0; kx < g.k; ++kx) {
            const int64_t ix = ix0 + kx;
            column[r++] = (ix < 0 || ix >= g.w) ? F(0) : xrow[ix];
          }
        }
      }
    }
  }
}

template <typename F>
void conv_forward_im2col(const Conv3dGeom& g, const F* x, const F* w,
                         const F* b, F* out) {
  const int64_t rows = g.patch_rows();
  const int64_t m_total = g.out_spatial();
  const int64_t tile = col_tile_width(rows, sizeof(F));
  const int64_t tiles = (m_total + tile - 1) / tile;
  Eigen::Map<const RowMat<F>> wmat(w, g.cout, rows);
  for (int64_t ni = 0; ni < g.n; ++ni) {
#pragma omp parallel
    {
      ColMat<F> cols(rows, tile);
      ColMat<F> prod(g.cout, tile);
#pragma omp for schedule(static)
      for (int64_t t = 0; t < tiles; ++t) {
        const int64_t m0 = t * tile;
        const int64_t tw = std::min(tile, m_total - m0);
        fill_columns(g, x, ni, m0, tw, cols.data(), rows);
        prod.leftCols(tw).noalias() = wmat * cols.leftCols(tw);
        for (int64_t co = 0; co < g.cout; ++co) {
          F* orow = out + (ni * g.cout + co) * m_total + m0;
          for (int64_t j = 0; j < tw; ++j) orow[j] = prod(co, j) + b[co];
        }
      }
    }
  }
}

template <typename F>
void conv_backward_bias(const Conv3dGeom& g, const F* dout, F* db) {
  const int64_t m_total = g.out_spatial();
#pragma omp parallel for schedule(static)
  for (int64_t co = 0; co < g.cout; ++co) {
    double acc = 0.0;
    for (int64_t ni = 0; ni < g.n; ++ni) {
      const F* row = dout + (ni * g.cout + co) * m_total;
      for (int64_t m = 0; m < m_total; ++m) acc += static_cast<double>(row[m]);
    }
    db[co] += static_cast<F>(acc);
  }
}

template <typename F>
void conv_backward_input_direct(const Conv3dGeom& g, const F* w, const F* dout,
                                F* dx) {
#pragma omp parallel for collapse(3) schedule(static)
  for (int64_t ni = 0; ni < g.n; ++ni) {
    for (int64_t ci = 0; ci < g.cin; ++ci) {
      for (int64_t iz = 0; iz < g.d; ++iz) {
        for (int64_t iy = 0; iy < g.h; ++iy) {
          for (int64_t ix = 0; ix < g.w; ++ix) {
            F acc = F(0);
            for (int64_t kz = 0; kz < g.k; ++kz) {
              const int64_t num_z = iz + g.pad - kz;
              if (num_z < 0 || num_z % g.stride) continue;
              const int64_t oz = num_z / g.stride;
              if (oz >= g.od) continue;
              for (int64_t ky = 0; ky < g.k; ++ky) {
                const int64_t num_y = iy + g.pad - ky;
                if (num_y < 0 || num_y % g.stride) continue;
                const int64_t oy = num_y / g.stride;
                if (oy >= g.oh) continue;
                for (int64_t kx = 0; kx < g.k; ++kx) {
                  const int64_t num_x = ix + g.pad - kx;
                  if (num_x < 0 || num_x % g.stride) continue;
                  const int64_t ox = num_x / g.stride;
                  if (ox >= g.ow) continue;
                  for (int64_t co = 0; co < g.cout; ++co) {
                    acc += w[(((co * g.cin + ci) * g.k + kz) * g.k + ky) * g.k +
                             kx] *
                           dout[((ni * g.cout + co) * g.od + oz) * g.oh * g.ow +
                                oy * g.ow + ox];
                  }
                }
              }
            }
            dx[(((ni * g.cin + ci) * g.d + iz) * g.h + iy) * g.w + ix] += acc;
          }
        }
      }
    }
  }
}

template <typename F>
void conv_backward_weight_direct(const Conv3dGeom& g, const F* x,
                                 const F* dout, F* dw) {
#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t co = 0; co < g.cout; ++co) {
    for (int64_t ci = 0; ci < g.cin; ++ci) {
      for (int64_t kz = 0; kz < g.k; ++kz) {
        for (int64_t ky = 0; ky < g.k; ++ky) {
          for (int64_t kx = 0; kx < g.k; ++kx) {
            F acc = F(0);
            for (int64_t ni = 0; ni < g.n; ++ni) {
              for (int64_t oz = 0; oz < g.od; ++oz) {
                const int64_t iz = oz * g.stride - g.pad + kz;
                if (iz < 0 || iz >= g.d) continue;
                for (int64_t oy = 0; oy < g.oh; ++oy) {
                  const int64_t iy = oy * g.stride - g.pad + ky;
                  if (iy < 0 || iy >= g.h) continue;
                  const F* xrow =
                      x + (((ni * g.cin + ci) * g.d + iz) * g.h + iy) * g.w;
                  const F* drow =
                      dout + ((ni * g.cout + co) * g.od + oz) * g.oh * g.ow +
                      oy * g.ow;
                  for (int64_t ox = 0; ox < g.ow; ++ox) {
                    const int64_t ix = ox * g.stride - g.pad + kx;
                    if (ix < 0 || ix >= g.w) continue;
                    acc += xrow[ix] * drow[ox];
                  }
                }
              }
            }
            dw[(((co * g.cin + ci) * g.k + kz) * g.k + ky) * g.k + kx] += acc;
          }
        }
      }
    }
  }
}

// Accumulates dW += dOut * cols^T tile by tile. Tiles run sequentially and
// threads own disjoint column blocks of dW, so the summation order per weight
// is fixed for any thread count.
template <typename F>
void conv_backward_weight_im2col(const Conv3dGeom& g, const F* x,
                                 const F* dout, F* dw) {
  const int64_t rows = g.patch_rows();
  const int64_t m_total = g.out_spatial();
  const int64_t tile = col_tile_width(rows, sizeof(F));
  const int64_t tiles = (m_total + tile - 1) / tile;
  const int64_t kblock = 64;
  const int64_t kblocks = (rows + kblock - 1) / kblock;
  Eigen::Map<RowMat<F>> dwmat(dw, g.cout, rows);
  ColMat<F> cols(rows, tile);
  for (int64_t ni = 0; ni < g.n; ++ni) {
    for (int64_t t = 0; t < tiles; ++t) {
      const int64_t m0 = t * tile;
      const int64_t tw = std::min(tile, m_total - m0);
      fill_columns(g, x, ni, m0, tw, cols.data(), rows);
      Eigen::Map<const RowMat<F>, 0, Eigen::OuterStride<>> gtile(
          dout + ni * g.cout * m_total + m0, g.cout, tw,
          Eigen::OuterStride<>(m_total));
#pragma omp parallel for schedule(static)
      for (int64_t kb = 0; kb < kblocks; ++kb) {
        const int64_t r0 = kb * kblock;
        const int64_t rn = std::min(kblock, rows - r0);
        dwmat.middleCols(r0, rn).noalias() +=
            gtile * cols.block(r0, 0, rn, tw).transpose();
      }
    }
  }
}

template <typename F>
void conv_backward_input_im2col(const Conv3dGeom& g, const F* w, const F* dout,
                                F* dx) {
  const int64_t rows = g.patch_rows();
  const int64_t m_total = g.out_spatial();
  const int64_t tile = col_tile_width(rows, sizeof(F));
  const int64_t tiles = (m_total + tile - 1) / tile;
  const int64_t kpatch = g.k * g.k * g.k;
  const int64_t kblock = 64;
  const int64_t kblocks = (rows + kblock - 1) / kblock;
  Eigen::Map<const RowMat<F>> wmat(w, g.cout, rows);
  ColMat<F> dcols(rows, tile);
  for (int64_t ni = 0; ni < g.n; ++ni) {
    for (int64_t t = 0; t < tiles; ++t) {
      const int64_t m0 = t * tile;
      const int64_t tw = std::min(tile, m_total - m0);
      Eigen::Map<const RowMat<F>, 0, Eigen::OuterStride<>> gtile(
          dout + ni * g.cout * m_total + m0, g.cout, tw,
          Eigen::OuterStride<>(m_total));
#pragma omp parallel for schedule(static)
      for (int64_t kb = 0; kb < kblocks; ++kb) {
        const int64_t r0 = kb * kblock;
        const int64_t rn = std::min(kblock, rows - r0);
        dcols.block(r0, 0, rn, tw).noalias() =
            wmat.middleCols(r0, rn).transpose() * gtile;
      }
      // Scatter-add back into dx. Threads own whole input channels, so
      // every dx element sees its contributions in column order.
#pragma omp parallel for schedule(static)
      for (int64_t ci = 0; ci < g.cin; ++ci) {
        F* dxc = dx + (ni * g.cin + ci) * g.in_spatial();
        for (int64_t j = 0; j < tw; ++j) {
          const int64_t m = m0 + j;
          const int64_t oz = m / (g.oh * g.ow);
          const int64_t oy = (m / g.ow) % g.oh;
          const int64_t ox = m % g.ow;
          const int64_t iz0 = oz * g.stride - g.pad;
          const int64_t iy0 = oy * g.stride - g.pad;
          const int64_t ix0 = ox * g.stride - g.pad;
          const F* column = dcols.data() + j * rows + ci * kpatch;
          int64_t r = 0;
          for (int64_t kz = 0; kz < g.k; ++kz) {
            const int64_t iz = iz0 + kz;
            if (iz < 0 || iz >= g.d) {
              r += g.k * g.k;
              continue;
            }
            for (int64_t ky = 0; ky < g.k; ++ky) {
              const int64_t iy = iy0 + ky;
              if (iy < 0 || iy >= g.h) {
                r += g.k;
                continue;
              }
              F* dxrow = dxc + (iz * g.h + iy) * g.w;
              for (int64_t kx = 0; kx < g.k; ++kx, ++r) {
                const int64_t ix = ix0 + kx;
                if (ix >= 0 && ix < g.w) dxrow[ix] += column[r];
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

template <typename F>
Tensor<F> conv3d(Tape<F>& tape, const Tensor<F>& x, const Tensor<F>& w,
                 const Tensor<F>& b, int64_t stride, Padding padding,
                 ConvAlgo algo) {
  if (!x.defined() || !w.defined() || !b.defined()) {
    throw Error("conv3d: undefined tensor argument");
  }
  const Conv3dGeom g =
      conv_geometry(x.shape(), w.shape(), b.shape(), stride, padding);
  auto out = Tensor<F>::zeros({g.n, g.cout, g.od, g.oh, g.ow});
  const bool im2col = use_im2col(g, algo);
  if (im2col) {
    conv_forward_im2col(g, x.values().data(), w.values().data(),
                        b.values().data(), out.mutable_values().data());
  } else {
    conv_forward_direct(g, x.values().data(), w.values().data(),
                        b.values().data(), out.mutable_values().data());
  }
  tape.record({x, w, b}, out, [&tape, x, w, b, out, g, im2col] {
    auto og = out.grad();
    if (tape.wants_grad(b)) {
      conv_backward_bias(g, og.data(), b.grad_buffer().data());
    }
    if (tape.wants_grad(w)) {
      if (im2col) {
        conv_backward_weight_im2col(g, x.values().data(), og.data(),
                                    w.grad_buffer().data());
      } else {
        conv_backward_weight_direct(g, x.values().data(), og.data(),
                                    w.grad_buffer().data());
      }
    }
    if (tape.wants_grad(x)) {
      if (im2col) {
        conv_backward_input_im2col(g, w.values().data(), og.data(),
                                   x.grad_buffer().data());
      } else {
        conv_backward_input_direct(g, w.values().data(), og.data(),
                                   x.grad_buffer().data());
      }
    }
  });
  return out;
}

template <typename F>
Tensor<F> transposed_conv3d(Tape<F>& tape, const Tensor<F>& x,
                            const Tensor<F>& w, int64_t stride) {
  if (!x.defined() || !w.defined()) {
    throw Error("transposed_conv3d: undefined tensor argument");
  }
  if (x.rank() != 5) {
    throw Error("transposed_conv3d: input must be (N, C, D, H, W), got " +
                shape_str(x.shape()));
  }
  if (w.rank() != 5 || w.dim(2) != w.dim(3) || w.dim(2) != w.dim(4)) {
    throw Error("transposed_conv3d: weight must be (Cin, Cout, k, k, k), got " +
                shape_str(w.shape()));
  }
  if (w.dim(0) != x.dim(1)) {
    throw Error("transposed_conv3d: channel mismatch, input has " +
                std::to_string(x.dim(1)) + " channels but weight expects " +
                std::to_string(w.dim(0)));
  }
  if (stride < 1 || w.dim(2) != stride) {
    throw Error("transposed_conv3d: kernel must equal stride, got k=" +
                std::to_string(w.dim(2)) + " stride=" + std::to_string(stride));
  }
  const int64_t n = x.dim(0), cin = x.dim(1), d = x.dim(2), h = x.dim(3),
                wd = x.dim(4);
  const int64_t cout = w.dim(1), k = stride;
  const int64_t od = d * k, oh = h * k, ow = wd * k;
  auto out = Tensor<F>::zeros({n, cout, od, oh, ow});
  {
    const F* xv = x.values().data();
    const F* wv = w.values().data();
    F* ov = out.mutable_values().data();
#pragma omp parallel for collapse(3) schedule(static)
    for (int64_t ni = 0; ni < n; ++ni) {
      for (int64_t co = 0; co < cout; ++co) {
        for (int64_t z = 0; z < d; ++z) {
          for (int64_t y = 0; y < h; ++y) {
            for (int64_t xx = 0; xx < wd; ++xx) {
              for (int64_t dz = 0; dz < k; ++dz) {
                for (int64_t dy = 0; dy < k; ++dy) {
                  for (int64_t dx = 0; dx < k; ++dx) {
                    F acc = F(0);
                    for (int64_t ci = 0; ci < cin; ++ci) {
                      acc += xv[(((ni * cin + ci) * d + z) * h + y) * wd + xx] *
                             wv[(((ci * cout + co) * k + dz) * k + dy) * k + dx];
                    }
                    ov[(((ni * cout + co) * od + z * k + dz) * oh + y * k + dy) *
                           ow +
                       xx * k + dx] = acc;
                  }
                }
              }
            }
          }
        }
      }
    }
  }
  tape.record({x, w}, out, [&tape, x, w, out, n, cin, cout, d, h, wd, k, od,
                            oh, ow] {
    auto og = out.grad();
    const F* dov = og.data();
    if (tape.wants_grad(x)) {
      F* dxv = x.grad_buffer().data();
      const F* wv = w.values().data();
#pragma omp parallel for collapse(3) schedule(static)
      for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t ci = 0; ci < cin; ++ci) {
          for (int64_t z = 0; z < d; ++z) {
            for (int64_t y = 0; y < h; ++y) {
              for (int64_t xx = 0; xx < wd; ++xx) {
                F acc = F(0);
                for (int64_t co = 0; co < cout; ++co) {
                  for (int64_t dz = 0; dz < k; ++dz) {
                    for (int64_t dy = 0; dy < k; ++dy) {
                      for (int64_t dx = 0; dx < k; ++dx) {
                        acc +=
                            wv[(((ci * cout + co) * k + dz) * k + dy) * k + dx] *
                            dov[(((ni * cout + co) * od + z * k + dz) * oh +
                                 y * k + dy) *
                                    ow +
                                xx * k + dx];
                      }
                    }
                  }
                }
                dxv[(((ni * cin + ci) * d + z) * h + y) * wd + xx] += acc;
              }
            }
          }
        }
      }
    }
    if (tape.wants_grad(w)) {
      F* dwv = w.grad_buffer().data();
      const F* xv = x.values().data();
#pragma omp parallel for collapse(2) schedule(static)
      for (int64_t ci = 0; ci < cin; ++ci) {
        for (int64_t co = 0; co < cout; ++co) {
          for (int64_t dz = 0; dz < k; ++dz) {
            for (int64_t dy = 0; dy < k; ++dy) {
              for (int64_t dx = 0; dx < k; ++dx) {
                F acc = F(0);
                for (int64_t ni = 0; ni < n; ++ni) {
                  for (int64_t z = 0; z < d; ++z) {
                    for (int64_t y = 0; y < h; ++y) {
                      for (int64_t xx = 0; xx < wd; ++xx) {
                        acc +=
                            xv[(((ni * cin + ci) * d + z) * h + y) * wd + xx] *
                            dov[(((ni * cout + co) * od + z * k + dz) * oh +
                                 y * k + dy) *
                                    ow +
                                xx * k + dx];
                      }
                    }
                  }
                }
                dwv[(((ci * cout + co) * k + dz) * k + dy) * k + dx] +=
                    static_cast<F>(acc);
              }
            }
          }
        }
      }
    }
  });
  return out;
}

template Tensor<float> conv3d(Tape<float>&, const Tensor<float>&,
                              const Tensor<float>&, const Tensor<float>&,
                              int64_t, Padding, ConvAlgo);
template Tensor<double> conv3d(Tape<double>&, const Tensor<double>&,
                               const Tensor<double>&, const Tensor<double>&,
                               int64_t, Padding, ConvAlgo);
template Tensor<float> transposed_conv3d(Tape<float>&, const Tensor<float>&,
                                         const Tensor<float>&, int64_t);
template Tensor<double> transposed_conv3d(Tape<double>&, const Tensor<double>&,
                                          const Tensor<double>&, int64_t);

}  // namespace voxseg::ops
