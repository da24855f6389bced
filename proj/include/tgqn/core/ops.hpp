#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "tgqn/core/autodiff.hpp"
#include "tgqn/core/blas.hpp"
#include "tgqn/core/tensor.hpp"

namespace tgqn {

namespace detail {

template <typename T>
inline void check(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

// Patch matrix for convolution: col is (C*kh*kw) x (B*oh*ow), columns ordered
// batch-major. Out-of-bounds taps are zero.
template <typename T>
void im2col(const T* x, int b_count, int c, int h, int w, int kh, int kw,
            int stride, int pad, int oh, int ow, T* col) {
  const int cols_per_sample = oh * ow;
  const int total_cols = b_count * cols_per_sample;
  for (int cc = 0; cc < c; ++cc) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const int row = (cc * kh + ki) * kw + kj;
        T* dst = col + static_cast<std::size_t>(row) * total_cols;
        for (int b = 0; b < b_count; ++b) {
          const T* xb = x + (static_cast<std::size_t>(b) * c + cc) * h * w;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ki;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kj;
              const bool in = iy >= 0 && iy < h && ix >= 0 && ix < w;
              dst[(static_cast<std::size_t>(b) * oh + oy) * ow + ox] =
                  in ? xb[iy * w + ix] : T(0);
            }
          }
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <typename T>
void col2im_add(const T* col, int b_count, int c, int h, int w, int kh, int kw,
                int stride, int pad, int oh, int ow, T* x) {
  const int total_cols = b_count * oh * ow;
  for (int cc = 0; cc < c; ++cc) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const int row = (cc * kh + ki) * kw + kj;
        const T* src = col + static_cast<std::size_t>(row) * total_cols;
        for (int b = 0; b < b_count; ++b) {
          T* xb = x + (static_cast<std::size_t>(b) * c + cc) * h * w;
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride - pad + ki;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride - pad + kj;
              if (ix < 0 || ix >= w) continue;
              xb[iy * w + ix] +=
                  src[(static_cast<std::size_t>(b) * oh + oy) * ow + ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> add(Graph<T>& g, Var<T> a, Var<T> b) {
  detail::check<T>(a->value.same_shape(b->value), "add: shape mismatch");
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a->value[i] + b->value[i];
  const bool rg = a->requires_grad || b->requires_grad;
  return g.make(std::move(out), rg,
                [a, b](Graph<T>&, typename Graph<T>::Node& n) {
                  accumulate(a, n.grad);
                  accumulate(b, n.grad);
                });
}

template <typename T>
Var<T> sub(Graph<T>& g, Var<T> a, Var<T> b) {
  detail::check<T>(a->value.same_shape(b->value), "sub: shape mismatch");
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a->value[i] - b->value[i];
  const bool rg = a->requires_grad || b->requires_grad;
  return g.make(std::move(out), rg,
                [a, b](Graph<T>&, typename Graph<T>::Node& n) {
                  accumulate(a, n.grad);
                  if (!b->requires_grad) return;
                  Tensor<T>& gb = b->g();
                  for (std::size_t i = 0; i < n.grad.size(); ++i)
                    gb[i] -= n.grad[i];
                });
}

template <typename T>
Var<T> mul(Graph<T>& g, Var<T> a, Var<T> b) {
  detail::check<T>(a->value.same_shape(b->value), "mul: shape mismatch");
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a->value[i] * b->value[i];
  const bool rg = a->requires_grad || b->requires_grad;
  return g.make(std::move(out), rg,
                [a, b](Graph<T>&, typename Graph<T>::Node& n) {
                  if (a->requires_grad) {
                    Tensor<T>& ga = a->g();
                    for (std::size_t i = 0; i < n.grad.size(); ++i)
                      ga[i] += n.grad[i] * b->value[i];
                  }
                  if (b->requires_grad) {
                    Tensor<T>& gb = b->g();
                    for (std::size_t i = 0; i < n.grad.size(); ++i)
                      gb[i] += n.grad[i] * a->value[i];
                  }
                });
}

template <typename T>
Var<T> scale(Graph<T>& g, Var<T> a, T s) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * s;
  return g.make(std::move(out), a->requires_grad,
                [a, s](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (std::size_t i = 0; i < n.grad.size(); ++i)
                    ga[i] += n.grad[i] * s;
                });
}

template <typename T>
Var<T> add_scalar(Graph<T>& g, Var<T> a, T c) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] + c;
  return g.make(std::move(out), a->requires_grad,
                [a](Graph<T>&, typename Graph<T>::Node& n) {
                  accumulate(a, n.grad);
                });
}

template <typename T>
Var<T> relu(Graph<T>& g, Var<T> a) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a->value[i] > T(0) ? a->value[i] : T(0);
  return g.make(std::move(out), a->requires_grad,
                [a](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (std::size_t i = 0; i < n.grad.size(); ++i)
                    if (a->value[i] > T(0)) ga[i] += n.grad[i];
                });
}

template <typename T>
Var<T> sigmoid(Graph<T>& g, Var<T> a) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = T(1) / (T(1) + std::exp(-a->value[i]));
  return g.make(std::move(out), a->requires_grad,
                [a](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    const T y = n.value[i];
                    ga[i] += n.grad[i] * y * (T(1) - y);
                  }
                });
}

template <typename T>
Var<T> tanh_op(Graph<T>& g, Var<T> a) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(a->value[i]);
  return g.make(std::move(out), a->requires_grad,
                [a](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (std::size_t i = 0; i < n.grad.size(); ++i) {
                    const T y = n.value[i];
                    ga[i] += n.grad[i] * (T(1) - y * y);
                  }
                });
}

template <typename T>
Var<T> exp_op(Graph<T>& g, Var<T> a) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->value[i]);
  return g.make(std::move(out), a->requires_grad,
                [a](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (std::size_t i = 0; i < n.grad.size(); ++i)
                    ga[i] += n.grad[i] * n.value[i];
                });
}

template <typename T>
Var<T> square(Graph<T>& g, Var<T> a) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = a->value[i] * a->value[i];
  return g.make(std::move(out), a->requires_grad,
                [a](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (std::size_t i = 0; i < n.grad.size(); ++i)
                    ga[i] += n.grad[i] * T(2) * a->value[i];
                });
}

// Hard clamp; gradient is zero outside the open interval.
template <typename T>
Var<T> clamp(Graph<T>& g, Var<T> a, T lo, T hi) {
  Tensor<T> out(a->value.shape());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = std::min(hi, std::max(lo, a->value[i]));
  return g.make(std::move(out), a->requires_grad,
                [a, lo, hi](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (std::size_t i = 0; i < n.grad.size(); ++i)
                    if (a->value[i] > lo && a->value[i] < hi)
                      ga[i] += n.grad[i];
                });
}

template <typename T>
Var<T> sum_all(Graph<T>& g, Var<T> a) {
  long double acc = 0;
  for (std::size_t i = 0; i < a->value.size(); ++i)
    acc += static_cast<long double>(a->value[i]);
  Tensor<T> out({1});
  out[0] = static_cast<T>(acc);
  return g.make(std::move(out), a->requires_grad,
                [a](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  const T s = n.grad[0];
                  for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
                });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
Var<T> reshape(Graph<T>& g, Var<T> a, std::vector<int> shape) {
  Tensor<T> out = a->value.reshaped(shape);
  return g.make(std::move(out), a->requires_grad,
                [a](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (std::size_t i = 0; i < n.grad.size(); ++i)
                    ga[i] += n.grad[i];
                });
}

// Concatenate (B, Ci, H, W) maps along the channel axis.
template <typename T>
Var<T> concat_ch(Graph<T>& g, const std::vector<Var<T>>& xs) {
  detail::check<T>(!xs.empty(), "concat_ch: empty input");
  const int b = xs[0]->value.dim(0);
  const int h = xs[0]->value.dim(2);
  const int w = xs[0]->value.dim(3);
  int ctot = 0;
  bool rg = false;
  for (Var<T> x : xs) {
    detail::check<T>(x->value.rank() == 4 && x->value.dim(0) == b &&
                         x->value.dim(2) == h && x->value.dim(3) == w,
                     "concat_ch: incompatible shapes");
    ctot += x->value.dim(1);
    rg = rg || x->requires_grad;
  }
  Tensor<T> out({b, ctot, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int bb = 0; bb < b; ++bb) {
    std::size_t coff = 0;
    for (Var<T> x : xs) {
      const int ci = x->value.dim(1);
      const T* src = x->value.data() + static_cast<std::size_t>(bb) * ci * plane;
      T* dst = out.data() + (static_cast<std::size_t>(bb) * ctot + coff) * plane;
      std::copy(src, src + static_cast<std::size_t>(ci) * plane, dst);
      coff += static_cast<std::size_t>(ci);
    }
  }
  std::vector<Var<T>> parents = xs;
  return g.make(
      std::move(out), rg, [parents, b, ctot, plane](Graph<T>&, typename Graph<T>::Node& n) {
        for (int bb = 0; bb < b; ++bb) {
          std::size_t coff = 0;
          for (Var<T> x : parents) {
            const int ci = x->value.dim(1);
            if (x->requires_grad) {
              Tensor<T>& gx = x->g();
              const T* src =
                  n.grad.data() + (static_cast<std::size_t>(bb) * ctot + coff) * plane;
              T* dst = gx.data() + static_cast<std::size_t>(bb) * ci * plane;
              for (std::size_t i = 0; i < static_cast<std::size_t>(ci) * plane; ++i)
                dst[i] += src[i];
            }
            coff += static_cast<std::size_t>(ci);
          }
        }
      });
}

// Channel window [from, from+count) of a (B, C, H, W) map.
template <typename T>
Var<T> slice_ch(Graph<T>& g, Var<T> x, int from, int count) {
  const int b = x->value.dim(0), c = x->value.dim(1);
  const int h = x->value.dim(2), w = x->value.dim(3);
  detail::check<T>(from >= 0 && count > 0 && from + count <= c,
                   "slice_ch: channel range");
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor<T> out({b, count, h, w});
  for (int bb = 0; bb < b; ++bb) {
    const T* src =
        x->value.data() + (static_cast<std::size_t>(bb) * c + from) * plane;
    T* dst = out.data() + static_cast<std::size_t>(bb) * count * plane;
    std::copy(src, src + static_cast<std::size_t>(count) * plane, dst);
  }
  return g.make(std::move(out), x->requires_grad,
                [x, b, c, from, count, plane](Graph<T>&,
                                              typename Graph<T>::Node& n) {
                  if (!x->requires_grad) return;
                  Tensor<T>& gx = x->g();
                  for (int bb = 0; bb < b; ++bb) {
                    const T* src =
                        n.grad.data() + static_cast<std::size_t>(bb) * count * plane;
                    T* dst = gx.data() +
                             (static_cast<std::size_t>(bb) * c + from) * plane;
                    for (std::size_t i = 0; i < static_cast<std::size_t>(count) * plane;
                         ++i)
                      dst[i] += src[i];
                  }
                });
}

// Broadcast a (B, D) vector over an H x W grid, giving (B, D, H, W).
template <typename T>
Var<T> tile_vec(Graph<T>& g, Var<T> a, int h, int w) {
  const int b = a->value.dim(0);
  const int d = a->value.dim(1);
  Tensor<T> out({b, d, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int bb = 0; bb < b; ++bb)
    for (int dd = 0; dd < d; ++dd) {
      const T v = a->value.at(bb, dd);
      T* dst = out.data() + (static_cast<std::size_t>(bb) * d + dd) * plane;
      std::fill(dst, dst + plane, v);
    }
  return g.make(std::move(out), a->requires_grad,
                [a, b, d, plane](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (int bb = 0; bb < b; ++bb)
                    for (int dd = 0; dd < d; ++dd) {
                      const T* src = n.grad.data() +
                                     (static_cast<std::size_t>(bb) * d + dd) * plane;
                      long double acc = 0;
                      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
                      ga.at(bb, dd) += static_cast<T>(acc);
                    }
                });
}

// Mean over the spatial grid: (B, C, H, W) -> (B, C).
template <typename T>
Var<T> global_avg_pool(Graph<T>& g, Var<T> a) {
  const int b = a->value.dim(0), c = a->value.dim(1);
  const std::size_t plane =
      static_cast<std::size_t>(a->value.dim(2)) * a->value.dim(3);
  Tensor<T> out({b, c});
  for (int bb = 0; bb < b; ++bb)
    for (int cc = 0; cc < c; ++cc) {
      const T* src =
          a->value.data() + (static_cast<std::size_t>(bb) * c + cc) * plane;
      long double acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += src[i];
      out.at(bb, cc) = static_cast<T>(acc / static_cast<long double>(plane));
    }
  return g.make(std::move(out), a->requires_grad,
                [a, b, c, plane](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  const T inv = T(1) / static_cast<T>(plane);
                  for (int bb = 0; bb < b; ++bb)
                    for (int cc = 0; cc < c; ++cc) {
                      const T s = n.grad.at(bb, cc) * inv;
                      T* dst = ga.data() +
                               (static_cast<std::size_t>(bb) * c + cc) * plane;
                      for (std::size_t i = 0; i < plane; ++i) dst[i] += s;
                    }
                });
}

// Select token n from (B, N, D) -> (B, D).
template <typename T>
Var<T> slice_token(Graph<T>& g, Var<T> a, int n_index) {
  const int b = a->value.dim(0), nv = a->value.dim(1), d = a->value.dim(2);
  detail::check<T>(n_index >= 0 && n_index < nv, "slice_token: index range");
  Tensor<T> out({b, d});
  for (int bb = 0; bb < b; ++bb)
    for (int dd = 0; dd < d; ++dd) out.at(bb, dd) = a->value.at(bb, n_index, dd);
  return g.make(std::move(out), a->requires_grad,
                [a, b, d, n_index](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (int bb = 0; bb < b; ++bb)
                    for (int dd = 0; dd < d; ++dd)
                      ga.at(bb, n_index, dd) += n.grad.at(bb, dd);
                });
}

namespace detail {
// Pairwise tree reduction in a wide accumulator type; for float inputs with
// ordinary magnitudes every partial sum is exact, which makes the reduction
// insensitive to input order at the bit level.
template <typename T>
T pairwise_wide_sum(const T* vals, std::size_t stride, int count) {
  using Wide = long double;
  Wide buf[64];
  for (int i = 0; i < count; ++i)
    buf[i] = static_cast<Wide>(vals[static_cast<std::size_t>(i) * stride]);
  int n = count;
  while (n > 1) {
    int half = n / 2;
    for (int i = 0; i < half; ++i) buf[i] = buf[2 * i] + buf[2 * i + 1];
    if (n % 2) {
      buf[half] = buf[n - 1];
      ++half;
    }
    n = half;
  }
  return static_cast<T>(buf[0]);
}
}  // namespace detail

// Element-wise sum over the token axis: (B, N, D) -> (B, D).
template <typename T>
Var<T> sum_tokens(Graph<T>& g, Var<T> a) {
  const int b = a->value.dim(0), nv = a->value.dim(1), d = a->value.dim(2);
  detail::check<T>(nv >= 1 && nv <= 64, "sum_tokens: token count");
  Tensor<T> out({b, d});
  for (int bb = 0; bb < b; ++bb)
    for (int dd = 0; dd < d; ++dd) {
      const T* base = a->value.data() +
                      static_cast<std::size_t>(bb) * nv * d + dd;
      out.at(bb, dd) = detail::pairwise_wide_sum(base, static_cast<std::size_t>(d), nv);
    }
  return g.make(std::move(out), a->requires_grad,
                [a, b, nv, d](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!a->requires_grad) return;
                  Tensor<T>& ga = a->g();
                  for (int bb = 0; bb < b; ++bb)
                    for (int vv = 0; vv < nv; ++vv)
                      for (int dd = 0; dd < d; ++dd)
                        ga.at(bb, vv, dd) += n.grad.at(bb, dd);
                });
}

// ---------------------------------------------------------------------------
// Linear algebra ops
// ---------------------------------------------------------------------------

// x: (R, I), w: (I, O), optional bias (O). Returns (R, O).
template <typename T>
Var<T> linear(Graph<T>& g, Var<T> x, Var<T> w, Var<T> bias = nullptr) {
  detail::check<T>(x->value.rank() == 2 && w->value.rank() == 2,
                   "linear: rank");
  const int r = x->value.dim(0), in = x->value.dim(1), out_d = w->value.dim(1);
  detail::check<T>(w->value.dim(0) == in, "linear: inner dim mismatch");
  Tensor<T> out({r, out_d});
  gemm(false, false, r, out_d, in, T(1), x->value.data(), in, w->value.data(),
       out_d, T(0), out.data(), out_d);
  if (bias) {
    detail::check<T>(bias->value.rank() == 1 && bias->value.dim(0) == out_d,
                     "linear: bias shape");
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < out_d; ++j) out.at(i, j) += bias->value[j];
  }
  const bool rg =
      x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
  return g.make(std::move(out), rg,
                [x, w, bias, r, in, out_d](Graph<T>&, typename Graph<T>::Node& n) {
                  if (x->requires_grad)
                    gemm(false, true, r, in, out_d, T(1), n.grad.data(), out_d,
                         w->value.data(), out_d, T(1), x->g().data(), in);
                  if (w->requires_grad)
                    gemm(true, false, in, out_d, r, T(1), x->value.data(), in,
                         n.grad.data(), out_d, T(1), w->g().data(), out_d);
                  if (bias && bias->requires_grad) {
                    Tensor<T>& gb = bias->g();
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < out_d; ++j)
                        gb[j] += n.grad.at(i, j);
                  }
                });
}

// x: (B, C, H, W), w: (O, C, kh, kw), optional bias (O).
template <typename T>
Var<T> conv2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> bias, int stride,
              int pad) {
  detail::check<T>(x->value.rank() == 4 && w->value.rank() == 4,
                   "conv2d: rank");
  const int b = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
            wd = x->value.dim(3);
  const int o = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  detail::check<T>(w->value.dim(1) == c, "conv2d: channel mismatch");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  detail::check<T>(oh > 0 && ow > 0, "conv2d: empty output");
  const int k_rows = c * kh * kw;
  const int cols = b * oh * ow;

  Tensor<T> col({k_rows, cols});
  detail::im2col(x->value.data(), b, c, h, wd, kh, kw, stride, pad, oh, ow,
                 col.data());
  // yt: (O, B*oh*ow), then scatter into batch-major layout.
  Tensor<T> yt({o, cols});
  gemm(false, false, o, cols, k_rows, T(1), w->value.data(), k_rows, col.data(),
       cols, T(0), yt.data(), cols);
  Tensor<T> out({b, o, oh, ow});
  const std::size_t plane = static_cast<std::size_t>(oh) * ow;
  for (int oo = 0; oo < o; ++oo) {
    const T bias_v = bias ? bias->value[oo] : T(0);
    for (int bb = 0; bb < b; ++bb) {
      const T* src = yt.data() + static_cast<std::size_t>(oo) * cols + bb * plane;
      T* dst = out.data() + (static_cast<std::size_t>(bb) * o + oo) * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = src[i] + bias_v;
    }
  }

  const bool rg =
      x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
  return g.make(
      std::move(out), rg,
      [x, w, bias, b, c, h, wd, o, kh, kw, stride, pad, oh, ow, k_rows,
       cols](Graph<T>&, typename Graph<T>::Node& n) {
        const std::size_t plane = static_cast<std::size_t>(oh) * ow;
        // Gather grad into (O, B*oh*ow).
        Tensor<T> gyt({o, cols});
        for (int oo = 0; oo < o; ++oo)
          for (int bb = 0; bb < b; ++bb) {
            const T* src =
                n.grad.data() + (static_cast<std::size_t>(bb) * o + oo) * plane;
            T* dst = gyt.data() + static_cast<std::size_t>(oo) * cols + bb * plane;
            std::copy(src, src + plane, dst);
          }
        if (bias && bias->requires_grad) {
          Tensor<T>& gb = bias->g();
          for (int oo = 0; oo < o; ++oo) {
            long double acc = 0;
            const T* src = gyt.data() + static_cast<std::size_t>(oo) * cols;
            for (int i = 0; i < cols; ++i) acc += src[i];
            gb[oo] += static_cast<T>(acc);
          }
        }
        if (w->requires_grad) {
          Tensor<T> col({k_rows, cols});
          detail::im2col(x->value.data(), b, c, h, wd, kh, kw, stride, pad, oh,
                         ow, col.data());
          gemm(false, true, o, k_rows, cols, T(1), gyt.data(), cols, col.data(),
               cols, T(1), w->g().data(), k_rows);
        }
        if (x->requires_grad) {
          Tensor<T> gcol({k_rows, cols});
          gemm(true, false, k_rows, cols, o, T(1), w->value.data(), k_rows,
               gyt.data(), cols, T(0), gcol.data(), cols);
          detail::col2im_add(gcol.data(), b, c, h, wd, kh, kw, stride, pad, oh,
                             ow, x->g().data());
        }
      });
}

// Transposed convolution, stride s, no padding. x: (B, C, h, w),
// w: (C, O, k, k). Output is (B, O, (h-1)*s + k, (w-1)*s + k).
template <typename T>
Var<T> conv_transpose2d(Graph<T>& g, Var<T> x, Var<T> w, Var<T> bias,
                        int stride) {
  detail::check<T>(x->value.rank() == 4 && w->value.rank() == 4,
                   "conv_transpose2d: rank");
  const int b = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2),
            wd = x->value.dim(3);
  const int o = w->value.dim(1), kh = w->value.dim(2), kw = w->value.dim(3);
  detail::check<T>(w->value.dim(0) == c, "conv_transpose2d: channel mismatch");
  const int oh = (h - 1) * stride + kh;
  const int ow = (wd - 1) * stride + kw;
  const int k_rows = o * kh * kw;
  const int cols = b * h * wd;

  // x_fold: (C, B*h*w) gathered from batch-major input.
  Tensor<T> xf({c, cols});
  const std::size_t in_plane = static_cast<std::size_t>(h) * wd;
  for (int cc = 0; cc < c; ++cc)
    for (int bb = 0; bb < b; ++bb) {
      const T* src =
          x->value.data() + (static_cast<std::size_t>(bb) * c + cc) * in_plane;
      T* dst = xf.data() + static_cast<std::size_t>(cc) * cols + bb * in_plane;
      std::copy(src, src + in_plane, dst);
    }
  // col: (O*kh*kw, B*h*w) = W_fold^T * x_fold, then scatter-add.
  Tensor<T> col({k_rows, cols});
  gemm(true, false, k_rows, cols, c, T(1), w->value.data(), k_rows, xf.data(),
       cols, T(0), col.data(), cols);
  Tensor<T> out({b, o, oh, ow});
  detail::col2im_add(col.data(), b, o, oh, ow, kh, kw, stride, 0, h, wd,
                     out.data());
  if (bias) {
    detail::check<T>(bias->value.dim(0) == o, "conv_transpose2d: bias shape");
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    for (int bb = 0; bb < b; ++bb)
      for (int oo = 0; oo < o; ++oo) {
        T* dst = out.data() + (static_cast<std::size_t>(bb) * o + oo) * plane;
        const T bv = bias->value[oo];
        for (std::size_t i = 0; i < plane; ++i) dst[i] += bv;
      }
  }

  const bool rg =
      x->requires_grad || w->requires_grad || (bias && bias->requires_grad);
  return g.make(
      std::move(out), rg,
      [x, w, bias, b, c, h, wd, o, kh, kw, stride, oh, ow, k_rows,
       cols](Graph<T>&, typename Graph<T>::Node& n) {
        // dcol = im2col(dY) with the forward's scatter geometry.
        Tensor<T> dcol({k_rows, cols});
        detail::im2col(n.grad.data(), b, o, oh, ow, kh, kw, stride, 0, h, wd,
                       dcol.data());
        if (bias && bias->requires_grad) {
          Tensor<T>& gb = bias->g();
          const std::size_t plane = static_cast<std::size_t>(oh) * ow;
          for (int oo = 0; oo < o; ++oo) {
            long double acc = 0;
            for (int bb = 0; bb < b; ++bb) {
              const T* src =
                  n.grad.data() + (static_cast<std::size_t>(bb) * o + oo) * plane;
              for (std::size_t i = 0; i < plane; ++i) acc += src[i];
            }
            gb[oo] += static_cast<T>(acc);
          }
        }
        const std::size_t in_plane = static_cast<std::size_t>(h) * wd;
        if (x->requires_grad) {
          Tensor<T> gxf({c, cols});
          gemm(false, false, c, cols, k_rows, T(1), w->value.data(), k_rows,
               dcol.data(), cols, T(0), gxf.data(), cols);
          Tensor<T>& gx = x->g();
          for (int cc = 0; cc < c; ++cc)
            for (int bb = 0; bb < b; ++bb) {
              const T* src =
                  gxf.data() + static_cast<std::size_t>(cc) * cols + bb * in_plane;
              T* dst =
                  gx.data() + (static_cast<std::size_t>(bb) * c + cc) * in_plane;
              for (std::size_t i = 0; i < in_plane; ++i) dst[i] += src[i];
            }
        }
        if (w->requires_grad) {
          Tensor<T> xf({c, cols});
          for (int cc = 0; cc < c; ++cc)
            for (int bb = 0; bb < b; ++bb) {
              const T* src = x->value.data() +
                             (static_cast<std::size_t>(bb) * c + cc) * in_plane;
              T* dst =
                  xf.data() + static_cast<std::size_t>(cc) * cols + bb * in_plane;
              std::copy(src, src + in_plane, dst);
            }
          gemm(false, true, c, k_rows, cols, T(1), xf.data(), cols, dcol.data(),
               cols, T(1), w->g().data(), k_rows);
        }
      });
}

// ---------------------------------------------------------------------------
// Attention and normalisation ops
// ---------------------------------------------------------------------------

// (B, N, D) -> (B, H, N, D/H)
template <typename T>
Var<T> split_heads(Graph<T>& g, Var<T> x, int heads) {
  const int b = x->value.dim(0), nv = x->value.dim(1), d = x->value.dim(2);
  detail::check<T>(d % heads == 0, "split_heads: d not divisible by heads");
  const int dh = d / heads;
  Tensor<T> out({b, heads, nv, dh});
  for (int bb = 0; bb < b; ++bb)
    for (int hh = 0; hh < heads; ++hh)
      for (int vv = 0; vv < nv; ++vv)
        for (int cc = 0; cc < dh; ++cc)
          out.at(bb, hh, vv, cc) = x->value.at(bb, vv, hh * dh + cc);
  return g.make(std::move(out), x->requires_grad,
                [x, b, heads, nv, dh](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!x->requires_grad) return;
                  Tensor<T>& gx = x->g();
                  for (int bb = 0; bb < b; ++bb)
                    for (int hh = 0; hh < heads; ++hh)
                      for (int vv = 0; vv < nv; ++vv)
                        for (int cc = 0; cc < dh; ++cc)
                          gx.at(bb, vv, hh * dh + cc) +=
                              n.grad.at(bb, hh, vv, cc);
                });
}

// (B, H, N, D/H) -> (B, N, D)
template <typename T>
Var<T> merge_heads(Graph<T>& g, Var<T> x) {
  const int b = x->value.dim(0), heads = x->value.dim(1), nv = x->value.dim(2),
            dh = x->value.dim(3);
  Tensor<T> out({b, nv, heads * dh});
  for (int bb = 0; bb < b; ++bb)
    for (int hh = 0; hh < heads; ++hh)
      for (int vv = 0; vv < nv; ++vv)
        for (int cc = 0; cc < dh; ++cc)
          out.at(bb, vv, hh * dh + cc) = x->value.at(bb, hh, vv, cc);
  return g.make(std::move(out), x->requires_grad,
                [x, b, heads, nv, dh](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!x->requires_grad) return;
                  Tensor<T>& gx = x->g();
                  for (int bb = 0; bb < b; ++bb)
                    for (int hh = 0; hh < heads; ++hh)
                      for (int vv = 0; vv < nv; ++vv)
                        for (int cc = 0; cc < dh; ++cc)
                          gx.at(bb, hh, vv, cc) +=
                              n.grad.at(bb, vv, hh * dh + cc);
                });
}

// scores[b,h,i,j] = scale * <q[b,h,i,:], k[b,h,j,:]>
template <typename T>
Var<T> attn_scores(Graph<T>& g, Var<T> q, Var<T> k, T scale_v) {
  const int b = q->value.dim(0), heads = q->value.dim(1), nv = q->value.dim(2),
            dh = q->value.dim(3);
  detail::check<T>(k->value.same_shape(q->value), "attn_scores: shape");
  Tensor<T> out({b, heads, nv, nv});
  for (int bb = 0; bb < b; ++bb)
    for (int hh = 0; hh < heads; ++hh)
      for (int i = 0; i < nv; ++i)
        for (int j = 0; j < nv; ++j) {
          long double acc = 0;
          for (int cc = 0; cc < dh; ++cc)
            acc += static_cast<long double>(q->value.at(bb, hh, i, cc)) *
                   k->value.at(bb, hh, j, cc);
          out.at(bb, hh, i, j) = static_cast<T>(acc) * scale_v;
        }
  const bool rg = q->requires_grad || k->requires_grad;
  return g.make(std::move(out), rg,
                [q, k, scale_v, b, heads, nv, dh](Graph<T>&,
                                                  typename Graph<T>::Node& n) {
                  for (int bb = 0; bb < b; ++bb)
                    for (int hh = 0; hh < heads; ++hh)
                      for (int i = 0; i < nv; ++i)
                        for (int j = 0; j < nv; ++j) {
                          const T gs = n.grad.at(bb, hh, i, j) * scale_v;
                          if (gs == T(0)) continue;
                          if (q->requires_grad) {
                            Tensor<T>& gq = q->g();
                            for (int cc = 0; cc < dh; ++cc)
                              gq.at(bb, hh, i, cc) +=
                                  gs * k->value.at(bb, hh, j, cc);
                          }
                          if (k->requires_grad) {
                            Tensor<T>& gk = k->g();
                            for (int cc = 0; cc < dh; ++cc)
                              gk.at(bb, hh, j, cc) +=
                                  gs * q->value.at(bb, hh, i, cc);
                          }
                        }
                });
}

// Row-wise softmax over the last axis with a binary visibility mask shared
// across batch and heads. Hidden positions get a large negative additive
// constant pre-softmax, which underflows to an exact zero weight.
template <typename T>
Var<T> masked_softmax(Graph<T>& g, Var<T> logits, const Tensor<T>& mask) {
  const int b = logits->value.dim(0), heads = logits->value.dim(1),
            nv = logits->value.dim(2);
  detail::check<T>(logits->value.dim(3) == nv, "masked_softmax: square rows");
  detail::check<T>(mask.rank() == 2 && mask.dim(0) == nv && mask.dim(1) == nv,
                   "masked_softmax: mask shape");
  const T kNegLarge = T(-1e9);
  Tensor<T> out(logits->value.shape());
  for (int bb = 0; bb < b; ++bb)
    for (int hh = 0; hh < heads; ++hh)
      for (int i = 0; i < nv; ++i) {
        T row[64];
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j < nv; ++j) {
          row[j] = logits->value.at(bb, hh, i, j) +
                   (mask.at(i, j) > T(0) ? T(0) : kNegLarge);
          mx = std::max(mx, row[j]);
        }
        long double denom = 0;
        for (int j = 0; j < nv; ++j) {
          row[j] = std::exp(row[j] - mx);
          denom += static_cast<long double>(row[j]);
        }
        for (int j = 0; j < nv; ++j)
          out.at(bb, hh, i, j) = static_cast<T>(row[j] / static_cast<T>(denom));
      }
  return g.make(std::move(out), logits->requires_grad,
                [logits, b, heads, nv](Graph<T>&, typename Graph<T>::Node& n) {
                  if (!logits->requires_grad) return;
                  Tensor<T>& gl = logits->g();
                  for (int bb = 0; bb < b; ++bb)
                    for (int hh = 0; hh < heads; ++hh)
                      for (int i = 0; i < nv; ++i) {
                        long double dot = 0;
                        for (int j = 0; j < nv; ++j)
                          dot += static_cast<long double>(
                                     n.grad.at(bb, hh, i, j)) *
                                 n.value.at(bb, hh, i, j);
                        for (int j = 0; j < nv; ++j) {
                          const T a = n.value.at(bb, hh, i, j);
                          gl.at(bb, hh, i, j) +=
                              a * (n.grad.at(bb, hh, i, j) - static_cast<T>(dot));
                        }
                      }
                });
}

// out[b,h,i,:] = sum_j attn[b,h,i,j] * v[b,h,j,:]
template <typename T>
Var<T> attn_mix(Graph<T>& g, Var<T> attn, Var<T> v) {
  const int b = v->value.dim(0), heads = v->value.dim(1), nv = v->value.dim(2),
            dh = v->value.dim(3);
  Tensor<T> out({b, heads, nv, dh});
  for (int bb = 0; bb < b; ++bb)
    for (int hh = 0; hh < heads; ++hh)
      for (int i = 0; i < nv; ++i)
        for (int cc = 0; cc < dh; ++cc) {
          long double acc = 0;
          for (int j = 0; j < nv; ++j)
            acc += static_cast<long double>(attn->value.at(bb, hh, i, j)) *
                   v->value.at(bb, hh, j, cc);
          out.at(bb, hh, i, cc) = static_cast<T>(acc);
        }
  const bool rg = attn->requires_grad || v->requires_grad;
  return g.make(
      std::move(out), rg,
      [attn, v, b, heads, nv, dh](Graph<T>&, typename Graph<T>::Node& n) {
        for (int bb = 0; bb < b; ++bb)
          for (int hh = 0; hh < heads; ++hh) {
            if (attn->requires_grad) {
              Tensor<T>& ga = attn->g();
              for (int i = 0; i < nv; ++i)
                for (int j = 0; j < nv; ++j) {
                  long double acc = 0;
                  for (int cc = 0; cc < dh; ++cc)
                    acc += static_cast<long double>(n.grad.at(bb, hh, i, cc)) *
                           v->value.at(bb, hh, j, cc);
                  ga.at(bb, hh, i, j) += static_cast<T>(acc);
                }
            }
            if (v->requires_grad) {
              Tensor<T>& gv = v->g();
              for (int j = 0; j < nv; ++j)
                for (int cc = 0; cc < dh; ++cc) {
                  long double acc = 0;
                  for (int i = 0; i < nv; ++i)
                    acc += static_cast<long double>(
                               attn->value.at(bb, hh, i, j)) *
                           n.grad.at(bb, hh, i, cc);
                  gv.at(bb, hh, j, cc) += static_cast<T>(acc);
                }
            }
          }
      });
}

// Row-wise layer normalisation over the last axis of a (R, D) tensor.
template <typename T>
Var<T> layer_norm(Graph<T>& g, Var<T> x, Var<T> gain, Var<T> offset,
                  T eps = T(1e-5)) {
  detail::check<T>(x->value.rank() == 2, "layer_norm: rank");
  const int r = x->value.dim(0), d = x->value.dim(1);
  detail::check<T>(gain->value.dim(0) == d && offset->value.dim(0) == d,
                   "layer_norm: gain/offset shape");
  Tensor<T> out({r, d});
  Tensor<T> xhat({r, d});
  Tensor<T> inv_std({r});
  for (int i = 0; i < r; ++i) {
    long double mu = 0;
    for (int j = 0; j < d; ++j) mu += x->value.at(i, j);
    mu /= d;
    long double var = 0;
    for (int j = 0; j < d; ++j) {
      const long double dv = x->value.at(i, j) - mu;
      var += dv * dv;
    }
    var /= d;
    const T istd = T(1) / std::sqrt(static_cast<T>(var) + eps);
    inv_std[i] = istd;
    for (int j = 0; j < d; ++j) {
      xhat.at(i, j) = (x->value.at(i, j) - static_cast<T>(mu)) * istd;
      out.at(i, j) = gain->value[j] * xhat.at(i, j) + offset->value[j];
    }
  }
  const bool rg =
      x->requires_grad || gain->requires_grad || offset->requires_grad;
  auto xhat_p = std::make_shared<Tensor<T>>(std::move(xhat));
  auto istd_p = std::make_shared<Tensor<T>>(std::move(inv_std));
  return g.make(
      std::move(out), rg,
      [x, gain, offset, r, d, xhat_p, istd_p](Graph<T>&,
                                              typename Graph<T>::Node& n) {
        for (int i = 0; i < r; ++i) {
          if (gain->requires_grad || offset->requires_grad) {
            for (int j = 0; j < d; ++j) {
              if (gain->requires_grad)
                gain->g()[j] += n.grad.at(i, j) * xhat_p->at(i, j);
              if (offset->requires_grad) offset->g()[j] += n.grad.at(i, j);
            }
          }
          if (x->requires_grad) {
            long double m1 = 0, m2 = 0;
            for (int j = 0; j < d; ++j) {
              const T dxh = n.grad.at(i, j) * gain->value[j];
              m1 += dxh;
              m2 += static_cast<long double>(dxh) * xhat_p->at(i, j);
            }
            m1 /= d;
            m2 /= d;
            Tensor<T>& gx = x->g();
            for (int j = 0; j < d; ++j) {
              const T dxh = n.grad.at(i, j) * gain->value[j];
              gx.at(i, j) += (*istd_p)[i] * (dxh - static_cast<T>(m1) -
                                             xhat_p->at(i, j) * static_cast<T>(m2));
            }
          }
        }
      });
}

}  // namespace tgqn
