#pragma once

// 2-d convolution and stride-matched transposed convolution, lowered to
// GEMM through im2col. Weight layout is OIKK for conv2d and IOKK for
// conv_transpose2d; activations are NCHW.

#include <Eigen/Dense>

#include "cspdet/core/flops.hpp"
#include "cspdet/core/tensor.hpp"

namespace cspdet {

namespace detail {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>>;
template <typename T>
using RowMatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstRowMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// Lowers one group of one sample into a (I*K*K, Ho*Wo) patch matrix,
// stored row-major (each kernel-tap row is contiguous over positions).
template <typename T>
void im2col(const T* x, int channels, int h, int w, int k, int stride, int pad, int ho, int wo, T* cols) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t opos = static_cast<std::int64_t>(ho) * wo;
  std::int64_t r = 0;
  for (int ci = 0; ci < channels; ++ci) {
    const T* src = x + ci * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++r) {
        T* dst = cols + r * opos;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            for (int ox = 0; ox < wo; ++ox) dst[oy * wo + ox] = T(0);
            continue;
          }
          const T* row = src + static_cast<std::int64_t>(iy) * w;
          int ix = -pad + kx;
          for (int ox = 0; ox < wo; ++ox, ix += stride)
            dst[oy * wo + ox] = (ix >= 0 && ix < w) ? row[ix] : T(0);
        }
      }
    }
  }
}

// Scatter-adds a patch-matrix gradient back onto the input gradient.
template <typename T>
void col2im(const T* cols, int channels, int h, int w, int k, int stride, int pad, int ho, int wo, T* gx) {
  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t opos = static_cast<std::int64_t>(ho) * wo;
  std::int64_t r = 0;
  for (int ci = 0; ci < channels; ++ci) {
    T* dst = gx + ci * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx, ++r) {
        const T* src = cols + r * opos;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* row = dst + static_cast<std::int64_t>(iy) * w;
          int ix = -pad + kx;
          for (int ox = 0; ox < wo; ++ox, ix += stride)
            if (ix >= 0 && ix < w) row[ix] += src[oy * wo + ox];
        }
      }
    }
  }
}

}  // namespace detail

struct ConvOpts {
  int stride = 1;
  int padding = 0;
  int groups = 1;
};

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvOpts& opts) {
  if (x.ndim() != 4 || weight.ndim() != 4) throw std::invalid_argument("conv2d expects NCHW input and OIKK weight");
  const int batch = x.n(), cin = x.c(), h = x.h(), w = x.w();
  const int cout = weight.dim(0), wi = weight.dim(1), k = weight.dim(2);
  const int groups = opts.groups, stride = opts.stride, pad = opts.padding;
  if (weight.dim(3) != k) throw std::invalid_argument("conv2d kernels must be square");
  if (groups < 1 || cin % groups != 0 || cout % groups != 0)
    throw std::invalid_argument("conv2d channel counts must be divisible by groups");
  if (wi != cin / groups)
    throw std::invalid_argument("conv2d weight input extent " + std::to_string(wi) + " != in_channels/groups " +
                                std::to_string(cin / groups));
  if (bias.defined() && bias.size() != cout) throw std::invalid_argument("conv2d bias length must equal out channels");
  const int ho = detail::conv_out_extent(h, k, stride, pad);
  const int wo = detail::conv_out_extent(w, k, stride, pad);
  if (ho < 1 || wo < 1) throw std::invalid_argument("conv2d output would be empty");

  const int ig = cin / groups, og = cout / groups;
  const std::int64_t ikk = static_cast<std::int64_t>(ig) * k * k;
  const std::int64_t opos = static_cast<std::int64_t>(ho) * wo;
  const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
  const bool pointwise = (k == 1 && stride == 1 && pad == 0);

  Tensor<T> y({batch, cout, ho, wo});
  count_macs(static_cast<std::uint64_t>(batch) * cout * opos * ikk);

  std::vector<T> cols;
  if (!pointwise) cols.resize(static_cast<size_t>(ikk * opos));
  for (int n = 0; n < batch; ++n) {
    for (int g = 0; g < groups; ++g) {
      const T* xg = x.data() + (static_cast<std::int64_t>(n) * cin + g * ig) * in_plane;
      // Patch matrix as column-major (positions x taps).
      const T* cols_ptr;
      if (pointwise) {
        cols_ptr = xg;
      } else {
        detail::im2col(xg, ig, h, w, k, stride, pad, ho, wo, cols.data());
        cols_ptr = cols.data();
      }
      detail::ConstMatMap<T> cm(cols_ptr, opos, ikk);
      detail::ConstMatMap<T> wm(weight.data() + static_cast<std::int64_t>(g) * og * ikk, ikk, og);
      detail::MatMap<T> ym(y.data() + (static_cast<std::int64_t>(n) * cout + g * og) * opos, opos, og);
      ym.noalias() = cm * wm;
    }
    if (bias.defined()) {
      T* py = y.data() + static_cast<std::int64_t>(n) * cout * opos;
      for (int c = 0; c < cout; ++c) {
        const T b = bias.data()[c];
        for (std::int64_t i = 0; i < opos; ++i) py[c * opos + i] += b;
      }
    }
  }
  check_finite_if_enabled(y, "conv2d");

  GradTape<T>* tape = merge_tapes<T>({&x, &weight, &bias});
  if (tape && any_requires_grad<T>({&x, &weight, &bias})) {
    Tensor<T> xc = x, wc = weight, bc = bias, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, wc, bc, yc, batch, cin, cout, h, w, k, stride, pad, ho, wo, groups, ig, og, ikk, opos,
                       in_plane, pointwise]() mutable {
      if (!yc.has_grad()) return;
      const bool need_x = xc.requires_grad();
      const bool need_w = wc.requires_grad();
      const bool need_b = bc.defined() && bc.requires_grad();
      std::vector<T> cols, dcols;
      if (!pointwise && (need_w || need_x)) {
        cols.resize(static_cast<size_t>(ikk * opos));
        dcols.resize(static_cast<size_t>(ikk * opos));
      }
      for (int n = 0; n < batch; ++n) {
        for (int g = 0; g < groups; ++g) {
          detail::ConstMatMap<T> gym(yc.grad().data() + (static_cast<std::int64_t>(n) * cout + g * og) * opos, opos,
                                     og);
          const T* xg = xc.data() + (static_cast<std::int64_t>(n) * cin + g * ig) * in_plane;
          if (need_w) {
            const T* cols_ptr = xg;
            if (!pointwise) {
              detail::im2col(xg, ig, h, w, k, stride, pad, ho, wo, cols.data());
              cols_ptr = cols.data();
            }
            detail::ConstMatMap<T> cm(cols_ptr, opos, ikk);
            detail::MatMap<T> gwm(wc.grad_data() + static_cast<std::int64_t>(g) * og * ikk, ikk, og);
            gwm.noalias() += cm.transpose() * gym;
          }
          if (need_x) {
            detail::ConstMatMap<T> wm(wc.data() + static_cast<std::int64_t>(g) * og * ikk, ikk, og);
            if (pointwise) {
              detail::MatMap<T> gxm(xc.grad_data() + (static_cast<std::int64_t>(n) * cin + g * ig) * in_plane, opos,
                                    ikk);
              gxm.noalias() += gym * wm.transpose();
            } else {
              detail::MatMap<T> dcm(dcols.data(), opos, ikk);
              dcm.noalias() = gym * wm.transpose();
              detail::col2im(dcols.data(), ig, h, w, k, stride, pad, ho, wo,
                             xc.grad_data() + (static_cast<std::int64_t>(n) * cin + g * ig) * in_plane);
            }
          }
        }
        if (need_b) {
          const T* gy = yc.grad().data() + static_cast<std::int64_t>(n) * cout * opos;
          T* gb = bc.grad_data();
          for (int c = 0; c < cout; ++c) {
            T acc{};
            for (std::int64_t i = 0; i < opos; ++i) acc += gy[c * opos + i];
            gb[c] += acc;
          }
        }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const ConvOpts& opts) {
  return conv2d(x, weight, Tensor<T>(), opts);
}

// Transposed convolution restricted to kernel == stride (the 2x mask
// upsampling case): output blocks do not overlap, so the lowering is a
// single GEMM plus a reshuffle. Weight layout IOKK.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride) {
  if (x.ndim() != 4 || weight.ndim() != 4) throw std::invalid_argument("conv_transpose2d expects NCHW/IOKK tensors");
  const int batch = x.n(), cin = x.c(), h = x.h(), w = x.w();
  const int cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != cin) throw std::invalid_argument("conv_transpose2d weight in-extent mismatch");
  if (weight.dim(3) != k || k != stride) throw std::invalid_argument("conv_transpose2d requires kernel == stride");
  if (bias.defined() && bias.size() != cout) throw std::invalid_argument("conv_transpose2d bias length mismatch");

  const int ho = h * k, wo = w * k;
  const std::int64_t ipos = static_cast<std::int64_t>(h) * w;
  const std::int64_t okk = static_cast<std::int64_t>(cout) * k * k;
  Tensor<T> y({batch, cout, ho, wo});
  count_macs(static_cast<std::uint64_t>(batch) * ipos * cin * okk);

  std::vector<T> patches(static_cast<size_t>(ipos * okk));
  for (int n = 0; n < batch; ++n) {
    detail::ConstMatMap<T> xm(x.data() + static_cast<std::int64_t>(n) * cin * ipos, ipos, cin);
    detail::ConstRowMatMap<T> wm(weight.data(), cin, okk);
    detail::MatMap<T> pm(patches.data(), ipos, okk);
    pm.noalias() = xm * wm;
    T* py = y.data() + static_cast<std::int64_t>(n) * cout * ho * wo;
    for (int c = 0; c < cout; ++c)
      for (int iy = 0; iy < h; ++iy)
        for (int ix = 0; ix < w; ++ix) {
          const T* src = patches.data() + (static_cast<std::int64_t>(iy) * w + ix) * okk + c * k * k;
          const T b = bias.defined() ? bias.data()[c] : T(0);
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx)
              py[(static_cast<std::int64_t>(c) * ho + iy * k + ky) * wo + ix * k + kx] = src[ky * k + kx] + b;
        }
  }
  check_finite_if_enabled(y, "conv_transpose2d");

  GradTape<T>* tape = merge_tapes<T>({&x, &weight, &bias});
  if (tape && any_requires_grad<T>({&x, &weight, &bias})) {
    Tensor<T> xc = x, wc = weight, bc = bias, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, wc, bc, yc, batch, cin, cout, h, w, k, ho, wo, ipos, okk]() mutable {
      if (!yc.has_grad()) return;
      std::vector<T> gpatches(static_cast<size_t>(ipos * okk));
      const bool need_x = xc.requires_grad();
      const bool need_w = wc.requires_grad();
      const bool need_b = bc.defined() && bc.requires_grad();
      for (int n = 0; n < batch; ++n) {
        const T* gy = yc.grad().data() + static_cast<std::int64_t>(n) * cout * ho * wo;
        for (int c = 0; c < cout; ++c)
          for (int iy = 0; iy < h; ++iy)
            for (int ix = 0; ix < w; ++ix) {
              T* dst = gpatches.data() + (static_cast<std::int64_t>(iy) * w + ix) * okk + c * k * k;
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx)
                  dst[ky * k + kx] = gy[(static_cast<std::int64_t>(c) * ho + iy * k + ky) * wo + ix * k + kx];
            }
        detail::ConstMatMap<T> gpm(gpatches.data(), ipos, okk);
        if (need_x) {
          detail::ConstRowMatMap<T> wm(wc.data(), cin, okk);
          detail::MatMap<T> gxm(xc.grad_data() + static_cast<std::int64_t>(n) * cin * ipos, ipos, cin);
          gxm.noalias() += gpm * wm.transpose();
        }
        if (need_w) {
          detail::ConstMatMap<T> xm(xc.data() + static_cast<std::int64_t>(n) * cin * ipos, ipos, cin);
          detail::RowMatMap<T> gwm(wc.grad_data(), cin, okk);
          gwm.noalias() += xm.transpose() * gpm;
        }
        if (need_b) {
          T* gb = bc.grad_data();
          const std::int64_t oplane = static_cast<std::int64_t>(ho) * wo;
          for (int c = 0; c < cout; ++c) {
            T acc{};
            for (std::int64_t i = 0; i < oplane; ++i) acc += gy[c * oplane + i];
            gb[c] += acc;
          }
        }
      }
    });
  }
  return y;
}

}  // namespace cspdet
