#pragma once

// Spatial pooling. Windowed kinds require the kernel to fit inside the
// input; max-pool gradients route to the first argmax, avg spreads
// uniformly. Adaptive max pooling covers cross-scale downsampling where
// extents are not exact multiples.

#include "cspdet/core/flops.hpp"
#include "cspdet/core/tensor.hpp"

namespace cspdet {

enum class PoolKind { max, avg, global_avg, global_max };

template <typename T>
Tensor<T> pool(const Tensor<T>& x, PoolKind kind, int kernel = 0, int stride = 0) {
  if (x.ndim() != 4) throw std::invalid_argument("pool expects an NCHW tensor");
  const int batch = x.n(), c = x.c(), h = x.h(), w = x.w();
  const bool global = (kind == PoolKind::global_avg || kind == PoolKind::global_max);
  if (global) {
    kernel = 0;
    stride = 1;
  } else {
    if (kernel < 1 || stride < 1) throw std::invalid_argument("pool needs kernel and stride >= 1");
    if (kernel > h || kernel > w) throw std::invalid_argument("pool kernel larger than input extent");
  }
  const int ho = global ? 1 : (h - kernel) / stride + 1;
  const int wo = global ? 1 : (w - kernel) / stride + 1;
  const int kh = global ? h : kernel, kw = global ? w : kernel;
  const bool is_max = (kind == PoolKind::max || kind == PoolKind::global_max);

  Tensor<T> y({batch, c, ho, wo});
  std::vector<std::int32_t> argmax;
  if (is_max) argmax.resize(static_cast<size_t>(y.size()));

  const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(ho) * wo;
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(batch) * c; ++p) {
    const T* src = x.data() + p * in_plane;
    T* dst = y.data() + p * out_plane;
    for (int oy = 0; oy < ho; ++oy)
      for (int ox = 0; ox < wo; ++ox) {
        const int y0 = global ? 0 : oy * stride;
        const int x0 = global ? 0 : ox * stride;
        if (is_max) {
          T best = src[static_cast<std::int64_t>(y0) * w + x0];
          std::int32_t best_i = y0 * w + x0;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const std::int32_t i = (y0 + ky) * w + (x0 + kx);
              if (src[i] > best) {
                best = src[i];
                best_i = i;
              }
            }
          dst[oy * wo + ox] = best;
          argmax[static_cast<size_t>(p * out_plane + oy * wo + ox)] = best_i;
        } else {
          T acc{};
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) acc += src[static_cast<std::int64_t>(y0 + ky) * w + (x0 + kx)];
          dst[oy * wo + ox] = acc / static_cast<T>(kh * kw);
        }
      }
  }

  GradTape<T>* tape = merge_tapes<T>({&x});
  if (tape && x.requires_grad()) {
    Tensor<T> xc = x, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, yc, argmax, is_max, kh, kw, stride, global, w, in_plane, out_plane, ho, wo]() mutable {
      if (!yc.has_grad()) return;
      const T* gy = yc.grad().data();
      T* gx = xc.grad_data();
      const std::int64_t planes = xc.size() / in_plane;
      for (std::int64_t p = 0; p < planes; ++p) {
        const T* gsrc = gy + p * out_plane;
        T* gdst = gx + p * in_plane;
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            const T g = gsrc[oy * wo + ox];
            if (is_max) {
              gdst[argmax[static_cast<size_t>(p * out_plane + oy * wo + ox)]] += g;
            } else {
              const T share = g / static_cast<T>(kh * kw);
              const int y0 = global ? 0 : oy * stride;
              const int x0 = global ? 0 : ox * stride;
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) gdst[static_cast<std::int64_t>(y0 + ky) * w + (x0 + kx)] += share;
            }
          }
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  return pool(x, PoolKind::global_avg);
}

// Max pooling onto an arbitrary output grid; bin (i,j) covers
// [floor(i*H/OH), ceil((i+1)*H/OH)). Equals kernel==stride max pooling
// when extents divide evenly.
template <typename T>
Tensor<T> adaptive_max_pool(const Tensor<T>& x, int oh, int ow) {
  if (x.ndim() != 4) throw std::invalid_argument("adaptive_max_pool expects an NCHW tensor");
  if (oh < 1 || ow < 1) throw std::invalid_argument("adaptive_max_pool target extents must be >= 1");
  const int batch = x.n(), c = x.c(), h = x.h(), w = x.w();
  Tensor<T> y({batch, c, oh, ow});
  std::vector<std::int32_t> argmax(static_cast<size_t>(y.size()));
  const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;
  auto bin0 = [](int i, int in, int out) { return static_cast<int>((static_cast<std::int64_t>(i) * in) / out); };
  auto bin1 = [](int i, int in, int out) {
    return static_cast<int>(((static_cast<std::int64_t>(i) + 1) * in + out - 1) / out);
  };
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(batch) * c; ++p) {
    const T* src = x.data() + p * in_plane;
    T* dst = y.data() + p * out_plane;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        const int y0 = bin0(oy, h, oh), y1 = bin1(oy, h, oh);
        const int x0 = bin0(ox, w, ow), x1 = bin1(ox, w, ow);
        T best = src[static_cast<std::int64_t>(y0) * w + x0];
        std::int32_t best_i = y0 * w + x0;
        for (int iy = y0; iy < y1; ++iy)
          for (int ix = x0; ix < x1; ++ix) {
            const std::int32_t i = iy * w + ix;
            if (src[i] > best) {
              best = src[i];
              best_i = i;
            }
          }
        dst[oy * ow + ox] = best;
        argmax[static_cast<size_t>(p * out_plane + oy * ow + ox)] = best_i;
      }
  }
  GradTape<T>* tape = merge_tapes<T>({&x});
  if (tape && x.requires_grad()) {
    Tensor<T> xc = x, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, yc, argmax, in_plane, out_plane]() mutable {
      if (!yc.has_grad()) return;
      const T* gy = yc.grad().data();
      T* gx = xc.grad_data();
      const std::int64_t planes = xc.size() / in_plane;
      for (std::int64_t p = 0; p < planes; ++p)
        for (std::int64_t o = 0; o < out_plane; ++o)
          gx[p * in_plane + argmax[static_cast<size_t>(p * out_plane + o)]] += gy[p * out_plane + o];
    });
  }
  return y;
}

}  // namespace cspdet
