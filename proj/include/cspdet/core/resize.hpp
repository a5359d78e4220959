#pragma once

// Spatial resampling with the half-pixel-center convention: a sampling
// position for output index i is (i + 0.5) * in/out - 0.5 in input index
// space (clamped at the borders for bilinear taps).

#include <cmath>

#include "cspdet/core/tensor.hpp"

namespace cspdet {

enum class ResizeMode { nearest, bilinear };

template <typename T>
Tensor<T> interpolate(const Tensor<T>& x, int oh, int ow, ResizeMode mode) {
  if (x.ndim() != 4) throw std::invalid_argument("interpolate expects an NCHW tensor");
  if (oh < 1 || ow < 1) throw std::invalid_argument("interpolate target extents must be >= 1");
  const int h = x.h(), w = x.w();
  if (oh == h && ow == w) return x;  // same-size request is identity

  const std::int64_t planes = static_cast<std::int64_t>(x.n()) * x.c();
  const std::int64_t in_plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t out_plane = static_cast<std::int64_t>(oh) * ow;
  Tensor<T> y({x.n(), x.c(), oh, ow});

  const double sy = static_cast<double>(h) / oh;
  const double sx = static_cast<double>(w) / ow;

  if (mode == ResizeMode::nearest) {
    std::vector<int> map_y(oh), map_x(ow);
    for (int i = 0; i < oh; ++i) map_y[i] = std::min(h - 1, std::max(0, static_cast<int>((i + 0.5) * sy)));
    for (int i = 0; i < ow; ++i) map_x[i] = std::min(w - 1, std::max(0, static_cast<int>((i + 0.5) * sx)));
    for (std::int64_t p = 0; p < planes; ++p) {
      const T* src = x.data() + p * in_plane;
      T* dst = y.data() + p * out_plane;
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = src[static_cast<std::int64_t>(map_y[oy]) * w + map_x[ox]];
    }
    GradTape<T>* tape = merge_tapes<T>({&x});
    if (tape && x.requires_grad()) {
      Tensor<T> xc = x, yc = y;
      yc.attach_(tape, true);
      tape->record({y}, [xc, yc, map_y, map_x, in_plane, out_plane, oh, ow, w]() mutable {
        if (!yc.has_grad()) return;
        const T* gy = yc.grad().data();
        T* gx = xc.grad_data();
        const std::int64_t planes = xc.size() / in_plane;
        for (std::int64_t p = 0; p < planes; ++p)
          for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox)
              gx[p * in_plane + static_cast<std::int64_t>(map_y[oy]) * w + map_x[ox]] += gy[p * out_plane + oy * ow + ox];
      });
    }
    return y;
  }

  // Bilinear: precompute per-axis taps and weights.
  struct Tap {
    int i0, i1;
    T w1;  // weight of i1; i0 gets 1-w1
  };
  auto make_taps = [](int out, int in, double scale) {
    std::vector<Tap> taps(out);
    for (int i = 0; i < out; ++i) {
      double src = (i + 0.5) * scale - 0.5;
      int i0 = static_cast<int>(std::floor(src));
      T frac = static_cast<T>(src - i0);
      int i0c = std::min(in - 1, std::max(0, i0));
      int i1c = std::min(in - 1, std::max(0, i0 + 1));
      taps[i] = {i0c, i1c, frac};
    }
    return taps;
  };
  std::vector<Tap> ty = make_taps(oh, h, sy), tx = make_taps(ow, w, sx);

  for (std::int64_t p = 0; p < planes; ++p) {
    const T* src = x.data() + p * in_plane;
    T* dst = y.data() + p * out_plane;
    for (int oy = 0; oy < oh; ++oy) {
      const Tap& a = ty[oy];
      for (int ox = 0; ox < ow; ++ox) {
        const Tap& b = tx[ox];
        const T v00 = src[static_cast<std::int64_t>(a.i0) * w + b.i0];
        const T v01 = src[static_cast<std::int64_t>(a.i0) * w + b.i1];
        const T v10 = src[static_cast<std::int64_t>(a.i1) * w + b.i0];
        const T v11 = src[static_cast<std::int64_t>(a.i1) * w + b.i1];
        const T top = v00 + (v01 - v00) * b.w1;
        const T bot = v10 + (v11 - v10) * b.w1;
        dst[oy * ow + ox] = top + (bot - top) * a.w1;
      }
    }
  }

  GradTape<T>* tape = merge_tapes<T>({&x});
  if (tape && x.requires_grad()) {
    Tensor<T> xc = x, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, yc, ty, tx, in_plane, out_plane, oh, ow, w]() mutable {
      if (!yc.has_grad()) return;
      const T* gy = yc.grad().data();
      T* gx = xc.grad_data();
      const std::int64_t planes = xc.size() / in_plane;
      for (std::int64_t p = 0; p < planes; ++p)
        for (int oy = 0; oy < oh; ++oy) {
          const Tap& a = ty[oy];
          for (int ox = 0; ox < ow; ++ox) {
            const Tap& b = tx[ox];
            const T g = gy[p * out_plane + oy * ow + ox];
            T* base = gx + p * in_plane;
            base[static_cast<std::int64_t>(a.i0) * w + b.i0] += g * (T(1) - a.w1) * (T(1) - b.w1);
            base[static_cast<std::int64_t>(a.i0) * w + b.i1] += g * (T(1) - a.w1) * b.w1;
            base[static_cast<std::int64_t>(a.i1) * w + b.i0] += g * a.w1 * (T(1) - b.w1);
            base[static_cast<std::int64_t>(a.i1) * w + b.i1] += g * a.w1 * b.w1;
          }
        }
    });
  }
  return y;
}

}  // namespace cspdet
