#pragma once

// Batch normalization over NCHW channels. Train mode normalizes with
// batch statistics and maintains running estimates by exponential
// moving average; eval mode normalizes with the running estimates.

#include <cmath>

#include "cspdet/core/tensor.hpp"

namespace cspdet {

// Running statistics live in plain (off-tape) tensors so they ride the
// same checkpoint path as parameters.
template <typename T>
struct BnState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  explicit BnState(int channels = 1)
      : running_mean(Tensor<T>::zeros({channels})), running_var(Tensor<T>::full({channels}, T(1))) {}
};

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BnState<T>& state,
                     bool training, T momentum = T(0.1), T eps = T(1e-5)) {
  if (x.ndim() != 4) throw std::invalid_argument("batch_norm expects an NCHW tensor");
  const int batch = x.n(), c = x.c(), h = x.h(), w = x.w();
  if (gamma.size() != c || beta.size() != c)
    throw std::invalid_argument("batch_norm gamma/beta length must equal channel count");
  if (state.running_mean.size() != c) throw std::invalid_argument("batch_norm state channel mismatch");
  T* rmean = state.running_mean.data();
  T* rvar = state.running_var.data();

  const std::int64_t plane = static_cast<std::int64_t>(h) * w;
  const std::int64_t per_channel = static_cast<std::int64_t>(batch) * plane;

  std::vector<T> mean(c), istd(c);
  if (training) {
    for (int ch = 0; ch < c; ++ch) {
      T m{};
      for (int n = 0; n < batch; ++n) {
        const T* src = x.data() + (static_cast<std::int64_t>(n) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) m += src[i];
      }
      m /= static_cast<T>(per_channel);
      T v{};
      for (int n = 0; n < batch; ++n) {
        const T* src = x.data() + (static_cast<std::int64_t>(n) * c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) {
          const T d = src[i] - m;
          v += d * d;
        }
      }
      v /= static_cast<T>(per_channel);
      mean[ch] = m;
      istd[ch] = T(1) / std::sqrt(v + eps);
      const T unbiased = per_channel > 1 ? v * static_cast<T>(per_channel) / static_cast<T>(per_channel - 1) : v;
      rmean[ch] = (T(1) - momentum) * rmean[ch] + momentum * m;
      rvar[ch] = (T(1) - momentum) * rvar[ch] + momentum * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      mean[ch] = rmean[ch];
      istd[ch] = T(1) / std::sqrt(rvar[ch] + eps);
    }
  }

  Tensor<T> y(x.shape());
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch) {
      const T* src = x.data() + (static_cast<std::int64_t>(n) * c + ch) * plane;
      T* dst = y.data() + (static_cast<std::int64_t>(n) * c + ch) * plane;
      const T g = gamma.data()[ch], b = beta.data()[ch], m = mean[ch], is = istd[ch];
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = (src[i] - m) * is * g + b;
    }
  check_finite_if_enabled(y, "batch_norm");

  GradTape<T>* tape = merge_tapes<T>({&x, &gamma, &beta});
  if (tape && any_requires_grad<T>({&x, &gamma, &beta})) {
    Tensor<T> xc = x, gc = gamma, bc = beta, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, gc, bc, yc, mean, istd, training, batch, c, plane, per_channel]() mutable {
      if (!yc.has_grad()) return;
      const T* gy = yc.grad().data();
      const bool need_x = xc.requires_grad();
      const bool need_g = gc.requires_grad();
      const bool need_b = bc.requires_grad();
      T* gx = need_x ? xc.grad_data() : nullptr;
      T* gg = need_g ? gc.grad_data() : nullptr;
      T* gb = need_b ? bc.grad_data() : nullptr;
      for (int ch = 0; ch < c; ++ch) {
        const T m = mean[ch], is = istd[ch], gam = gc.data()[ch];
        T sum_gy{}, sum_gy_xhat{};
        for (int n = 0; n < batch; ++n) {
          const std::int64_t off = (static_cast<std::int64_t>(n) * c + ch) * plane;
          const T* px = xc.data() + off;
          const T* pgy = gy + off;
          for (std::int64_t i = 0; i < plane; ++i) {
            sum_gy += pgy[i];
            sum_gy_xhat += pgy[i] * (px[i] - m) * is;
          }
        }
        if (need_g) gg[ch] += sum_gy_xhat;
        if (need_b) gb[ch] += sum_gy;
        if (need_x) {
          if (training) {
            const T inv_m = T(1) / static_cast<T>(per_channel);
            for (int n = 0; n < batch; ++n) {
              const std::int64_t off = (static_cast<std::int64_t>(n) * c + ch) * plane;
              const T* px = xc.data() + off;
              const T* pgy = gy + off;
              T* pgx = gx + off;
              for (std::int64_t i = 0; i < plane; ++i) {
                const T xhat = (px[i] - m) * is;
                pgx[i] += gam * is * (pgy[i] - inv_m * sum_gy - xhat * inv_m * sum_gy_xhat);
              }
            }
          } else {
            for (int n = 0; n < batch; ++n) {
              const std::int64_t off = (static_cast<std::int64_t>(n) * c + ch) * plane;
              const T* pgy = gy + off;
              T* pgx = gx + off;
              for (std::int64_t i = 0; i < plane; ++i) pgx[i] += pgy[i] * gam * is;
            }
          }
        }
      }
    });
  }
  return y;
}

}  // namespace cspdet
