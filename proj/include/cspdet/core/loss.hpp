#pragma once

// Fused scalar losses with analytic backward rules.

#include <cmath>

#include "cspdet/core/elementwise.hpp"
#include "cspdet/core/tensor.hpp"

namespace cspdet {

// Mean cross-entropy of row-wise softmax vs integer labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw std::invalid_argument("softmax_cross_entropy expects (N,C) logits");
  const int n = logits.dim(0), c = logits.dim(1);
  if (static_cast<int>(labels.size()) != n) throw std::invalid_argument("label count mismatch");
  T total{};
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= c) throw std::invalid_argument("label out of range");
    const T* row = logits.data() + static_cast<std::int64_t>(i) * c;
    T mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T lse{};
    for (int j = 0; j < c; ++j) lse += std::exp(row[j] - mx);
    total += std::log(lse) + mx - row[labels[i]];
  }
  Tensor<T> loss = Tensor<T>::scalar(total / static_cast<T>(n));
  check_finite_if_enabled(loss, "softmax_cross_entropy");

  GradTape<T>* tape = merge_tapes<T>({&logits});
  if (tape && logits.requires_grad()) {
    Tensor<T> lc = logits, out = loss;
    out.attach_(tape, true);
    tape->record({loss}, [lc, out, labels, n, c]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] / static_cast<T>(n);
      T* gx = lc.grad_data();
      for (int i = 0; i < n; ++i) {
        const T* row = lc.data() + static_cast<std::int64_t>(i) * c;
        T mx = row[0];
        for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        T denom{};
        for (int j = 0; j < c; ++j) denom += std::exp(row[j] - mx);
        for (int j = 0; j < c; ++j) {
          const T p = std::exp(row[j] - mx) / denom;
          gx[static_cast<std::int64_t>(i) * c + j] += g * (p - (j == labels[i] ? T(1) : T(0)));
        }
      }
    });
  }
  return loss;
}

// Elementwise sigmoid binary cross-entropy against targets in [0,1],
// summed and divided by `normalizer` (defaults to the element count).
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets, T normalizer = T(-1)) {
  if (logits.shape() != targets.shape()) throw std::invalid_argument("bce_with_logits shape mismatch");
  const std::int64_t n = logits.size();
  const T norm = normalizer > T(0) ? normalizer : static_cast<T>(n);
  T total{};
  for (std::int64_t i = 0; i < n; ++i) {
    const T x = logits.data()[i], t = targets.data()[i];
    total += std::max(x, T(0)) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  Tensor<T> loss = Tensor<T>::scalar(total / norm);
  check_finite_if_enabled(loss, "bce_with_logits");

  GradTape<T>* tape = merge_tapes<T>({&logits, &targets});
  if (tape && logits.requires_grad()) {
    Tensor<T> lc = logits, tc = targets, out = loss;
    out.attach_(tape, true);
    tape->record({loss}, [lc, tc, out, n, norm]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] / norm;
      T* gx = lc.grad_data();
      for (std::int64_t i = 0; i < n; ++i)
        gx[i] += g * (sigmoid_value(lc.data()[i]) - tc.data()[i]);
    });
  }
  return loss;
}

// Huber-style regression loss, summed over elements and divided by
// `normalizer`.
template <typename T>
Tensor<T> smooth_l1(const Tensor<T>& pred, const Tensor<T>& target, T beta, T normalizer) {
  if (pred.shape() != target.shape()) throw std::invalid_argument("smooth_l1 shape mismatch");
  if (normalizer <= T(0)) throw std::invalid_argument("smooth_l1 normalizer must be positive");
  const std::int64_t n = pred.size();
  T total{};
  for (std::int64_t i = 0; i < n; ++i) {
    const T d = pred.data()[i] - target.data()[i];
    const T ad = std::abs(d);
    total += ad < beta ? T(0.5) * d * d / beta : ad - T(0.5) * beta;
  }
  Tensor<T> loss = Tensor<T>::scalar(total / normalizer);
  check_finite_if_enabled(loss, "smooth_l1");

  GradTape<T>* tape = merge_tapes<T>({&pred, &target});
  if (tape && pred.requires_grad()) {
    Tensor<T> pc = pred, tc = target, out = loss;
    out.attach_(tape, true);
    tape->record({loss}, [pc, tc, out, n, beta, normalizer]() mutable {
      if (!out.has_grad()) return;
      const T g = out.grad()[0] / normalizer;
      T* gx = pc.grad_data();
      for (std::int64_t i = 0; i < n; ++i) {
        const T d = pc.data()[i] - tc.data()[i];
        gx[i] += g * (std::abs(d) < beta ? d / beta : (d > T(0) ? T(1) : T(-1)));
      }
    });
  }
  return loss;
}

}  // namespace cspdet
