#pragma once

// Fully connected layer on 2-d activations.

#include <Eigen/Dense>

#include "cspdet/core/flops.hpp"
#include "cspdet/core/tensor.hpp"

namespace cspdet {

// y = x @ w + b with x: (N,F), w: (F,G), b: (G) optional.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = Tensor<T>()) {
  if (x.ndim() != 2 || weight.ndim() != 2) throw std::invalid_argument("linear expects 2-d input and weight");
  const int n = x.dim(0), f = x.dim(1), g = weight.dim(1);
  if (weight.dim(0) != f)
    throw std::invalid_argument("linear inner dimensions disagree: " + shape_str(x.shape()) + " @ " +
                                shape_str(weight.shape()));
  if (bias.defined() && bias.size() != g) throw std::invalid_argument("linear bias length mismatch");

  using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Tensor<T> y({n, g});
  Eigen::Map<const RowMat> xm(x.data(), n, f);
  Eigen::Map<const RowMat> wm(weight.data(), f, g);
  Eigen::Map<RowMat> ym(y.data(), n, g);
  ym.noalias() = xm * wm;
  if (bias.defined()) {
    for (int i = 0; i < n; ++i) {
      T* row = y.data() + static_cast<std::int64_t>(i) * g;
      for (int j = 0; j < g; ++j) row[j] += bias.data()[j];
    }
  }
  count_macs(static_cast<std::uint64_t>(n) * f * g);
  check_finite_if_enabled(y, "linear");

  GradTape<T>* tape = merge_tapes<T>({&x, &weight, &bias});
  if (tape && any_requires_grad<T>({&x, &weight, &bias})) {
    Tensor<T> xc = x, wc = weight, bc = bias, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, wc, bc, yc, n, f, g]() mutable {
      if (!yc.has_grad()) return;
      Eigen::Map<const RowMat> gym(yc.grad().data(), n, g);
      if (xc.requires_grad()) {
        Eigen::Map<const RowMat> wm(wc.data(), f, g);
        Eigen::Map<RowMat> gxm(xc.grad_data(), n, f);
        gxm.noalias() += gym * wm.transpose();
      }
      if (wc.requires_grad()) {
        Eigen::Map<const RowMat> xm(xc.data(), n, f);
        Eigen::Map<RowMat> gwm(wc.grad_data(), f, g);
        gwm.noalias() += xm.transpose() * gym;
      }
      if (bc.defined() && bc.requires_grad()) {
        T* gb = bc.grad_data();
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < g; ++j) gb[j] += yc.grad().data()[static_cast<std::int64_t>(i) * g + j];
      }
    });
  }
  return y;
}

}  // namespace cspdet
