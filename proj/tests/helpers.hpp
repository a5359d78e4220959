#pragma once

// Shared test utilities: independent reference implementations (naive
// loop oracles) and a central finite-difference gradient checker. These
// stay deliberately dumb and separate from the library code paths they
// validate.

#include <functional>
#include <vector>

#include "cspdet/core/random.hpp"
#include "cspdet/core/tensor.hpp"

namespace testutil {

template <typename T>
cspdet::Tensor<T> random_tensor(cspdet::Shape shape, cspdet::Rng& rng, double lo = -1.0, double hi = 1.0) {
  cspdet::Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Direct convolution: seven nested loops, zero cleverness.
template <typename T>
cspdet::Tensor<T> conv2d_ref(const cspdet::Tensor<T>& x, const cspdet::Tensor<T>& w, int stride, int pad,
                             int groups = 1) {
  const int batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wid = x.dim(3);
  const int cout = w.dim(0), k = w.dim(2);
  const int ig = cin / groups, og = cout / groups;
  const int ho = (h + 2 * pad - k) / stride + 1;
  const int wo = (wid + 2 * pad - k) / stride + 1;
  cspdet::Tensor<T> y({batch, cout, ho, wo});
  for (int n = 0; n < batch; ++n)
    for (int co = 0; co < cout; ++co) {
      const int g = co / og;
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T acc{};
          for (int ci = 0; ci < ig; ++ci)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wid) continue;
                acc += x.at(n, g * ig + ci, iy, ix) * w.at(co, ci, ky, kx);
              }
          y.at(n, co, oy, ox) = acc;
        }
    }
  return y;
}

// Sliding-window pooling reference.
template <typename T>
cspdet::Tensor<T> pool_ref(const cspdet::Tensor<T>& x, bool max_kind, int k, int stride) {
  const int batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const int ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  cspdet::Tensor<T> y({batch, c, ho, wo});
  for (int n = 0; n < batch; ++n)
    for (int ch = 0; ch < c; ++ch)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          T best = x.at(n, ch, oy * stride, ox * stride);
          T acc{};
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const T v = x.at(n, ch, oy * stride + ky, ox * stride + kx);
              best = std::max(best, v);
              acc += v;
            }
          y.at(n, ch, oy, ox) = max_kind ? best : acc / static_cast<T>(k * k);
        }
  return y;
}

// Triple-loop matrix multiplication reference for linear().
template <typename T>
cspdet::Tensor<T> matmul_ref(const cspdet::Tensor<T>& a, const cspdet::Tensor<T>& b) {
  const int n = a.dim(0), f = a.dim(1), g = b.dim(1);
  cspdet::Tensor<T> y({n, g});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < g; ++j) {
      T acc{};
      for (int k = 0; k < f; ++k) acc += a.data()[i * f + k] * b.data()[k * g + j];
      y.data()[i * g + j] = acc;
    }
  return y;
}

template <typename T>
double max_abs_diff(const cspdet::Tensor<T>& a, const cspdet::Tensor<T>& b) {
  if (a.shape() != b.shape()) return 1e30;
  double m = 0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a.data()[i]) - static_cast<double>(b.data()[i])));
  return m;
}

// Central finite-difference gradient check in double precision.
//
// loss_fn(tape) must rebuild the same scalar loss from the current
// parameter values, recording on `tape` when non-null. Relative error
// uses the max(1, |fd|) denominator, so near-zero gradients are judged
// absolutely.
struct GradCheckResult {
  double max_rel_err = 0.0;
  int checked = 0;
  bool ok(double tol) const { return checked > 0 && max_rel_err < tol; }
};

inline GradCheckResult gradcheck(const std::function<cspdet::TensorD(cspdet::GradTape<double>*)>& loss_fn,
                                 std::vector<cspdet::TensorD> params, int samples_per_param, double tol,
                                 std::uint64_t seed, double h_scale = 1e-5) {
  cspdet::GradTape<double> tape;
  cspdet::TensorD loss = loss_fn(&tape);
  for (auto& p : params) p.zero_grad();
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (p.has_grad())
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    else
      analytic.emplace_back(p.size(), 0.0);
  }

  cspdet::Rng rng(seed);
  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    const int samples = static_cast<int>(std::min<std::int64_t>(samples_per_param, p.size()));
    auto coords = rng.sample_without_replacement(static_cast<int>(p.size()), samples);
    for (int ci : coords) {
      const double x0 = p.data()[ci];
      const double h = h_scale * std::max(1.0, std::abs(x0));
      p.data()[ci] = x0 + h;
      const double lp = loss_fn(nullptr).item();
      p.data()[ci] = x0 - h;
      const double lm = loss_fn(nullptr).item();
      p.data()[ci] = x0;
      const double fd = (lp - lm) / (2 * h);
      const double rel = std::abs(analytic[pi][ci] - fd) / std::max(1.0, std::abs(fd));
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace testutil
