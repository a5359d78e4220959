#pragma once

// Elementwise arithmetic (with size-1 broadcasting), activations and
// whole-tensor reductions, plus the shape-shuffling ops (reshape,
// concat/split, row gather) everything else is composed from.

#include <cmath>
#include <cstring>

#include "cspdet/core/tensor.hpp"

namespace cspdet {

namespace detail {

// Equal-rank broadcasting: every dim must match or be 1 on one side.
inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("broadcast requires equal rank: " + shape_str(a) + " vs " + shape_str(b));
  Shape out(a.size());
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i] == b[i] || a[i] == 1 || b[i] == 1)
      out[i] = std::max(a[i], b[i]);
    else
      throw std::invalid_argument("incompatible shapes: " + shape_str(a) + " vs " + shape_str(b));
  }
  return out;
}

inline std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> st(out.size());
  std::int64_t acc = 1;
  for (int i = static_cast<int>(out.size()) - 1; i >= 0; --i) {
    st[i] = (in[i] == 1) ? 0 : acc;
    acc *= in[i];
  }
  return st;
}

// Invokes fn(out_index, a_index, b_index) over the broadcast domain.
template <typename Fn>
void for_broadcast(const Shape& out, const std::vector<std::int64_t>& sa, const std::vector<std::int64_t>& sb,
                   Fn&& fn) {
  const int nd = static_cast<int>(out.size());
  std::vector<int> idx(nd, 0);
  std::int64_t ia = 0, ib = 0;
  const std::int64_t total = shape_numel(out);
  for (std::int64_t io = 0; io < total; ++io) {
    fn(io, ia, ib);
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out[d]) break;
      idx[d] = 0;
      ia -= static_cast<std::int64_t>(out[d]) * sa[d];
      ib -= static_cast<std::int64_t>(out[d]) * sb[d];
    }
  }
}

}  // namespace detail

enum class BinaryKind { add, sub, mul, div };

template <typename T>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const bool same = a.shape() == b.shape();
  Shape out_shape = same ? a.shape() : detail::broadcast_shape(a.shape(), b.shape());
  Tensor<T> y(out_shape);

  auto apply = [kind](T x, T z) -> T {
    switch (kind) {
      case BinaryKind::add: return x + z;
      case BinaryKind::sub: return x - z;
      case BinaryKind::mul: return x * z;
      case BinaryKind::div: return x / z;
    }
    return T{};
  };

  const T* pa = a.data();
  const T* pb = b.data();
  T* py = y.data();
  std::vector<std::int64_t> sa, sb;
  if (same) {
    const std::int64_t n = y.size();
    for (std::int64_t i = 0; i < n; ++i) py[i] = apply(pa[i], pb[i]);
  } else {
    sa = detail::broadcast_strides(a.shape(), out_shape);
    sb = detail::broadcast_strides(b.shape(), out_shape);
    detail::for_broadcast(out_shape, sa, sb,
                          [&](std::int64_t io, std::int64_t ia, std::int64_t ib) { py[io] = apply(pa[ia], pb[ib]); });
  }

  GradTape<T>* tape = merge_tapes<T>({&a, &b});
  if (tape && any_requires_grad<T>({&a, &b})) {
    Tensor<T> ac = a, bc = b, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [ac, bc, yc, kind, same, out_shape, sa, sb]() mutable {
      if (!yc.has_grad()) return;
      const T* gy = yc.grad().data();
      const T* pa = ac.data();
      const T* pb = bc.data();
      const bool need_a = ac.requires_grad();
      const bool need_b = bc.requires_grad();
      T* ga = need_a ? ac.grad_data() : nullptr;
      T* gb = need_b ? bc.grad_data() : nullptr;
      auto accum = [&](std::int64_t io, std::int64_t ia, std::int64_t ib) {
        const T g = gy[io];
        switch (kind) {
          case BinaryKind::add:
            if (need_a) ga[ia] += g;
            if (need_b) gb[ib] += g;
            break;
          case BinaryKind::sub:
            if (need_a) ga[ia] += g;
            if (need_b) gb[ib] -= g;
            break;
          case BinaryKind::mul:
            if (need_a) ga[ia] += g * pb[ib];
            if (need_b) gb[ib] += g * pa[ia];
            break;
          case BinaryKind::div:
            if (need_a) ga[ia] += g / pb[ib];
            if (need_b) gb[ib] -= g * pa[ia] / (pb[ib] * pb[ib]);
            break;
        }
      };
      if (same) {
        const std::int64_t n = yc.size();
        for (std::int64_t i = 0; i < n; ++i) accum(i, i, i);
      } else {
        detail::for_broadcast(out_shape, sa, sb, accum);
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, BinaryKind::add);
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, BinaryKind::sub);
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, BinaryKind::mul);
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return binary_op(a, b, BinaryKind::div);
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return add(a, Tensor<T>::full(Shape(a.shape().size(), 1), s));
}
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
  return mul(a, Tensor<T>::full(Shape(a.shape().size(), 1), s));
}
template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return mul_scalar(a, T(-1));
}

enum class Activation { relu, swish, sigmoid };

template <typename T>
inline T sigmoid_value(T x) {
  return x >= T(0) ? T(1) / (T(1) + std::exp(-x)) : std::exp(x) / (T(1) + std::exp(x));
}

template <typename T>
Tensor<T> apply_activation(const Tensor<T>& x, Activation kind) {
  Tensor<T> y(x.shape());
  const T* px = x.data();
  T* py = y.data();
  const std::int64_t n = x.size();
  switch (kind) {
    case Activation::relu:
      for (std::int64_t i = 0; i < n; ++i) py[i] = px[i] > T(0) ? px[i] : T(0);
      break;
    case Activation::sigmoid:
      for (std::int64_t i = 0; i < n; ++i) py[i] = sigmoid_value(px[i]);
      break;
    case Activation::swish:
      for (std::int64_t i = 0; i < n; ++i) py[i] = px[i] * sigmoid_value(px[i]);
      break;
  }
  GradTape<T>* tape = merge_tapes<T>({&x});
  if (tape && x.requires_grad()) {
    Tensor<T> xc = x, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, yc, kind]() mutable {
      if (!yc.has_grad()) return;
      const T* gy = yc.grad().data();
      const T* px = xc.data();
      const T* py = yc.data();
      T* gx = xc.grad_data();
      const std::int64_t n = xc.size();
      switch (kind) {
        case Activation::relu:
          for (std::int64_t i = 0; i < n; ++i) gx[i] += px[i] > T(0) ? gy[i] : T(0);
          break;
        case Activation::sigmoid:
          for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i] * py[i] * (T(1) - py[i]);
          break;
        case Activation::swish:
          for (std::int64_t i = 0; i < n; ++i) {
            const T s = sigmoid_value(px[i]);
            gx[i] += gy[i] * (s + px[i] * s * (T(1) - s));
          }
          break;
      }
    });
  }
  return y;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return apply_activation(x, Activation::relu);
}
template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return apply_activation(x, Activation::sigmoid);
}
template <typename T>
Tensor<T> swish(const Tensor<T>& x) {
  return apply_activation(x, Activation::swish);
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc{};
  for (T v : x.values()) acc += v;
  Tensor<T> y = Tensor<T>::scalar(acc);
  GradTape<T>* tape = merge_tapes<T>({&x});
  if (tape && x.requires_grad()) {
    Tensor<T> xc = x, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, yc]() mutable {
      if (!yc.has_grad()) return;
      const T g = yc.grad()[0];
      T* gx = xc.grad_data();
      const std::int64_t n = xc.size();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
    });
  }
  return y;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  return mul_scalar(sum_all(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.size())
    throw std::invalid_argument("reshape to " + shape_str(shape) + " changes element count");
  Tensor<T> y = Tensor<T>::from(std::move(shape), std::vector<T>(x.values().begin(), x.values().end()));
  GradTape<T>* tape = merge_tapes<T>({&x});
  if (tape && x.requires_grad()) {
    Tensor<T> xc = x, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, yc]() mutable {
      if (!yc.has_grad()) return;
      const T* gy = yc.grad().data();
      T* gx = xc.grad_data();
      const std::int64_t n = xc.size();
      for (std::int64_t i = 0; i < n; ++i) gx[i] += gy[i];
    });
  }
  return y;
}

namespace detail {
// Views an nd tensor as [outer, axis, inner] for axis-wise ops.
inline void axis_split_sizes(const Shape& s, int axis, std::int64_t& outer, std::int64_t& ax, std::int64_t& inner) {
  if (axis < 0 || axis >= static_cast<int>(s.size())) throw std::invalid_argument("axis out of range");
  outer = 1;
  for (int i = 0; i < axis; ++i) outer *= s[i];
  ax = s[axis];
  inner = 1;
  for (size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
}
}  // namespace detail

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat of zero tensors");
  Shape out_shape = parts[0].shape();
  std::int64_t total_axis = 0;
  for (const auto& p : parts) {
    if (p.ndim() != static_cast<int>(out_shape.size())) throw std::invalid_argument("concat rank mismatch");
    for (int i = 0; i < p.ndim(); ++i)
      if (i != axis && p.dim(i) != out_shape[i]) throw std::invalid_argument("concat extent mismatch on non-axis dim");
    total_axis += p.dim(axis);
  }
  out_shape[axis] = static_cast<int>(total_axis);
  Tensor<T> y(out_shape);

  std::int64_t outer, ax_out, inner;
  detail::axis_split_sizes(out_shape, axis, outer, ax_out, inner);
  T* py = y.data();
  std::int64_t axis_off = 0;
  for (const auto& p : parts) {
    const std::int64_t ax_p = p.dim(axis);
    const T* pp = p.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(py + (o * ax_out + axis_off) * inner, pp + o * ax_p * inner,
                  static_cast<size_t>(ax_p * inner) * sizeof(T));
    axis_off += ax_p;
  }

  GradTape<T>* tape = nullptr;
  bool req = false;
  for (const auto& p : parts) {
    if (p.tape()) {
      if (tape && tape != p.tape()) throw std::invalid_argument("op inputs belong to different gradient tapes");
      tape = p.tape();
    }
    req = req || p.requires_grad();
  }
  if (tape && req) {
    std::vector<Tensor<T>> pc(parts.begin(), parts.end());
    Tensor<T> yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [pc, yc, axis, outer, ax_out, inner]() mutable {
      if (!yc.has_grad()) return;
      const T* gy = yc.grad().data();
      std::int64_t axis_off = 0;
      for (auto& p : pc) {
        const std::int64_t ax_p = p.dim(axis);
        if (p.requires_grad()) {
          T* gp = p.grad_data();
          for (std::int64_t o = 0; o < outer; ++o) {
            const T* src = gy + (o * ax_out + axis_off) * inner;
            T* dst = gp + o * ax_p * inner;
            for (std::int64_t i = 0; i < ax_p * inner; ++i) dst[i] += src[i];
          }
        }
        axis_off += ax_p;
      }
    });
  }
  return y;
}

template <typename T>
std::vector<Tensor<T>> split(const Tensor<T>& x, const std::vector<int>& sizes, int axis) {
  std::int64_t total = 0;
  for (int s : sizes) {
    if (s <= 0) throw std::invalid_argument("split produces an empty side");
    total += s;
  }
  if (total != x.dim(axis)) throw std::invalid_argument("split sizes must cover the axis extent");

  std::int64_t outer, ax_in, inner;
  detail::axis_split_sizes(x.shape(), axis, outer, ax_in, inner);

  std::vector<Tensor<T>> parts;
  const T* px = x.data();
  std::int64_t axis_off = 0;
  for (int s : sizes) {
    Shape sh = x.shape();
    sh[axis] = s;
    Tensor<T> p(sh);
    T* pp = p.data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(pp + o * s * inner, px + (o * ax_in + axis_off) * inner,
                  static_cast<size_t>(static_cast<std::int64_t>(s) * inner) * sizeof(T));
    parts.push_back(p);
    axis_off += s;
  }

  GradTape<T>* tape = merge_tapes<T>({&x});
  if (tape && x.requires_grad()) {
    Tensor<T> xc = x;
    std::vector<Tensor<T>> pcs = parts;
    for (auto& p : pcs) p.attach_(tape, true);
    tape->record(parts, [xc, pcs, axis, outer, ax_in, inner]() mutable {
      bool any = false;
      for (auto& p : pcs) any = any || p.has_grad();
      if (!any) return;
      T* gx = xc.grad_data();
      std::int64_t axis_off = 0;
      for (auto& p : pcs) {
        const std::int64_t s = p.dim(axis);
        if (p.has_grad()) {
          const T* gp = p.grad().data();
          for (std::int64_t o = 0; o < outer; ++o) {
            T* dst = gx + (o * ax_in + axis_off) * inner;
            const T* src = gp + o * s * inner;
            for (std::int64_t i = 0; i < s * inner; ++i) dst[i] += src[i];
          }
        }
        axis_off += s;
      }
    });
  }
  return parts;
}

// Gathers rows of a 2-d tensor; backward scatter-adds.
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& rows) {
  if (x.ndim() != 2) throw std::invalid_argument("gather_rows expects a 2-d tensor");
  const int cols = x.dim(1);
  Tensor<T> y({static_cast<int>(rows.size()), cols});
  const T* px = x.data();
  T* py = y.data();
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] < 0 || rows[r] >= x.dim(0)) throw std::invalid_argument("gather_rows index out of range");
    std::memcpy(py + r * cols, px + static_cast<std::int64_t>(rows[r]) * cols, sizeof(T) * cols);
  }
  GradTape<T>* tape = merge_tapes<T>({&x});
  if (tape && x.requires_grad()) {
    Tensor<T> xc = x, yc = y;
    yc.attach_(tape, true);
    tape->record({y}, [xc, yc, rows, cols]() mutable {
      if (!yc.has_grad()) return;
      const T* gy = yc.grad().data();
      T* gx = xc.grad_data();
      for (size_t r = 0; r < rows.size(); ++r)
        for (int c = 0; c < cols; ++c) gx[static_cast<std::int64_t>(rows[r]) * cols + c] += gy[r * cols + c];
    });
  }
  return y;
}

// Row-wise softmax of a 2-d tensor (forward-only convenience; training
// paths use the fused cross-entropy loss instead).
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.ndim() != 2) throw std::invalid_argument("softmax expects a 2-d tensor");
  Tensor<T> y(x.shape());
  const int n = x.dim(0), c = x.dim(1);
  for (int i = 0; i < n; ++i) {
    const T* row = x.data() + static_cast<std::int64_t>(i) * c;
    T* out = y.data() + static_cast<std::int64_t>(i) * c;
    T mx = row[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T denom{};
    for (int j = 0; j < c; ++j) {
      out[j] = std::exp(row[j] - mx);
      denom += out[j];
    }
    for (int j = 0; j < c; ++j) out[j] /= denom;
  }
  return y;
}

}  // namespace cspdet
