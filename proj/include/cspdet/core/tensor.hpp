#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A GradTape owns the recorded backward program for one forward pass.
// Tensors are cheap shared handles; an op's output is attached to the
// tape of its inputs, and a backward rule is recorded whenever gradients
// can flow. Leaf tensors (parameters) carry requires_grad and accumulate
// gradients across backward calls; intermediate gradients are transient
// and reset at the start of every backward().

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cspdet {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

// Thrown when a numeric check detects NaN/Inf in an op result.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Global switch for per-op finite checks (off by default; the trainer
// always checks loss components regardless).
inline bool& numerics_check() {
  static bool enabled = false;
  return enabled;
}

template <typename T>
class GradTape;

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{}) {
    for (int d : shape) {
      if (d <= 0) throw std::invalid_argument("tensor extents must be positive, got " + shape_str(shape));
    }
    d_ = std::make_shared<Storage>();
    d_->shape = std::move(shape);
    d_->v.assign(static_cast<size_t>(shape_numel(d_->shape)), fill);
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, T v) { return Tensor(std::move(s), v); }

  static Tensor from(Shape s, std::vector<T> v) {
    Tensor t;
    t.d_ = std::make_shared<Storage>();
    if (shape_numel(s) != static_cast<std::int64_t>(v.size()))
      throw std::invalid_argument("value count does not match shape " + shape_str(s));
    t.d_->shape = std::move(s);
    t.d_->v = std::move(v);
    return t;
  }

  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int ndim() const { return static_cast<int>(d_->shape.size()); }
  int dim(int i) const { return d_->shape[static_cast<size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(d_->v.size()); }

  T* data() { return d_->v.data(); }
  const T* data() const { return d_->v.data(); }
  std::span<T> values() { return d_->v; }
  std::span<const T> values() const { return d_->v; }

  T item() const {
    if (size() != 1) throw std::invalid_argument("item() requires a one-element tensor");
    return d_->v[0];
  }

  // NCHW accessors for the common 4-d case.
  int n() const { return dim(0); }
  int c() const { return dim(1); }
  int h() const { return dim(2); }
  int w() const { return dim(3); }
  T& at(int n, int c, int y, int x) {
    return d_->v[((static_cast<std::int64_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }
  T at(int n, int c, int y, int x) const {
    return d_->v[((static_cast<std::int64_t>(n) * dim(1) + c) * dim(2) + y) * dim(3) + x];
  }

  bool requires_grad() const { return d_ && d_->requires_grad; }
  Tensor& set_requires_grad(bool b) {
    d_->requires_grad = b;
    return *this;
  }

  bool has_grad() const { return d_ && !d_->g.empty(); }
  std::span<T> grad() {
    ensure_grad();
    return d_->g;
  }
  std::span<const T> grad() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return d_->g;
  }
  T* grad_data() {
    ensure_grad();
    return d_->g.data();
  }
  void ensure_grad() {
    if (d_->g.empty()) d_->g.assign(d_->v.size(), T{});
  }
  void zero_grad() {
    if (!d_->g.empty()) std::fill(d_->g.begin(), d_->g.end(), T{});
  }
  void drop_grad() { d_->g.clear(); }

  GradTape<T>* tape() const { return d_ ? d_->tape : nullptr; }

  // Used by ops and GradTape::watch; not part of the public surface.
  void attach_(GradTape<T>* tape, bool req) {
    d_->tape = tape;
    d_->requires_grad = req;
  }

  // Deep copy, detached from any tape.
  Tensor clone() const {
    Tensor t;
    t.d_ = std::make_shared<Storage>();
    t.d_->shape = d_->shape;
    t.d_->v = d_->v;
    return t;
  }

  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

  bool all_finite() const {
    for (T x : d_->v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<T> v;
    std::vector<T> g;
    bool requires_grad = false;
    GradTape<T>* tape = nullptr;
  };
  std::shared_ptr<Storage> d_;
};

template <typename T>
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  // Marks a tensor as belonging to this tape so downstream ops record.
  Tensor<T> watch(Tensor<T> t) {
    t.attach_(this, t.requires_grad());
    return t;
  }

  // Registers an executed op: its output handles (for transient-grad
  // bookkeeping) and the rule that propagates output grads to inputs.
  void record(std::vector<Tensor<T>> outputs, std::function<void()> backward) {
    for (auto& o : outputs) outputs_.push_back(o);
    nodes_.push_back(std::move(backward));
  }

  size_t num_ops() const { return nodes_.size(); }

  // Propagates d(loss)/d(x) to every reachable tensor that requires a
  // gradient. Leaf gradients accumulate across calls; intermediate
  // gradients are reset each call.
  void backward(Tensor<T>& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw std::invalid_argument("backward() requires a scalar loss");
    if (nodes_.empty()) throw std::invalid_argument("backward() on an empty tape");
    for (auto& o : outputs_) o.drop_grad();
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
  }

  void clear() {
    nodes_.clear();
    outputs_.clear();
  }

 private:
  std::vector<std::function<void()>> nodes_;
  std::vector<Tensor<T>> outputs_;
};

// Resolves the tape shared by a set of op inputs. Inputs from two
// different live tapes are a usage error.
template <typename T>
GradTape<T>* merge_tapes(std::initializer_list<const Tensor<T>*> ins) {
  GradTape<T>* tape = nullptr;
  for (const Tensor<T>* t : ins) {
    if (!t->defined() || !t->tape()) continue;
    if (tape && tape != t->tape()) throw std::invalid_argument("op inputs belong to different gradient tapes");
    tape = t->tape();
  }
  return tape;
}

template <typename T>
bool any_requires_grad(std::initializer_list<const Tensor<T>*> ins) {
  for (const Tensor<T>* t : ins)
    if (t->defined() && t->requires_grad()) return true;
  return false;
}

template <typename T>
void check_finite_if_enabled(const Tensor<T>& t, const char* op) {
  if (numerics_check() && !t.all_finite())
    throw NumericError(std::string(op) + " produced a non-finite value");
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace cspdet
