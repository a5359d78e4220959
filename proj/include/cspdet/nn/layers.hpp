#pragma once

// Parameter-owning building blocks and the named-parameter registry.
// Layers are value types; forward methods are free of hidden state
// except BatchNorm2d's running statistics.

#include <cmath>

#include "cspdet/core/conv.hpp"
#include "cspdet/core/elementwise.hpp"
#include "cspdet/core/linalg.hpp"
#include "cspdet/core/norm.hpp"
#include "cspdet/core/pool.hpp"
#include "cspdet/core/random.hpp"
#include "cspdet/core/tensor.hpp"

namespace cspdet {

template <typename T>
struct ParamEntry {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;  // false for buffers such as running stats
};

// Ordered registry of uniquely named parameters and buffers.
template <typename T>
class ParamMap {
 public:
  void add(const std::string& name, Tensor<T> t, bool trainable = true) {
    for (const auto& e : entries_)
      if (e.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    entries_.push_back({name, std::move(t), trainable});
  }

  const std::vector<ParamEntry<T>>& entries() const { return entries_; }
  std::vector<ParamEntry<T>>& entries() { return entries_; }

  const ParamEntry<T>* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  std::int64_t trainable_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable) n += e.tensor.size();
    return n;
  }

  std::int64_t trainable_count_prefix(const std::string& prefix) const {
    std::int64_t n = 0;
    for (const auto& e : entries_)
      if (e.trainable && e.name.rfind(prefix, 0) == 0) n += e.tensor.size();
    return n;
  }

 private:
  std::vector<ParamEntry<T>> entries_;
};

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // OIKK
  Tensor<T> bias;    // optional
  ConvOpts opts;

  Conv2d() = default;

  Conv2d(int cin, int cout, int k, Rng& rng, int stride = 1, int pad = -1, int groups = 1, bool with_bias = false) {
    opts = {stride, pad < 0 ? k / 2 : pad, groups};
    weight = Tensor<T>({cout, cin / groups, k, k});
    const double fan_out = static_cast<double>(cout) * k * k / groups;
    const double stddev = std::sqrt(2.0 / fan_out);
    for (auto& v : weight.values()) v = static_cast<T>(rng.normal(0.0, stddev));
    weight.set_requires_grad(true);
    if (with_bias) {
      bias = Tensor<T>::zeros({cout});
      bias.set_requires_grad(true);
    }
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv2d(x, weight, bias, opts); }

  void collect(ParamMap<T>& m, const std::string& prefix) {
    m.add(prefix + ".weight", weight);
    if (bias.defined()) m.add(prefix + ".bias", bias);
  }
};

template <typename T>
struct ConvTranspose2d {
  Tensor<T> weight;  // IOKK
  Tensor<T> bias;
  int stride = 2;

  ConvTranspose2d() = default;

  ConvTranspose2d(int cin, int cout, int k, Rng& rng) : stride(k) {
    weight = Tensor<T>({cin, cout, k, k});
    const double fan_out = static_cast<double>(cout) * k * k;
    const double stddev = std::sqrt(2.0 / fan_out);
    for (auto& v : weight.values()) v = static_cast<T>(rng.normal(0.0, stddev));
    weight.set_requires_grad(true);
    bias = Tensor<T>::zeros({cout});
    bias.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return conv_transpose2d(x, weight, bias, stride); }

  void collect(ParamMap<T>& m, const std::string& prefix) {
    m.add(prefix + ".weight", weight);
    m.add(prefix + ".bias", bias);
  }
};

template <typename T>
struct BatchNorm2d {
  Tensor<T> gamma, beta;
  BnState<T> state;
  T momentum = T(0.1);
  T eps = T(1e-5);

  BatchNorm2d() : state(1) {}

  explicit BatchNorm2d(int channels) : state(channels) {
    gamma = Tensor<T>::full({channels}, T(1));
    beta = Tensor<T>::zeros({channels});
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    return batch_norm(x, gamma, beta, state, training, momentum, eps);
  }

  void collect(ParamMap<T>& m, const std::string& prefix) {
    m.add(prefix + ".gamma", gamma);
    m.add(prefix + ".beta", beta);
    m.add(prefix + ".running_mean", state.running_mean, /*trainable=*/false);
    m.add(prefix + ".running_var", state.running_var, /*trainable=*/false);
  }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // (F,G)
  Tensor<T> bias;    // (G)

  Linear() = default;

  Linear(int in, int out, Rng& rng) {
    weight = Tensor<T>({in, out});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : weight.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    weight.set_requires_grad(true);
    bias = Tensor<T>::zeros({out});
    for (auto& v : bias.values()) v = static_cast<T>(rng.uniform(-bound, bound));
    bias.set_requires_grad(true);
  }

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(ParamMap<T>& m, const std::string& prefix) {
    m.add(prefix + ".weight", weight);
    m.add(prefix + ".bias", bias);
  }
};

// Conv -> BatchNorm -> activation, the stem/transition workhorse.
template <typename T>
struct ConvBnAct {
  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  Activation act = Activation::swish;
  bool with_act = true;

  ConvBnAct() = default;

  ConvBnAct(int cin, int cout, int k, Rng& rng, int stride = 1, Activation a = Activation::swish,
            bool activated = true, int groups = 1)
      : conv(cin, cout, k, rng, stride, -1, groups), bn(cout), act(a), with_act(activated) {}

  Tensor<T> forward(const Tensor<T>& x, bool training) {
    Tensor<T> y = bn.forward(conv.forward(x), training);
    return with_act ? apply_activation(y, act) : y;
  }

  void collect(ParamMap<T>& m, const std::string& prefix) {
    conv.collect(m, prefix + ".conv");
    bn.collect(m, prefix + ".bn");
  }
};

}  // namespace cspdet
