// Finite-difference gradient checks for every differentiable primitive,
// run in double precision. Relative tolerance 1e-4 with the max(1,|fd|)
// denominator; composed layers are checked in their own suites at 1e-3.

#include "cspdet/core/conv.hpp"
#include "cspdet/core/elementwise.hpp"
#include "cspdet/core/linalg.hpp"
#include "cspdet/core/loss.hpp"
#include "cspdet/core/norm.hpp"
#include "cspdet/core/pool.hpp"
#include "cspdet/core/resize.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace cspdet;
using testutil::gradcheck;
using testutil::random_tensor;

namespace {

// Projects a tensor to a scalar with fixed random weights so every
// output coordinate influences the loss.
TensorD weighted_sum(const TensorD& t, std::uint64_t seed) {
  Rng rng(seed);
  TensorD w = random_tensor<double>(t.shape(), rng, 0.1, 1.0);
  return sum_all(mul(t, w));
}

}  // namespace

TEST_CASE("gradcheck: conv2d") {
  Rng rng(101);
  TensorD x = random_tensor<double>({2, 3, 6, 6}, rng);
  TensorD w = random_tensor<double>({4, 3, 3, 3}, rng);
  TensorD b = random_tensor<double>({4}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  auto fn = [&](GradTape<double>* tape) {
    TensorD xi = tape ? tape->watch(x) : x;
    return weighted_sum(conv2d(xi, w, b, {2, 1, 1}), 1);
  };
  auto res = gradcheck(fn, {x, w, b}, 20, 1e-4, 42);
  CHECK(res.ok(1e-4));
}

TEST_CASE("gradcheck: depthwise conv2d") {
  Rng rng(102);
  TensorD x = random_tensor<double>({1, 4, 5, 5}, rng);
  TensorD w = random_tensor<double>({4, 1, 3, 3}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  auto fn = [&](GradTape<double>* tape) {
    TensorD xi = tape ? tape->watch(x) : x;
    return weighted_sum(conv2d(xi, w, {1, 1, 4}), 2);
  };
  CHECK(gradcheck(fn, {x, w}, 20, 1e-4, 43).ok(1e-4));
}

TEST_CASE("gradcheck: conv_transpose2d") {
  Rng rng(103);
  TensorD x = random_tensor<double>({1, 3, 4, 4}, rng);
  TensorD w = random_tensor<double>({3, 2, 2, 2}, rng);
  TensorD b = random_tensor<double>({2}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  auto fn = [&](GradTape<double>* tape) {
    TensorD xi = tape ? tape->watch(x) : x;
    return weighted_sum(conv_transpose2d(xi, w, b, 2), 3);
  };
  CHECK(gradcheck(fn, {x, w, b}, 20, 1e-4, 44).ok(1e-4));
}

TEST_CASE("gradcheck: pooling kinds") {
  Rng rng(104);
  TensorD x = random_tensor<double>({2, 2, 6, 6}, rng);
  x.set_requires_grad(true);
  for (PoolKind kind : {PoolKind::max, PoolKind::avg, PoolKind::global_avg, PoolKind::global_max}) {
    auto fn = [&](GradTape<double>* tape) {
      TensorD xi = tape ? tape->watch(x) : x;
      return weighted_sum(pool(xi, kind, 2, 2), 4);
    };
    CHECK(gradcheck(fn, {x}, 20, 1e-4, 45).ok(1e-4));
  }
  auto fn = [&](GradTape<double>* tape) {
    TensorD xi = tape ? tape->watch(x) : x;
    return weighted_sum(adaptive_max_pool(xi, 4, 4), 5);
  };
  CHECK(gradcheck(fn, {x}, 20, 1e-4, 46).ok(1e-4));
}

TEST_CASE("gradcheck: activations") {
  Rng rng(105);
  // Keep relu inputs clear of the kink.
  TensorD x = random_tensor<double>({1, 2, 4, 4}, rng, 0.2, 1.5);
  TensorD xn = random_tensor<double>({1, 2, 4, 4}, rng, -1.5, -0.2);
  x.set_requires_grad(true);
  xn.set_requires_grad(true);
  for (Activation a : {Activation::relu, Activation::swish, Activation::sigmoid}) {
    auto fn = [&](GradTape<double>* tape) {
      TensorD xi = tape ? tape->watch(x) : x;
      TensorD xj = tape ? tape->watch(xn) : xn;
      return weighted_sum(apply_activation(concat<double>({xi, xj}, 1), a), 6);
    };
    CHECK(gradcheck(fn, {x, xn}, 20, 1e-4, 47).ok(1e-4));
  }
}

TEST_CASE("gradcheck: swish derivative at x = 1 matches finite differences") {
  TensorD x = TensorD::scalar(1.0);
  x.set_requires_grad(true);
  auto fn = [&](GradTape<double>* tape) {
    TensorD xi = tape ? tape->watch(x) : x;
    return swish(xi);
  };
  auto res = gradcheck(fn, {x}, 1, 1e-4, 48);
  CHECK(res.ok(1e-4));
}

TEST_CASE("gradcheck: batch_norm train and eval modes") {
  Rng rng(106);
  TensorD x = random_tensor<double>({2, 3, 2, 2}, rng);
  TensorD gamma = random_tensor<double>({3}, rng, 0.5, 1.5);
  TensorD beta = random_tensor<double>({3}, rng);
  x.set_requires_grad(true);
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
  for (bool training : {true, false}) {
    BnState<double> state(3);
    for (int c = 0; c < 3; ++c) {
      state.running_mean.data()[c] = 0.1 * c;
      state.running_var.data()[c] = 1.0 + 0.2 * c;
    }
    auto fn = [&](GradTape<double>* tape) {
      BnState<double> local = state;  // keep FD evaluations from drifting shared stats
      TensorD xi = tape ? tape->watch(x) : x;
      return weighted_sum(batch_norm(xi, gamma, beta, local, training), 7);
    };
    CHECK(gradcheck(fn, {x, gamma, beta}, 20, 1e-3, 49).ok(1e-3));
  }
}

TEST_CASE("gradcheck: interpolate") {
  Rng rng(107);
  TensorD x = random_tensor<double>({1, 2, 3, 3}, rng);
  x.set_requires_grad(true);
  for (ResizeMode mode : {ResizeMode::nearest, ResizeMode::bilinear}) {
    auto up = [&](GradTape<double>* tape) {
      TensorD xi = tape ? tape->watch(x) : x;
      return weighted_sum(interpolate(xi, 5, 7, mode), 8);
    };
    CHECK(gradcheck(up, {x}, 18, 1e-4, 50).ok(1e-4));
  }
}

TEST_CASE("gradcheck: linear") {
  Rng rng(108);
  TensorD x = random_tensor<double>({3, 4}, rng);
  TensorD w = random_tensor<double>({4, 5}, rng);
  TensorD b = random_tensor<double>({5}, rng);
  x.set_requires_grad(true);
  w.set_requires_grad(true);
  b.set_requires_grad(true);
  auto fn = [&](GradTape<double>* tape) {
    TensorD xi = tape ? tape->watch(x) : x;
    return weighted_sum(linear(xi, w, b), 9);
  };
  CHECK(gradcheck(fn, {x, w, b}, 20, 1e-4, 51).ok(1e-4));
}

TEST_CASE("gradcheck: elementwise with broadcasting") {
  Rng rng(109);
  TensorD a = random_tensor<double>({2, 3, 2, 2}, rng, 0.5, 2.0);
  TensorD g = random_tensor<double>({2, 3, 1, 1}, rng, 0.5, 2.0);
  a.set_requires_grad(true);
  g.set_requires_grad(true);
  for (BinaryKind kind : {BinaryKind::add, BinaryKind::sub, BinaryKind::mul, BinaryKind::div}) {
    auto fn = [&](GradTape<double>* tape) {
      TensorD ai = tape ? tape->watch(a) : a;
      return weighted_sum(binary_op(ai, g, kind), 10);
    };
    CHECK(gradcheck(fn, {a, g}, 20, 1e-4, 52).ok(1e-4));
  }
}

TEST_CASE("gradcheck: shape ops") {
  Rng rng(110);
  TensorD x = random_tensor<double>({2, 6, 2, 2}, rng);
  x.set_requires_grad(true);
  auto fn = [&](GradTape<double>* tape) {
    TensorD xi = tape ? tape->watch(x) : x;
    auto parts = split(xi, {2, 4}, 1);
    TensorD cat = concat<double>({parts[1], parts[0]}, 1);
    TensorD flat = reshape(cat, {2, 24});
    return weighted_sum(gather_rows(flat, {1, 0, 1}), 11);
  };
  CHECK(gradcheck(fn, {x}, 24, 1e-4, 53).ok(1e-4));
}

TEST_CASE("gradcheck: fused losses") {
  Rng rng(111);
  SUBCASE("softmax cross entropy") {
    TensorD logits = random_tensor<double>({4, 5}, rng, -2, 2);
    logits.set_requires_grad(true);
    auto fn = [&](GradTape<double>* tape) {
      TensorD li = tape ? tape->watch(logits) : logits;
      return softmax_cross_entropy(li, {0, 3, 2, 4});
    };
    CHECK(gradcheck(fn, {logits}, 20, 1e-4, 54).ok(1e-4));
  }
  SUBCASE("bce with logits") {
    TensorD logits = random_tensor<double>({3, 6}, rng, -2, 2);
    TensorD targets = random_tensor<double>({3, 6}, rng, 0, 1);
    logits.set_requires_grad(true);
    auto fn = [&](GradTape<double>* tape) {
      TensorD li = tape ? tape->watch(logits) : logits;
      return bce_with_logits(li, targets);
    };
    CHECK(gradcheck(fn, {logits}, 18, 1e-4, 55).ok(1e-4));
  }
  SUBCASE("smooth l1 away from the kink") {
    TensorD pred = TensorD::from({4}, {0.3, -0.4, 2.5, -3.0});
    TensorD target = TensorD::zeros({4});
    pred.set_requires_grad(true);
    auto fn = [&](GradTape<double>* tape) {
      TensorD pi = tape ? tape->watch(pred) : pred;
      return smooth_l1(pi, target, 1.0, 4.0);
    };
    CHECK(gradcheck(fn, {pred}, 4, 1e-4, 56).ok(1e-4));
  }
}
