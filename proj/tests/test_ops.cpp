#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "sc/error.hpp"
#include "sc/gradcheck.hpp"
#include "sc/ops.hpp"
#include "sc/reference.hpp"
#include "sc/rng.hpp"

using namespace sc;
using namespace sc::test;
namespace ref = sc::reference;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

TEST_CASE("conv2d: 1x1 identity kernel passes the value through") {
  Tensor x = Tensor::from_vector({1, 1, 1, 1}, {5.0f});
  Tensor w = Tensor::from_vector({1, 1, 1, 1}, {1.0f});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(nullptr, x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.data()[0] == 5.0f);
}

TEST_CASE("conv2d: all-ones 3x3 input with 2x2 ones kernel gives a 2x2 map of 4s") {
  Tensor x = Tensor::full({1, 3, 3, 1}, 1.0f);
  Tensor w = Tensor::full({2, 2, 1, 1}, 1.0f);
  Tensor b = Tensor::zeros({1});
  Tensor y = conv2d(nullptr, x, w, b, 1, 0);
  CHECK(y.shape() == Shape{1, 2, 2, 1});
  for (int i = 0; i < 4; ++i) CHECK(y.data()[i] == 4.0f);
}

TEST_CASE("conv2d: random 1x4x4x2 input against the 6-nested-loop oracle") {
  Rng rng(3);
  Tensor x = random_tensor({1, 4, 4, 2}, rng);
  Tensor w = random_tensor({3, 3, 2, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor y = conv2d(nullptr, x, w, b, 1, 0);
  auto want = ref::conv2d(ref::lift(x), 1, 4, 4, 2, ref::lift(w), 3, 3, 3, ref::lift(b), 1, 0);
  CHECK(max_abs_diff(y, want) < 1e-6);
}

TEST_CASE("conv2d equals the loop oracle on random shapes <= 8 per axis") {
  Rng rng(17);
  for (int trial = 0; trial < 60; ++trial) {
    const int N = 1 + rng.uniform_int(2), C = 1 + rng.uniform_int(3), Cout = 1 + rng.uniform_int(3);
    const int H = 1 + rng.uniform_int(8), W = 1 + rng.uniform_int(8);
    const int padding = rng.uniform_int(3), stride = 1 + rng.uniform_int(3);
    const int kmax = std::min(H, W) + 2 * padding;
    const int k = 1 + rng.uniform_int(std::min(kmax, 8));
    Tensor x = random_tensor({N, H, W, C}, rng);
    Tensor w = random_tensor({k, k, C, Cout}, rng);
    Tensor b = random_tensor({Cout}, rng);
    Tensor y = conv2d(nullptr, x, w, b, stride, padding);
    auto want = ref::conv2d(ref::lift(x), N, H, W, C, ref::lift(w), k, k, Cout, ref::lift(b),
                            stride, padding);
    CHECK(max_abs_diff(y, want) < 1e-6);
  }
}

TEST_CASE("conv2d names the offending axes on mismatch") {
  Tensor x = Tensor::zeros({1, 4, 4, 2});
  Tensor w = Tensor::zeros({3, 3, 3, 4});  // channel mismatch: 2 vs 3
  Tensor b = Tensor::zeros({4});
  CHECK_THROWS_WITH_AS(conv2d(nullptr, x, w, b, 1, 0),
                       doctest::Contains("channel axis"), ShapeError);
  Tensor wbig = Tensor::zeros({9, 9, 2, 4});
  Tensor bbig = Tensor::zeros({4});
  CHECK_THROWS_AS(conv2d(nullptr, x, wbig, bbig, 1, 0), ShapeError);
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

TEST_CASE("maxpool2d: [[1,2],[3,4]] window 2 stride 2 -> [[4]]") {
  Tensor x = image1(2, 2, {1, 2, 3, 4});
  Tensor y = maxpool2d(nullptr, x, 2, 2);
  CHECK(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.data()[0] == 4.0f);
}

TEST_CASE("maxpool2d: ties route the gradient to the first row-major cell") {
  Tensor x = Tensor::full({1, 2, 2, 1}, 7.0f);
  x.set_requires_grad(true);
  Tape tape;
  Tensor y = maxpool2d(&tape, x, 2, 2);
  CHECK(y.data()[0] == 7.0f);  // constant input -> constant output
  tape.backward(scale(&tape, y, 2.0f));
  // all gradient lands on cell (0,0)
  CHECK(x.grad()[0] == doctest::Approx(2.0f));
  CHECK(x.grad()[1] == 0.0f);
  CHECK(x.grad()[2] == 0.0f);
  CHECK(x.grad()[3] == 0.0f);
}

TEST_CASE("maxpool2d: random 5x5 against the loop oracle") {
  Rng rng(5);
  Tensor x = random_tensor({1, 5, 5, 2}, rng);
  Tensor y = maxpool2d(nullptr, x, 3, 2);
  auto want = ref::maxpool2d(ref::lift(x), 1, 5, 5, 2, 3, 2);
  CHECK(max_abs_diff(y, want) == 0.0);
}

TEST_CASE("maxpool2d equals the loop oracle on random shapes <= 8 per axis") {
  Rng rng(23);
  for (int trial = 0; trial < 60; ++trial) {
    const int N = 1 + rng.uniform_int(2), C = 1 + rng.uniform_int(3);
    const int H = 1 + rng.uniform_int(8), W = 1 + rng.uniform_int(8);
    const int window = 1 + rng.uniform_int(std::min({H, W, 8}));
    const int stride = 1 + rng.uniform_int(3);
    Tensor x = random_tensor({N, H, W, C}, rng);
    Tensor y = maxpool2d(nullptr, x, window, stride);
    auto want = ref::maxpool2d(ref::lift(x), N, H, W, C, window, stride);
    CHECK(max_abs_diff(y, want) == 0.0);
  }
}

TEST_CASE("maxpool2d: window larger than input is a dimension error") {
  Tensor x = Tensor::zeros({1, 3, 3, 1});
  CHECK_THROWS_AS(maxpool2d(nullptr, x, 4, 1), ShapeError);
}

// ---------------------------------------------------------------------------
// batchnorm
// ---------------------------------------------------------------------------

TEST_CASE("batchnorm: zero-variance channel outputs beta everywhere") {
  Tensor x = Tensor::full({2, 3, 3, 2}, 4.0f);
  Tensor gamma = Tensor::full({2}, 2.0f);
  Tensor beta = Tensor::from_vector({2}, {0.5f, -1.5f});
  BatchNormState state = BatchNormState::make(2);
  Tensor y = batchnorm(nullptr, x, gamma, beta, Mode::train, state);
  for (int64_t i = 0; i < y.numel(); i += 2) {
    CHECK(y.data()[i] == doctest::Approx(0.5f));
    CHECK(y.data()[i + 1] == doctest::Approx(-1.5f));
  }
}

TEST_CASE("batchnorm: standard-normal batch comes out ~N(0,1) and per-channel moments are tight") {
  Rng rng(29);
  const int N = 4, H = 8, W = 8, C = 2;  // 256 samples per channel
  Tensor x = Tensor::zeros({N, H, W, C});
  for (int64_t i = 0; i < x.numel(); ++i) x.data()[i] = rng.normal();
  Tensor gamma = Tensor::full({C}, 1.0f);
  Tensor beta = Tensor::zeros({C});
  BatchNormState state = BatchNormState::make(C);
  Tensor y = batchnorm(nullptr, x, gamma, beta, Mode::train, state);

  const int64_t M = static_cast<int64_t>(N) * H * W;
  for (int c = 0; c < C; ++c) {
    double mean = 0.0, var = 0.0;
    for (int64_t m = 0; m < M; ++m) mean += y.data()[m * C + c];
    mean /= static_cast<double>(M);
    for (int64_t m = 0; m < M; ++m) {
      const double d = y.data()[m * C + c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(M);
    CHECK(std::fabs(mean) < 0.05);        // statistical check
    CHECK(std::fabs(var - 1.0) < 0.05);
    CHECK(std::fabs(mean) < 1e-5);        // exact normalization, batch*spatial >= 64
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("batchnorm: gradcheck on 2x4x4x3 input") {
  Rng rng(31);
  Tensor x = random_tensor({2, 4, 4, 3}, rng);
  Tensor gamma = random_tensor({3}, rng, 0.5f, 1.5f);
  Tensor beta = random_tensor({3}, rng, -0.5f, 0.5f);
  auto tape_fn = [&](Tape* tape, std::vector<Tensor>& in) {
    BatchNormState state = BatchNormState::make(3);
    Tensor y = batchnorm(tape, in[0], in[1], in[2], Mode::train, state);
    Tensor flat = flatten2d(tape, y);
    // spread the probe across classes: cross entropy against class 0
    return log_softmax_cross_entropy(tape, flat, {0, 1});
  };
  auto ref_fn = [&](const std::vector<Tensor>& in) {
    auto y = ref::batchnorm_train(ref::lift(in[0]), 2, 4, 4, 3, ref::lift(in[1]), ref::lift(in[2]));
    return ref::cross_entropy(y, 2, 4 * 4 * 3, {0, 1});
  };
  CHECK(gradcheck_max_rel_err(tape_fn, ref_fn, {x, gamma, beta}) < 1e-3);
}

TEST_CASE("batchnorm: eval before any train step is an explicit error") {
  Tensor x = Tensor::zeros({1, 2, 2, 2});
  Tensor gamma = Tensor::full({2}, 1.0f);
  Tensor beta = Tensor::zeros({2});
  BatchNormState state = BatchNormState::make(2);
  CHECK_THROWS_WITH_AS(batchnorm(nullptr, x, gamma, beta, Mode::eval, state),
                       doctest::Contains("eval mode before any train-mode update"), Error);
  batchnorm(nullptr, x, gamma, beta, Mode::train, state);
  CHECK_NOTHROW(batchnorm(nullptr, x, gamma, beta, Mode::eval, state));
}

TEST_CASE("batchnorm: running moments follow momentum 0.1") {
  Tensor x = Tensor::full({1, 2, 2, 1}, 3.0f);
  Tensor gamma = Tensor::full({1}, 1.0f);
  Tensor beta = Tensor::zeros({1});
  BatchNormState state = BatchNormState::make(1);
  batchnorm(nullptr, x, gamma, beta, Mode::train, state);
  // running_mean: 0.9*0 + 0.1*3; running_var: 0.9*1 + 0.1*0
  CHECK(state.running_mean.data()[0] == doctest::Approx(0.3f));
  CHECK(state.running_var.data()[0] == doctest::Approx(0.9f));
  CHECK(state.count.value() == 1.0f);
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

TEST_CASE("relu and leaky_relu values") {
  Tensor x = tensor1d({-1.0f, 2.0f, -10.0f, 0.0f});
  Tensor r = relu(nullptr, x);
  CHECK(r.data()[0] == 0.0f);
  CHECK(r.data()[1] == 2.0f);
  Tensor l = leaky_relu(nullptr, x, 0.1f);
  CHECK(l.data()[2] == doctest::Approx(-1.0f));
  CHECK(l.data()[0] == doctest::Approx(-0.1f));
  CHECK_THROWS_AS(leaky_relu(nullptr, x, 1.5f), Error);
}

TEST_CASE("relu gradcheck away from zero") {
  Tensor x = tensor2d(1, 5, {-0.8f, 0.6f, 1.4f, -2.2f, 0.3f});
  auto tape_fn = [&](Tape* tape, std::vector<Tensor>& in) {
    return log_softmax_cross_entropy(tape, relu(tape, in[0]), {2});
  };
  auto ref_fn = [&](const std::vector<Tensor>& in) {
    return ref::cross_entropy(ref::leaky_relu(ref::lift(in[0]), 0.0), 1, 5, {2});
  };
  CHECK(gradcheck_max_rel_err(tape_fn, ref_fn, {x}) < 1e-4);
}

// ---------------------------------------------------------------------------
// affine
// ---------------------------------------------------------------------------

TEST_CASE("affine: identity weight and zero bias pass through") {
  Tensor x = tensor2d(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor w = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) w.at({i, i}) = 1.0f;
  Tensor b = Tensor::zeros({3});
  Tensor y = affine(nullptr, x, w, b);
  for (int64_t i = 0; i < 6; ++i) CHECK(y.data()[i] == x.data()[i]);
}

TEST_CASE("affine: zero weight broadcasts the bias") {
  Tensor x = tensor2d(2, 3, {1, 2, 3, 4, 5, 6});
  Tensor w = Tensor::zeros({3, 2});
  Tensor b = tensor1d({0.5f, -1.0f});
  Tensor y = affine(nullptr, x, w, b);
  CHECK(y.at({0, 0}) == 0.5f);
  CHECK(y.at({1, 1}) == -1.0f);
}

TEST_CASE("affine: random against the loop oracle; inner mismatch is an error") {
  Rng rng(41);
  for (int trial = 0; trial < 40; ++trial) {
    const int N = 1 + rng.uniform_int(8), D = 1 + rng.uniform_int(8), K = 1 + rng.uniform_int(8);
    Tensor x = random_tensor({N, D}, rng);
    Tensor w = random_tensor({D, K}, rng);
    Tensor b = random_tensor({K}, rng);
    Tensor y = affine(nullptr, x, w, b);
    CHECK(max_abs_diff(y, ref::affine(ref::lift(x), N, D, ref::lift(w), K, ref::lift(b))) < 1e-6);
  }
  CHECK_THROWS_AS(affine(nullptr, Tensor::zeros({2, 3}), Tensor::zeros({4, 2}), Tensor::zeros({2})),
                  ShapeError);
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

TEST_CASE("dropout: p=0 and eval mode are the identity") {
  Rng rng(43);
  Tensor x = random_tensor({2, 3, 3, 2}, rng);
  Rng d1(7);
  Tensor y = dropout(nullptr, x, 0.0f, Mode::train, d1);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);
  Rng d2(7);
  Tensor z = dropout(nullptr, x, 0.7f, Mode::eval, d2);
  for (int64_t i = 0; i < x.numel(); ++i) CHECK(z.data()[i] == x.data()[i]);
  CHECK_THROWS_AS(dropout(nullptr, x, 1.0f, Mode::train, d2), Error);
}

TEST_CASE("dropout: keep rate lands within 1% of 1-p and survivors scale by 1/(1-p)") {
  Rng rng(47);
  const float p = 0.5f;
  Tensor x = Tensor::full({64, 32, 16, 4}, 1.0f);  // 131072 elements
  Rng mask_rng(123);
  Tensor y = dropout(nullptr, x, p, Mode::train, mask_rng);
  int64_t kept = 0;
  for (int64_t i = 0; i < y.numel(); ++i) {
    if (y.data()[i] != 0.0f) {
      ++kept;
      CHECK(y.data()[i] == doctest::Approx(2.0f));
    }
  }
  const double rate = static_cast<double>(kept) / static_cast<double>(y.numel());
  CHECK(std::fabs(rate - 0.5) < 0.01);
  (void)rng;
}

// ---------------------------------------------------------------------------
// global_avg_pool
// ---------------------------------------------------------------------------

TEST_CASE("global_avg_pool: constant map, 1x1 identity, loop oracle") {
  Tensor c = Tensor::full({2, 3, 4, 5}, 2.5f);
  Tensor y = global_avg_pool(nullptr, c);
  CHECK(y.shape() == Shape{2, 5});
  for (int64_t i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(2.5f));

  Rng rng(53);
  Tensor one = random_tensor({3, 1, 1, 4}, rng);
  Tensor y1 = global_avg_pool(nullptr, one);
  for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1.data()[i] == one.data()[i]);

  Tensor x = random_tensor({2, 5, 6, 3}, rng);
  CHECK(max_abs_diff(global_avg_pool(nullptr, x), ref::global_avg_pool(ref::lift(x), 2, 5, 6, 3)) <
        1e-6);
}

// ---------------------------------------------------------------------------
// log_softmax_cross_entropy
// ---------------------------------------------------------------------------

TEST_CASE("cross entropy: uniform logits over 10 classes give ln 10") {
  Tensor z = Tensor::full({4, 10}, 0.37f);
  Tensor loss = log_softmax_cross_entropy(nullptr, z, {0, 3, 7, 9});
  CHECK(loss.value() == doctest::Approx(std::log(10.0)).epsilon(1e-6));
}

TEST_CASE("cross entropy: one-hot margin against the hand formula") {
  const double m = 2.5;
  Tensor z = Tensor::zeros({1, 4});
  z.at({0, 0}) = static_cast<float>(m);
  Tensor loss = log_softmax_cross_entropy(nullptr, z, {0});
  const double want = std::log(std::exp(m) + 3.0) - m;  // -log(e^m / (e^m + 3*e^0))
  CHECK(loss.value() == doctest::Approx(want).epsilon(1e-6));
}

TEST_CASE("cross entropy: row gradients sum to zero") {
  Rng rng(59);
  Tensor z = random_tensor({3, 6}, rng);
  z.set_requires_grad(true);
  Tape tape;
  Tensor loss = log_softmax_cross_entropy(&tape, z, {1, 0, 5});
  tape.backward(loss);
  for (int n = 0; n < 3; ++n) {
    double s = 0.0;
    for (int k = 0; k < 6; ++k) s += z.grad()[n * 6 + k];
    CHECK(std::fabs(s) < 1e-7);
  }
}

TEST_CASE("cross entropy: label out of range is an error") {
  Tensor z = Tensor::zeros({1, 4});
  CHECK_THROWS_AS(log_softmax_cross_entropy(nullptr, z, {4}), Error);
}
