#pragma once

#include <vector>

#include "sc/rng.hpp"
#include "sc/tensor.hpp"

namespace sc {

enum class Mode { train, eval };

// Running batch-norm moments. `count` holds the number of train-mode updates;
// eval before the first update is an error.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  Tensor count;

  static BatchNormState make(int channels);
  bool initialized() const { return count.defined() && count.value() > 0.0f; }
};

// Cross-correlation, NHWC input, [kH,kW,Cin,Cout] weight.
// H' = (H + 2*padding - kH)/stride + 1, same for W'.
Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding);

// Max over square windows; backward routes to the argmax cell (first cell in
// row-major window order on ties).
Tensor maxpool2d(Tape* tape, const Tensor& input, int window, int stride);

Tensor batchnorm(Tape* tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 Mode mode, BatchNormState& state, float momentum = 0.1f, float epsilon = 1e-5f);

// max(x, slope*x); the subgradient at 0 is the negative-side slope.
Tensor leaky_relu(Tape* tape, const Tensor& input, float slope);
Tensor relu(Tape* tape, const Tensor& input);

// input [N,D] * weight [D,K] + bias [K]
Tensor affine(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias);

// Train mode zeroes each element with probability p and scales survivors by
// 1/(1-p); eval mode is the identity.
Tensor dropout(Tape* tape, const Tensor& input, float p, Mode mode, Rng& rng);

// [N,H,W,C] -> [N,C], mean over the spatial axes.
Tensor global_avg_pool(Tape* tape, const Tensor& input);

// Mean negative log-probability of the true class, max-subtraction stabilized.
Tensor log_softmax_cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels);

// [N, ...] -> [N, prod(rest)]
Tensor flatten2d(Tape* tape, const Tensor& input);

// Elementwise plumbing used by the loss combinators.
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, float s);

}  // namespace sc
