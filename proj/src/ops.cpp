#include "sc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <memory>
#include <string>

#include "gemm.hpp"
#include "sc/error.hpp"
#include "sc/parallel.hpp"

namespace sc {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

void require_rank(const Tensor& t, int rank, const char* op, const char* arg) {
  if (!t.defined() || t.rank() != rank)
    throw ShapeError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                     ", got " + (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
}

}  // namespace

BatchNormState BatchNormState::make(int channels) {
  BatchNormState s;
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::full({channels}, 1.0f);
  s.count = Tensor::zeros({});
  return s;
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

// Unrolls padded input windows into rows: A[(n,oi,oj) x (ki,kj,ci)].
// NHWC layout keeps each (ki,kj) run of Cin values contiguous.
void im2col(const float* x, int N, int H, int W, int C, int kH, int kW, int stride, int padding,
            int Ho, int Wo, float* A) {
  const int64_t K = static_cast<int64_t>(kH) * kW * C;
  parallel_for(0, static_cast<int64_t>(N) * Ho, [&](int64_t lo, int64_t hi) {
    for (int64_t row = lo; row < hi; ++row) {
      const int n = static_cast<int>(row / Ho);
      const int oi = static_cast<int>(row % Ho);
      for (int oj = 0; oj < Wo; ++oj) {
        float* dst = A + ((row * Wo) + oj) * K;
        const int i0 = oi * stride - padding;
        const int j0 = oj * stride - padding;
        for (int ki = 0; ki < kH; ++ki) {
          const int i = i0 + ki;
          if (i < 0 || i >= H) {
            std::memset(dst, 0, sizeof(float) * static_cast<size_t>(kW) * C);
            dst += static_cast<int64_t>(kW) * C;
            continue;
          }
          for (int kj = 0; kj < kW; ++kj) {
            const int j = j0 + kj;
            if (j < 0 || j >= W) {
              std::memset(dst, 0, sizeof(float) * C);
            } else {
              std::memcpy(dst, x + (((static_cast<int64_t>(n) * H + i) * W + j) * C), sizeof(float) * C);
            }
            dst += C;
          }
        }
      }
    }
  });
}

// Scatter-adds dA rows back into the input gradient. Parallel over images:
// windows overlap within an image but never across images.
void col2im_add(const float* dA, int N, int H, int W, int C, int kH, int kW, int stride,
                int padding, int Ho, int Wo, float* dx) {
  const int64_t K = static_cast<int64_t>(kH) * kW * C;
  parallel_for(0, N, [&](int64_t nlo, int64_t nhi) {
    for (int64_t n = nlo; n < nhi; ++n) {
      for (int oi = 0; oi < Ho; ++oi) {
        for (int oj = 0; oj < Wo; ++oj) {
          const float* src = dA + (((n * Ho) + oi) * Wo + oj) * K;
          const int i0 = oi * stride - padding;
          const int j0 = oj * stride - padding;
          for (int ki = 0; ki < kH; ++ki) {
            const int i = i0 + ki;
            if (i < 0 || i >= H) {
              src += static_cast<int64_t>(kW) * C;
              continue;
            }
            for (int kj = 0; kj < kW; ++kj) {
              const int j = j0 + kj;
              if (j >= 0 && j < W) {
                float* d = dx + (((n * H + i) * W + j) * C);
                for (int c = 0; c < C; ++c) d[c] += src[c];
              }
              src += C;
            }
          }
        }
      }
    }
  });
}

}  // namespace

Tensor conv2d(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias,
              int stride, int padding) {
  require_rank(input, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  require_rank(bias, 1, "conv2d", "bias");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const int kH = weight.dim(0), kW = weight.dim(1), Cin = weight.dim(2), Cout = weight.dim(3);
  require(stride >= 1, "conv2d: stride must be >= 1, got " + std::to_string(stride));
  require(padding >= 0, "conv2d: padding must be >= 0, got " + std::to_string(padding));
  require(Cin == C, "conv2d: input channel axis " + std::to_string(C) +
                        " does not match weight channel axis " + std::to_string(Cin));
  require(bias.dim(0) == Cout, "conv2d: bias axis " + std::to_string(bias.dim(0)) +
                                   " does not match weight output axis " + std::to_string(Cout));
  require(kH <= H + 2 * padding && kW <= W + 2 * padding,
          "conv2d: kernel " + std::to_string(kH) + "x" + std::to_string(kW) +
              " exceeds padded input " + std::to_string(H + 2 * padding) + "x" +
              std::to_string(W + 2 * padding));

  const int Ho = (H + 2 * padding - kH) / stride + 1;
  const int Wo = (W + 2 * padding - kW) / stride + 1;
  const int64_t M = static_cast<int64_t>(N) * Ho * Wo;
  const int64_t K = static_cast<int64_t>(kH) * kW * C;

  auto A = std::make_shared<std::vector<float>>(static_cast<size_t>(M * K));
  im2col(input.data(), N, H, W, C, kH, kW, stride, padding, Ho, Wo, A->data());

  Tensor out = Tensor::zeros({N, Ho, Wo, Cout}, wants_grad(tape, {&input, &weight, &bias}));
  detail::gemm_acc64(M, Cout, K, A->data(), weight.data(), out.data(), false);
  {
    const float* b = bias.data();
    float* o = out.data();
    for (int64_t m = 0; m < M; ++m)
      for (int c = 0; c < Cout; ++c) o[m * Cout + c] += b[c];
  }
  check_finite(out, "conv2d");

  if (out.requires_grad()) {
    Tensor x = input, w = weight, b = bias, y = out;
    std::vector<Tensor> receivers;
    if (x.requires_grad()) receivers.push_back(x);
    if (w.requires_grad()) receivers.push_back(w);
    if (b.requires_grad()) receivers.push_back(b);
    tape->record("conv2d", receivers, [=]() mutable {
      const float* dy = y.grad();
      if (w.requires_grad() || b.requires_grad()) {
        std::vector<float> At(static_cast<size_t>(M * K));
        detail::transpose_f32(M, K, A->data(), At.data());
        if (w.requires_grad()) detail::gemm_acc64(K, Cout, M, At.data(), dy, w.grad(), true);
        if (b.requires_grad()) {
          float* db = b.grad();
          for (int c = 0; c < Cout; ++c) {
            double s = static_cast<double>(db[c]);
            for (int64_t m = 0; m < M; ++m) s += static_cast<double>(dy[m * Cout + c]);
            db[c] = static_cast<float>(s);
          }
        }
      }
      if (x.requires_grad()) {
        std::vector<float> Wt(static_cast<size_t>(K) * Cout);
        detail::transpose_f32(K, Cout, w.data(), Wt.data());
        std::vector<float> dA(static_cast<size_t>(M * K));
        detail::gemm_acc64(M, K, Cout, dy, Wt.data(), dA.data(), false);
        col2im_add(dA.data(), N, H, W, C, kH, kW, stride, padding, Ho, Wo, x.grad());
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// maxpool2d
// ---------------------------------------------------------------------------

Tensor maxpool2d(Tape* tape, const Tensor& input, int window, int stride) {
  require_rank(input, 4, "maxpool2d", "input");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  require(window >= 1 && stride >= 1, "maxpool2d: window and stride must be >= 1");
  require(window <= H && window <= W,
          "maxpool2d: window " + std::to_string(window) + " larger than input " +
              std::to_string(H) + "x" + std::to_string(W));
  const int Ho = (H - window) / stride + 1;
  const int Wo = (W - window) / stride + 1;

  Tensor out = Tensor::zeros({N, Ho, Wo, C}, wants_grad(tape, {&input}));
  auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(out.numel()));
  const float* x = input.data();
  float* o = out.data();
  parallel_for(0, N, [&](int64_t nlo, int64_t nhi) {
    for (int64_t n = nlo; n < nhi; ++n) {
      for (int oi = 0; oi < Ho; ++oi) {
        for (int oj = 0; oj < Wo; ++oj) {
          for (int c = 0; c < C; ++c) {
            float best = -std::numeric_limits<float>::infinity();
            int64_t best_idx = -1;
            for (int ki = 0; ki < window; ++ki) {
              for (int kj = 0; kj < window; ++kj) {
                const int64_t idx =
                    ((n * H + oi * stride + ki) * W + oj * stride + kj) * C + c;
                if (x[idx] > best) {  // strict: first cell wins ties
                  best = x[idx];
                  best_idx = idx;
                }
              }
            }
            const int64_t oidx = ((n * Ho + oi) * Wo + oj) * C + c;
            o[oidx] = best;
            (*argmax)[static_cast<size_t>(oidx)] = best_idx;
          }
        }
      }
    }
  });
  check_finite(out, "maxpool2d");

  if (out.requires_grad()) {
    Tensor x_t = input, y = out;
    tape->record("maxpool2d", {x_t}, [=]() mutable {
      const float* dy = y.grad();
      float* dx = x_t.grad();
      const int64_t n_out = y.numel();
      for (int64_t i = 0; i < n_out; ++i) dx[(*argmax)[static_cast<size_t>(i)]] += dy[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// batchnorm
// ---------------------------------------------------------------------------

Tensor batchnorm(Tape* tape, const Tensor& input, const Tensor& gamma, const Tensor& beta,
                 Mode mode, BatchNormState& state, float momentum, float epsilon) {
  require_rank(input, 4, "batchnorm", "input");
  require_rank(gamma, 1, "batchnorm", "gamma");
  require_rank(beta, 1, "batchnorm", "beta");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  require(gamma.dim(0) == C && beta.dim(0) == C,
          "batchnorm: gamma/beta length " + std::to_string(gamma.dim(0)) + "/" +
              std::to_string(beta.dim(0)) + " does not match channel axis " + std::to_string(C));
  if (mode == Mode::eval && !state.initialized())
    throw Error("batchnorm: eval mode before any train-mode update (running moments uninitialized)");

  const int64_t M = static_cast<int64_t>(N) * H * W;
  const float* x = input.data();

  std::vector<double> mean(C), var(C);
  if (mode == Mode::train) {
    for (int c = 0; c < C; ++c) mean[c] = 0.0;
    for (int64_t m = 0; m < M; ++m)
      for (int c = 0; c < C; ++c) mean[c] += static_cast<double>(x[m * C + c]);
    for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(M);
    for (int c = 0; c < C; ++c) var[c] = 0.0;
    for (int64_t m = 0; m < M; ++m)
      for (int c = 0; c < C; ++c) {
        const double d = static_cast<double>(x[m * C + c]) - mean[c];
        var[c] += d * d;
      }
    for (int c = 0; c < C; ++c) var[c] /= static_cast<double>(M);
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = static_cast<double>(state.running_mean.data()[c]);
      var[c] = static_cast<double>(state.running_var.data()[c]);
    }
  }

  std::vector<float> invstd(C);
  for (int c = 0; c < C; ++c)
    invstd[c] = static_cast<float>(1.0 / std::sqrt(var[c] + static_cast<double>(epsilon)));

  Tensor out = Tensor::zeros(input.shape(), wants_grad(tape, {&input, &gamma, &beta}));
  {
    const float* g = gamma.data();
    const float* b = beta.data();
    float* o = out.data();
    std::vector<float> mu(C);
    for (int c = 0; c < C; ++c) mu[c] = static_cast<float>(mean[c]);
    parallel_for(0, M, [&](int64_t lo, int64_t hi) {
      for (int64_t m = lo; m < hi; ++m)
        for (int c = 0; c < C; ++c)
          o[m * C + c] = g[c] * ((x[m * C + c] - mu[c]) * invstd[c]) + b[c];
    });
  }
  check_finite(out, "batchnorm");

  if (mode == Mode::train) {
    float* rm = state.running_mean.data();
    float* rv = state.running_var.data();
    for (int c = 0; c < C; ++c) {
      rm[c] = (1.0f - momentum) * rm[c] + momentum * static_cast<float>(mean[c]);
      rv[c] = (1.0f - momentum) * rv[c] + momentum * static_cast<float>(var[c]);
    }
    state.count.data()[0] += 1.0f;
  }

  if (out.requires_grad()) {
    Tensor x_t = input, g_t = gamma, b_t = beta, y = out;
    auto mean_s = std::make_shared<std::vector<double>>(mean);
    auto invstd_s = std::make_shared<std::vector<float>>(invstd);
    const bool train = (mode == Mode::train);
    std::vector<Tensor> receivers;
    if (x_t.requires_grad()) receivers.push_back(x_t);
    if (g_t.requires_grad()) receivers.push_back(g_t);
    if (b_t.requires_grad()) receivers.push_back(b_t);
    tape->record("batchnorm", receivers, [=]() mutable {
      const float* dy = y.grad();
      const float* xp = x_t.data();
      const float* gp = g_t.data();
      std::vector<double> sum_dy(C, 0.0), sum_dy_xhat(C, 0.0);
      for (int64_t m = 0; m < M; ++m)
        for (int c = 0; c < C; ++c) {
          const double xhat =
              (static_cast<double>(xp[m * C + c]) - (*mean_s)[c]) * static_cast<double>((*invstd_s)[c]);
          sum_dy[c] += static_cast<double>(dy[m * C + c]);
          sum_dy_xhat[c] += static_cast<double>(dy[m * C + c]) * xhat;
        }
      if (g_t.requires_grad()) {
        float* dg = g_t.grad();
        for (int c = 0; c < C; ++c) dg[c] += static_cast<float>(sum_dy_xhat[c]);
      }
      if (b_t.requires_grad()) {
        float* db = b_t.grad();
        for (int c = 0; c < C; ++c) db[c] += static_cast<float>(sum_dy[c]);
      }
      if (x_t.requires_grad()) {
        float* dx = x_t.grad();
        if (train) {
          // d/dx of ((x-mu)/sigma), mu and sigma both functions of the batch
          parallel_for(0, M, [&](int64_t lo, int64_t hi) {
            for (int64_t m = lo; m < hi; ++m)
              for (int c = 0; c < C; ++c) {
                const double xhat = (static_cast<double>(xp[m * C + c]) - (*mean_s)[c]) *
                                    static_cast<double>((*invstd_s)[c]);
                const double t = static_cast<double>(M) * static_cast<double>(dy[m * C + c]) -
                                 sum_dy[c] - xhat * sum_dy_xhat[c];
                dx[m * C + c] += static_cast<float>(static_cast<double>(gp[c]) *
                                                    static_cast<double>((*invstd_s)[c]) * t /
                                                    static_cast<double>(M));
              }
          });
        } else {
          parallel_for(0, M, [&](int64_t lo, int64_t hi) {
            for (int64_t m = lo; m < hi; ++m)
              for (int c = 0; c < C; ++c)
                dx[m * C + c] += dy[m * C + c] * gp[c] * (*invstd_s)[c];
          });
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

Tensor leaky_relu(Tape* tape, const Tensor& input, float slope) {
  if (!(slope >= 0.0f && slope < 1.0f))
    throw Error("leaky_relu: slope must be in [0,1), got " + std::to_string(slope));
  Tensor out = Tensor::zeros(input.shape(), wants_grad(tape, {&input}));
  const float* x = input.data();
  float* o = out.data();
  const int64_t n = input.numel();
  for (int64_t i = 0; i < n; ++i) o[i] = x[i] > 0.0f ? x[i] : slope * x[i];
  check_finite(out, "leaky_relu");

  if (out.requires_grad()) {
    Tensor x_t = input, y = out;
    tape->record("leaky_relu", {x_t}, [=]() mutable {
      const float* dy = y.grad();
      const float* xp = x_t.data();
      float* dx = x_t.grad();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * (xp[i] > 0.0f ? 1.0f : slope);
    });
  }
  return out;
}

Tensor relu(Tape* tape, const Tensor& input) { return leaky_relu(tape, input, 0.0f); }

// ---------------------------------------------------------------------------
// affine
// ---------------------------------------------------------------------------

Tensor affine(Tape* tape, const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(input, 2, "affine", "input");
  require_rank(weight, 2, "affine", "weight");
  require_rank(bias, 1, "affine", "bias");
  const int N = input.dim(0), D = input.dim(1);
  const int Dw = weight.dim(0), K = weight.dim(1);
  require(D == Dw, "affine: inner dimensions differ, input " + std::to_string(D) + " vs weight " +
                       std::to_string(Dw));
  require(bias.dim(0) == K, "affine: bias length " + std::to_string(bias.dim(0)) +
                                " does not match output axis " + std::to_string(K));

  Tensor out = Tensor::zeros({N, K}, wants_grad(tape, {&input, &weight, &bias}));
  detail::gemm_acc64(N, K, D, input.data(), weight.data(), out.data(), false);
  {
    const float* b = bias.data();
    float* o = out.data();
    for (int n = 0; n < N; ++n)
      for (int k = 0; k < K; ++k) o[static_cast<int64_t>(n) * K + k] += b[k];
  }
  check_finite(out, "affine");

  if (out.requires_grad()) {
    Tensor x = input, w = weight, b = bias, y = out;
    std::vector<Tensor> receivers;
    if (x.requires_grad()) receivers.push_back(x);
    if (w.requires_grad()) receivers.push_back(w);
    if (b.requires_grad()) receivers.push_back(b);
    tape->record("affine", receivers, [=]() mutable {
      const float* dy = y.grad();
      if (w.requires_grad()) {
        std::vector<float> Xt(static_cast<size_t>(D) * N);
        detail::transpose_f32(N, D, x.data(), Xt.data());
        detail::gemm_acc64(D, K, N, Xt.data(), dy, w.grad(), true);
      }
      if (b.requires_grad()) {
        float* db = b.grad();
        for (int k = 0; k < K; ++k) {
          double s = static_cast<double>(db[k]);
          for (int n = 0; n < N; ++n) s += static_cast<double>(dy[static_cast<int64_t>(n) * K + k]);
          db[k] = static_cast<float>(s);
        }
      }
      if (x.requires_grad()) {
        std::vector<float> Wt(static_cast<size_t>(K) * D);
        detail::transpose_f32(D, K, w.data(), Wt.data());
        detail::gemm_acc64(N, D, K, dy, Wt.data(), x.grad(), true);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// dropout
// ---------------------------------------------------------------------------

Tensor dropout(Tape* tape, const Tensor& input, float p, Mode mode, Rng& rng) {
  if (!(p >= 0.0f && p < 1.0f))
    throw Error("dropout: p must be in [0,1), got " + std::to_string(p));
  if (mode == Mode::eval) return input;

  const int64_t n = input.numel();
  auto mask = std::make_shared<std::vector<float>>(static_cast<size_t>(n));
  const float keep_scale = 1.0f / (1.0f - p);
  for (int64_t i = 0; i < n; ++i)
    (*mask)[static_cast<size_t>(i)] = (rng.next_float() >= p) ? keep_scale : 0.0f;

  Tensor out = Tensor::zeros(input.shape(), wants_grad(tape, {&input}));
  const float* x = input.data();
  float* o = out.data();
  for (int64_t i = 0; i < n; ++i) o[i] = x[i] * (*mask)[static_cast<size_t>(i)];
  check_finite(out, "dropout");

  if (out.requires_grad()) {
    Tensor x_t = input, y = out;
    tape->record("dropout", {x_t}, [=]() mutable {
      const float* dy = y.grad();
      float* dx = x_t.grad();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * (*mask)[static_cast<size_t>(i)];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// global_avg_pool
// ---------------------------------------------------------------------------

Tensor global_avg_pool(Tape* tape, const Tensor& input) {
  require_rank(input, 4, "global_avg_pool", "input");
  const int N = input.dim(0), H = input.dim(1), W = input.dim(2), C = input.dim(3);
  const int64_t S = static_cast<int64_t>(H) * W;
  Tensor out = Tensor::zeros({N, C}, wants_grad(tape, {&input}));
  const float* x = input.data();
  float* o = out.data();
  for (int n = 0; n < N; ++n) {
    std::vector<double> acc(C, 0.0);
    const float* base = x + static_cast<int64_t>(n) * S * C;
    for (int64_t s = 0; s < S; ++s)
      for (int c = 0; c < C; ++c) acc[c] += static_cast<double>(base[s * C + c]);
    for (int c = 0; c < C; ++c)
      o[static_cast<int64_t>(n) * C + c] = static_cast<float>(acc[c] / static_cast<double>(S));
  }
  check_finite(out, "global_avg_pool");

  if (out.requires_grad()) {
    Tensor x_t = input, y = out;
    tape->record("global_avg_pool", {x_t}, [=]() mutable {
      const float* dy = y.grad();
      float* dx = x_t.grad();
      const float inv = 1.0f / static_cast<float>(S);
      for (int n = 0; n < N; ++n) {
        float* base = dx + static_cast<int64_t>(n) * S * C;
        const float* g = dy + static_cast<int64_t>(n) * C;
        for (int64_t s = 0; s < S; ++s)
          for (int c = 0; c < C; ++c) base[s * C + c] += g[c] * inv;
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// log_softmax_cross_entropy
// ---------------------------------------------------------------------------

Tensor log_softmax_cross_entropy(Tape* tape, const Tensor& logits, const std::vector<int>& labels) {
  require_rank(logits, 2, "log_softmax_cross_entropy", "logits");
  const int N = logits.dim(0), K = logits.dim(1);
  require(static_cast<int>(labels.size()) == N,
          "log_softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
              std::to_string(N) + " rows");
  for (int n = 0; n < N; ++n)
    if (labels[static_cast<size_t>(n)] < 0 || labels[static_cast<size_t>(n)] >= K)
      throw Error("log_softmax_cross_entropy: label " + std::to_string(labels[static_cast<size_t>(n)]) +
                  " out of range [0," + std::to_string(K) + ") at row " + std::to_string(n));

  const float* z = logits.data();
  auto probs = std::make_shared<std::vector<float>>(static_cast<size_t>(logits.numel()));
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const float* row = z + static_cast<int64_t>(n) * K;
    double m = static_cast<double>(row[0]);
    for (int k = 1; k < K; ++k) m = std::max(m, static_cast<double>(row[k]));
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(static_cast<double>(row[k]) - m);
    const double lse = m + std::log(sum);
    for (int k = 0; k < K; ++k)
      (*probs)[static_cast<size_t>(n) * K + k] =
          static_cast<float>(std::exp(static_cast<double>(row[k]) - lse));
    total += lse - static_cast<double>(row[labels[static_cast<size_t>(n)]]);
  }

  Tensor out = Tensor::zeros({}, wants_grad(tape, {&logits}));
  out.data()[0] = static_cast<float>(total / static_cast<double>(N));
  check_finite(out, "log_softmax_cross_entropy");

  if (out.requires_grad()) {
    Tensor z_t = logits, y = out;
    auto lbl = std::make_shared<std::vector<int>>(labels);
    tape->record("log_softmax_cross_entropy", {z_t}, [=]() mutable {
      const float g = y.grad()[0];
      float* dz = z_t.grad();
      const float inv_n = 1.0f / static_cast<float>(N);
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < K; ++k) {
          const float onehot = (k == (*lbl)[static_cast<size_t>(n)]) ? 1.0f : 0.0f;
          dz[static_cast<int64_t>(n) * K + k] +=
              g * ((*probs)[static_cast<size_t>(n) * K + k] - onehot) * inv_n;
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// plumbing
// ---------------------------------------------------------------------------

Tensor flatten2d(Tape* tape, const Tensor& input) {
  require(input.rank() >= 2, "flatten2d: input rank must be >= 2, got " +
                                 std::to_string(input.rank()));
  const int N = input.dim(0);
  const int64_t rest = input.numel() / N;
  Tensor out = Tensor::zeros({N, static_cast<int>(rest)}, wants_grad(tape, {&input}));
  std::memcpy(out.data(), input.data(), sizeof(float) * static_cast<size_t>(input.numel()));

  if (out.requires_grad()) {
    Tensor x_t = input, y = out;
    tape->record("flatten2d", {x_t}, [=]() mutable {
      const float* dy = y.grad();
      float* dx = x_t.grad();
      const int64_t n = y.numel();
      for (int64_t i = 0; i < n; ++i) dx[i] += dy[i];
    });
  }
  return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a, &b}));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  check_finite(out, "add");

  if (out.requires_grad()) {
    Tensor a_t = a, b_t = b, y = out;
    std::vector<Tensor> receivers;
    if (a_t.requires_grad()) receivers.push_back(a_t);
    if (b_t.requires_grad()) receivers.push_back(b_t);
    tape->record("add", receivers, [=]() mutable {
      const float* dy = y.grad();
      if (a_t.requires_grad()) {
        float* da = a_t.grad();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i];
      }
      if (b_t.requires_grad()) {
        float* db = b_t.grad();
        for (int64_t i = 0; i < n; ++i) db[i] += dy[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                      shape_str(b.shape()));
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a, &b}));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  check_finite(out, "mul");

  if (out.requires_grad()) {
    Tensor a_t = a, b_t = b, y = out;
    std::vector<Tensor> receivers;
    if (a_t.requires_grad()) receivers.push_back(a_t);
    if (b_t.requires_grad()) receivers.push_back(b_t);
    tape->record("mul", receivers, [=]() mutable {
      const float* dy = y.grad();
      if (a_t.requires_grad()) {
        float* da = a_t.grad();
        const float* bv = b_t.data();
        for (int64_t i = 0; i < n; ++i) da[i] += dy[i] * bv[i];
      }
      if (b_t.requires_grad()) {
        float* db = b_t.grad();
        const float* av = a_t.data();
        for (int64_t i = 0; i < n; ++i) db[i] += dy[i] * av[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape* tape, const Tensor& a, float s) {
  Tensor out = Tensor::zeros(a.shape(), wants_grad(tape, {&a}));
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
  check_finite(out, "scale");

  if (out.requires_grad()) {
    Tensor a_t = a, y = out;
    tape->record("scale", {a_t}, [=]() mutable {
      const float* dy = y.grad();
      float* da = a_t.grad();
      for (int64_t i = 0; i < n; ++i) da[i] += dy[i] * s;
    });
  }
  return out;
}

}  // namespace sc
