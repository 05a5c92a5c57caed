#include "sc/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "sc/error.hpp"

namespace sc {
namespace reference {

dvec lift(const Tensor& t) {
  dvec out(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) out[static_cast<size_t>(i)] = static_cast<double>(t.data()[i]);
  return out;
}

dvec conv2d(const dvec& x, int N, int H, int W, int C, const dvec& w, int kH, int kW, int Cout,
            const dvec& b, int stride, int padding) {
  const int Ho = (H + 2 * padding - kH) / stride + 1;
  const int Wo = (W + 2 * padding - kW) / stride + 1;
  dvec out(static_cast<size_t>(N) * Ho * Wo * Cout, 0.0);
  for (int n = 0; n < N; ++n)
    for (int oi = 0; oi < Ho; ++oi)
      for (int oj = 0; oj < Wo; ++oj)
        for (int co = 0; co < Cout; ++co) {
          double acc = b[static_cast<size_t>(co)];
          for (int ki = 0; ki < kH; ++ki)
            for (int kj = 0; kj < kW; ++kj)
              for (int ci = 0; ci < C; ++ci) {
                const int i = oi * stride - padding + ki;
                const int j = oj * stride - padding + kj;
                if (i < 0 || i >= H || j < 0 || j >= W) continue;
                acc += x[static_cast<size_t>(((static_cast<int64_t>(n) * H + i) * W + j) * C + ci)] *
                       w[static_cast<size_t>(((static_cast<int64_t>(ki) * kW + kj) * C + ci) * Cout + co)];
              }
          out[static_cast<size_t>(((static_cast<int64_t>(n) * Ho + oi) * Wo + oj) * Cout + co)] = acc;
        }
  return out;
}

dvec maxpool2d(const dvec& x, int N, int H, int W, int C, int window, int stride) {
  const int Ho = (H - window) / stride + 1;
  const int Wo = (W - window) / stride + 1;
  dvec out(static_cast<size_t>(N) * Ho * Wo * C);
  for (int n = 0; n < N; ++n)
    for (int oi = 0; oi < Ho; ++oi)
      for (int oj = 0; oj < Wo; ++oj)
        for (int c = 0; c < C; ++c) {
          double best = -std::numeric_limits<double>::infinity();
          for (int ki = 0; ki < window; ++ki)
            for (int kj = 0; kj < window; ++kj)
              best = std::max(best,
                              x[static_cast<size_t>(((static_cast<int64_t>(n) * H + oi * stride + ki) * W +
                                                     oj * stride + kj) * C + c)]);
          out[static_cast<size_t>(((static_cast<int64_t>(n) * Ho + oi) * Wo + oj) * C + c)] = best;
        }
  return out;
}

dvec batchnorm_train(const dvec& x, int N, int H, int W, int C, const dvec& gamma,
                     const dvec& beta, double epsilon) {
  const int64_t M = static_cast<int64_t>(N) * H * W;
  dvec mean(static_cast<size_t>(C), 0.0), var(static_cast<size_t>(C), 0.0);
  for (int64_t m = 0; m < M; ++m)
    for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] += x[static_cast<size_t>(m * C + c)];
  for (int c = 0; c < C; ++c) mean[static_cast<size_t>(c)] /= static_cast<double>(M);
  for (int64_t m = 0; m < M; ++m)
    for (int c = 0; c < C; ++c) {
      const double d = x[static_cast<size_t>(m * C + c)] - mean[static_cast<size_t>(c)];
      var[static_cast<size_t>(c)] += d * d;
    }
  for (int c = 0; c < C; ++c) var[static_cast<size_t>(c)] /= static_cast<double>(M);
  dvec out(x.size());
  for (int64_t m = 0; m < M; ++m)
    for (int c = 0; c < C; ++c)
      out[static_cast<size_t>(m * C + c)] =
          gamma[static_cast<size_t>(c)] * (x[static_cast<size_t>(m * C + c)] - mean[static_cast<size_t>(c)]) /
              std::sqrt(var[static_cast<size_t>(c)] + epsilon) +
          beta[static_cast<size_t>(c)];
  return out;
}

dvec leaky_relu(const dvec& x, double slope) {
  dvec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : slope * x[i];
  return out;
}

dvec affine(const dvec& x, int N, int D, const dvec& w, int K, const dvec& b) {
  dvec out(static_cast<size_t>(N) * K);
  for (int n = 0; n < N; ++n)
    for (int k = 0; k < K; ++k) {
      double acc = b[static_cast<size_t>(k)];
      for (int d = 0; d < D; ++d)
        acc += x[static_cast<size_t>(static_cast<int64_t>(n) * D + d)] *
               w[static_cast<size_t>(static_cast<int64_t>(d) * K + k)];
      out[static_cast<size_t>(static_cast<int64_t>(n) * K + k)] = acc;
    }
  return out;
}

dvec elementwise_mul(const dvec& x, const std::vector<float>& mask) {
  dvec out(x.size());
  for (size_t i = 0; i < x.size(); ++i) out[i] = x[i] * static_cast<double>(mask[i]);
  return out;
}

dvec global_avg_pool(const dvec& x, int N, int H, int W, int C) {
  const int64_t S = static_cast<int64_t>(H) * W;
  dvec out(static_cast<size_t>(N) * C, 0.0);
  for (int n = 0; n < N; ++n)
    for (int64_t s = 0; s < S; ++s)
      for (int c = 0; c < C; ++c)
        out[static_cast<size_t>(static_cast<int64_t>(n) * C + c)] +=
            x[static_cast<size_t>((static_cast<int64_t>(n) * S + s) * C + c)];
  for (auto& v : out) v /= static_cast<double>(S);
  return out;
}

double cross_entropy(const dvec& logits, int N, int K, const std::vector<int>& labels) {
  double total = 0.0;
  for (int n = 0; n < N; ++n) {
    const double* row = logits.data() + static_cast<int64_t>(n) * K;
    double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(row[k] - m);
    total += m + std::log(sum) - row[labels[static_cast<size_t>(n)]];
  }
  return total / static_cast<double>(N);
}

double euclidean(const dvec& a, const dvec& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double margin_triplet(const dvec& a, const dvec& p, const dvec& n, double alpha) {
  return std::max(euclidean(a, p) - euclidean(a, n) + alpha, 0.0);
}

double ratio_triplet(const dvec& a, const dvec& p, const dvec& n) {
  const double dp = euclidean(a, p), dn = euclidean(a, n);
  const double m = std::max(-dp, -dn);
  return dp + m + std::log(std::exp(-dp - m) + std::exp(-dn - m));
}

double sc_batch(const dvec& dist, int N) {
  double total = 0.0;
  for (int i = 0; i < N; ++i) {
    const double* row = dist.data() + static_cast<int64_t>(i) * N;
    double m = -row[0];
    for (int k = 1; k < N; ++k) m = std::max(m, -row[k]);
    double sum = 0.0;
    for (int k = 0; k < N; ++k) sum += std::exp(-row[k] - m);
    total += row[i] + m + std::log(sum);
  }
  return total / static_cast<double>(N);
}

dvec gather_patch(const dvec& f, int H, int W, int C, const PatchOrigin& o, int pH, int pW,
                  bool normalize) {
  dvec out;
  out.reserve(static_cast<size_t>(pH) * pW * C);
  for (int pr = 0; pr < pH; ++pr)
    for (int pc = 0; pc < pW; ++pc)
      for (int c = 0; c < C; ++c)
        out.push_back(f[static_cast<size_t>(
            ((static_cast<int64_t>(o.image) * H + o.row + pr) * W + o.col + pc) * C + c)]);
  if (normalize) {
    double s = 0.0;
    for (double v : out) s += v * v;
    const double norm = std::max(std::sqrt(s), 1e-12);
    for (double& v : out) v /= norm;
  }
  return out;
}

dvec distance_matrix(const dvec& f, int N, int H, int W, int C,
                     const std::vector<PatchOrigin>& anchors,
                     const std::vector<std::vector<PatchOrigin>>& contrasts, int pH, int pW,
                     bool normalize) {
  dvec out(static_cast<size_t>(N) * N);
  for (int i = 0; i < N; ++i) {
    const dvec a = gather_patch(f, H, W, C, anchors[static_cast<size_t>(i)], pH, pW, normalize);
    for (int j = 0; j < N; ++j) {
      const dvec c = gather_patch(f, H, W, C, contrasts[static_cast<size_t>(i)][static_cast<size_t>(j)],
                                  pH, pW, normalize);
      out[static_cast<size_t>(static_cast<int64_t>(i) * N + j)] = euclidean(a, c);
    }
  }
  return out;
}

std::vector<float> dropout_mask(int64_t n, float p, Rng rng) {
  std::vector<float> mask(static_cast<size_t>(n));
  const float keep_scale = 1.0f / (1.0f - p);
  for (int64_t i = 0; i < n; ++i)
    mask[static_cast<size_t>(i)] = (rng.next_float() >= p) ? keep_scale : 0.0f;
  return mask;
}

}  // namespace reference
}  // namespace sc
