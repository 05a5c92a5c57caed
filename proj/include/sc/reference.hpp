#pragma once

#include <vector>

#include "sc/rng.hpp"
#include "sc/sampler.hpp"
#include "sc/tensor.hpp"

namespace sc {
namespace reference {

// Naive float64 loop implementations, independent of the production kernels
// (no im2col, no GEMM, no fused loss paths). They back the finite-difference
// suite and the brute-force equivalence tests.

using dvec = std::vector<double>;

dvec lift(const Tensor& t);

dvec conv2d(const dvec& x, int N, int H, int W, int C, const dvec& w, int kH, int kW, int Cout,
            const dvec& b, int stride, int padding);
dvec maxpool2d(const dvec& x, int N, int H, int W, int C, int window, int stride);
dvec batchnorm_train(const dvec& x, int N, int H, int W, int C, const dvec& gamma,
                     const dvec& beta, double epsilon = 1e-5);
dvec leaky_relu(const dvec& x, double slope);
dvec affine(const dvec& x, int N, int D, const dvec& w, int K, const dvec& b);
dvec elementwise_mul(const dvec& x, const std::vector<float>& mask);
dvec global_avg_pool(const dvec& x, int N, int H, int W, int C);
double cross_entropy(const dvec& logits, int N, int K, const std::vector<int>& labels);

double euclidean(const dvec& a, const dvec& b);
double margin_triplet(const dvec& a, const dvec& p, const dvec& n, double alpha);
double ratio_triplet(const dvec& a, const dvec& p, const dvec& n);
double sc_batch(const dvec& dist, int N);

// Window gather in the production flatten order (rows, cols, channels),
// with optional L2 normalization.
dvec gather_patch(const dvec& f, int H, int W, int C, const PatchOrigin& o, int pH, int pW,
                  bool normalize);
dvec distance_matrix(const dvec& f, int N, int H, int W, int C,
                     const std::vector<PatchOrigin>& anchors,
                     const std::vector<std::vector<PatchOrigin>>& contrasts, int pH, int pW,
                     bool normalize);

// Replays the production dropout mask draw order.
std::vector<float> dropout_mask(int64_t n, float p, Rng rng);

}  // namespace reference
}  // namespace sc
