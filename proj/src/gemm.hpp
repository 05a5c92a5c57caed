#pragma once

#include <cstdint>
#include <vector>

namespace sc {
namespace detail {

// C[M x N] (+)= A[M x K] * B[K x N], all row-major float32.
// Accumulation runs in float64 with k ascending per output cell, so results
// do not depend on thread count. B is widened to double once per call.
void gemm_acc64(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
                bool accumulate);

// out[N x M] = transpose of A[M x N]
void transpose_f32(int64_t M, int64_t N, const float* A, float* out);

}  // namespace detail
}  // namespace sc
