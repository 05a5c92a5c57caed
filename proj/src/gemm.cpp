#include "gemm.hpp"

#include "sc/parallel.hpp"

namespace sc {
namespace detail {

namespace {
constexpr int64_t kRowBlock = 4;
}

void gemm_acc64(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C,
                bool accumulate) {
  if (M <= 0 || N <= 0) return;
  std::vector<double> Bd(static_cast<size_t>(K) * N);
  for (int64_t i = 0; i < K * N; ++i) Bd[static_cast<size_t>(i)] = static_cast<double>(B[i]);

  const int64_t blocks = (M + kRowBlock - 1) / kRowBlock;
  parallel_for(0, blocks, [&](int64_t blo, int64_t bhi) {
    std::vector<double> acc(static_cast<size_t>(kRowBlock) * N);
    for (int64_t blk = blo; blk < bhi; ++blk) {
      const int64_t i0 = blk * kRowBlock;
      const int64_t rows = (i0 + kRowBlock <= M) ? kRowBlock : (M - i0);
      if (accumulate) {
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < N; ++j)
            acc[static_cast<size_t>(r * N + j)] = static_cast<double>(C[(i0 + r) * N + j]);
      } else {
        std::fill(acc.begin(), acc.begin() + static_cast<size_t>(rows * N), 0.0);
      }
      if (rows == kRowBlock) {
        double* a0 = acc.data();
        double* a1 = acc.data() + N;
        double* a2 = acc.data() + 2 * N;
        double* a3 = acc.data() + 3 * N;
        const float* A0 = A + (i0 + 0) * K;
        const float* A1 = A + (i0 + 1) * K;
        const float* A2 = A + (i0 + 2) * K;
        const float* A3 = A + (i0 + 3) * K;
        for (int64_t k = 0; k < K; ++k) {
          const double* brow = Bd.data() + static_cast<size_t>(k) * N;
          const double x0 = static_cast<double>(A0[k]);
          const double x1 = static_cast<double>(A1[k]);
          const double x2 = static_cast<double>(A2[k]);
          const double x3 = static_cast<double>(A3[k]);
          for (int64_t j = 0; j < N; ++j) {
            const double b = brow[j];
            a0[j] += x0 * b;
            a1[j] += x1 * b;
            a2[j] += x2 * b;
            a3[j] += x3 * b;
          }
        }
      } else {
        for (int64_t r = 0; r < rows; ++r) {
          double* arow = acc.data() + r * N;
          const float* Ar = A + (i0 + r) * K;
          for (int64_t k = 0; k < K; ++k) {
            const double* brow = Bd.data() + static_cast<size_t>(k) * N;
            const double x = static_cast<double>(Ar[k]);
            for (int64_t j = 0; j < N; ++j) arow[j] += x * brow[j];
          }
        }
      }
      for (int64_t r = 0; r < rows; ++r)
        for (int64_t j = 0; j < N; ++j)
          C[(i0 + r) * N + j] = static_cast<float>(acc[static_cast<size_t>(r * N + j)]);
    }
  });
}

void transpose_f32(int64_t M, int64_t N, const float* A, float* out) {
  for (int64_t i = 0; i < M; ++i)
    for (int64_t j = 0; j < N; ++j) out[j * M + i] = A[i * N + j];
}

}  // namespace detail
}  // namespace sc
