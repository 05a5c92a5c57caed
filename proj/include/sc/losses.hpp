#pragma once

#include "sc/tensor.hpp"

namespace sc {

// N x N matrix of Euclidean distances between the anchor patch of image i and
// the contrast patch of image j. Entries are non-negative and finite.
struct DistanceMatrix {
  Tensor dist;

  int n() const { return dist.dim(0); }
  // Validates squareness, non-negativity and finiteness.
  static DistanceMatrix from_tensor(Tensor t);
};

// ||a - b||_2 as a scalar on the tape. The gradient at coincident points is
// taken as 0 (subgradient of the norm at its kink).
Tensor euclidean_distance(Tape* tape, const Tensor& a, const Tensor& b);

// max(||a-p|| - ||a-n|| + alpha, 0); gradient is zero in the clamped region.
Tensor margin_triplet_loss(Tape* tape, const Tensor& anchor, const Tensor& positive,
                           const Tensor& negative, float alpha);

// -log( e^{-d+} / (e^{-d+} + e^{-d-}) ), evaluated through a stable
// log-sum-exp over {-d+, -d-}. Equals softplus(d+ - d-) analytically.
Tensor ratio_triplet_loss(Tape* tape, const Tensor& anchor, const Tensor& positive,
                          const Tensor& negative);

// Distance ratio between two patches of image 1 and a contrast patch of
// image 2; same numerics as ratio_triplet_loss with the image-2 patch as
// the negative.
Tensor sc_pair_loss(Tape* tape, const Tensor& f1_anchor, const Tensor& f1_pos,
                    const Tensor& f2_contrast);

// 0.5 * [L(x1,x2) + L(x2,x1)], each direction anchored on its own image.
Tensor sc_pair_loss_symmetric(Tape* tape, const Tensor& x1_anchor, const Tensor& x1_pos,
                              const Tensor& x2_anchor, const Tensor& x2_pos);

// (1/N) * sum_i -log( e^{-Dist(i,i)} / sum_k e^{-Dist(i,k)} ), each row
// through a stable log-sum-exp. N=1 gives exactly 0.
Tensor sc_batch_loss(Tape* tape, const DistanceMatrix& dist);

// The exact float64 accumulations behind the ops above, surfaced for
// closed-form checks; each op's f32 value is its *64 twin rounded once.
double margin_triplet_loss64(const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                             float alpha);
double ratio_triplet_loss64(const Tensor& anchor, const Tensor& positive, const Tensor& negative);
double sc_batch_loss64(const DistanceMatrix& dist);

}  // namespace sc
