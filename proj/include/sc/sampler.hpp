#pragma once

#include <utility>
#include <vector>

#include "sc/losses.hpp"
#include "sc/rng.hpp"
#include "sc/tensor.hpp"

namespace sc {

// Batch of spatial features, [N, H_f, W_f, C] (trunk output).
struct FeatureMap {
  Tensor values;

  int n() const { return values.dim(0); }
  int height() const { return values.dim(1); }
  int width() const { return values.dim(2); }
  int channels() const { return values.dim(3); }
};

struct PatchOrigin {
  int image = 0;
  int row = 0;
  int col = 0;

  bool operator==(const PatchOrigin& o) const {
    return image == o.image && row == o.row && col == o.col;
  }
};

// Flattened window of a feature map: length pH*pW*C, row-major then channel.
struct PatchVector {
  Tensor values;
  PatchOrigin origin;
};

struct SampleConfig {
  int patch_rows = 1;
  int patch_cols = 1;
  // Algorithm-literal: a fresh contrast draw inside the inner (i,j) loop.
  // False draws one contrast per image j, shared across the column.
  bool fresh_contrast_per_pair = true;
  // Resample the positive until it does not overlap the anchor window.
  bool exclude_overlap = false;
  // L2-normalize patch vectors before distances are taken.
  bool normalize_features = false;
};

// Window origin drawn uniformly over all valid positions (row then column).
PatchVector sample_patch(Tape* tape, const FeatureMap& f, int image_index,
                         const SampleConfig& cfg, Rng& rng);

// Two independent draws from the same image; overlap permitted unless
// cfg.exclude_overlap.
std::pair<PatchVector, PatchVector> sample_pair(Tape* tape, const FeatureMap& f, int image_index,
                                                const SampleConfig& cfg, Rng& rng);

// DistanceMatrix plus the origin audit trail.
struct DistanceMatrixBuild {
  DistanceMatrix dist;
  std::vector<PatchOrigin> anchors;                 // one per image
  std::vector<std::vector<PatchOrigin>> contrasts;  // [i][j]: contrast used for Dist(i,j)
};

// Anchors drawn once per image; contrasts per Algorithm 1's inner loop (or
// once per image when fresh_contrast_per_pair is false). All draws land on
// the tape so gradients reach the feature map.
DistanceMatrixBuild build_distance_matrix(Tape* tape, const FeatureMap& f,
                                          const SampleConfig& cfg, Rng& rng);

// Distances recomputed from fixed origins; shared by build_distance_matrix
// and the finite-difference tests, which need identical draws on re-runs.
DistanceMatrix distance_matrix_from_origins(Tape* tape, const FeatureMap& f,
                                            const std::vector<PatchOrigin>& anchors,
                                            const std::vector<std::vector<PatchOrigin>>& contrasts,
                                            const SampleConfig& cfg);

}  // namespace sc
