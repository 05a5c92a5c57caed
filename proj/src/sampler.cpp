#include "sc/sampler.hpp"

#include <cmath>
#include <cstring>
#include <map>
#include <string>
#include <tuple>

#include "sc/error.hpp"

namespace sc {

namespace {

void validate_window(const FeatureMap& f, const SampleConfig& cfg, const char* op) {
  if (!f.values.defined() || f.values.rank() != 4)
    throw ShapeError(std::string(op) + ": feature map must have rank 4");
  if (f.n() < 1) throw ShapeError(std::string(op) + ": empty batch");
  if (cfg.patch_rows < 1 || cfg.patch_cols < 1)
    throw ShapeError(std::string(op) + ": patch window must be positive");
  if (cfg.patch_rows > f.height() || cfg.patch_cols > f.width())
    throw ShapeError(std::string(op) + ": window " + std::to_string(cfg.patch_rows) + "x" +
                     std::to_string(cfg.patch_cols) + " larger than map " +
                     std::to_string(f.height()) + "x" + std::to_string(f.width()));
}

// Copies one window out of the map; backward scatter-adds into the map grad.
Tensor gather_patch(Tape* tape, const Tensor& fmap, const PatchOrigin& o, int pH, int pW) {
  const int H = fmap.dim(1), W = fmap.dim(2), C = fmap.dim(3);
  const int L = pH * pW * C;
  Tensor out = Tensor::zeros({L}, wants_grad(tape, {&fmap}));
  const float* src = fmap.data();
  float* dst = out.data();
  for (int pr = 0; pr < pH; ++pr) {
    const int64_t base = ((static_cast<int64_t>(o.image) * H + o.row + pr) * W + o.col) * C;
    std::memcpy(dst + static_cast<int64_t>(pr) * pW * C, src + base,
                sizeof(float) * static_cast<size_t>(pW) * C);
  }

  if (out.requires_grad()) {
    Tensor f_t = fmap, y = out;
    tape->record("gather_patch", {f_t}, [=]() mutable {
      const float* dy = y.grad();
      float* df = f_t.grad();
      for (int pr = 0; pr < pH; ++pr) {
        const int64_t base = ((static_cast<int64_t>(o.image) * H + o.row + pr) * W + o.col) * C;
        const float* g = dy + static_cast<int64_t>(pr) * pW * C;
        for (int i = 0; i < pW * C; ++i) df[base + i] += g[i];
      }
    });
  }
  return out;
}

Tensor l2_normalize(Tape* tape, const Tensor& v) {
  constexpr double kEps = 1e-12;
  const int64_t n = v.numel();
  double s = 0.0;
  const float* x = v.data();
  for (int64_t i = 0; i < n; ++i) s += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  const double norm = std::sqrt(s);
  const double denom = norm > kEps ? norm : kEps;

  Tensor out = Tensor::zeros(v.shape(), wants_grad(tape, {&v}));
  float* o = out.data();
  for (int64_t i = 0; i < n; ++i) o[i] = static_cast<float>(static_cast<double>(x[i]) / denom);
  check_finite(out, "l2_normalize");

  if (out.requires_grad()) {
    Tensor v_t = v, y = out;
    const bool degenerate = !(norm > kEps);
    tape->record("l2_normalize", {v_t}, [=]() mutable {
      const float* dy = y.grad();
      const float* yv = y.data();
      float* dv = v_t.grad();
      if (degenerate) {  // forward was x/eps, a plain linear map
        for (int64_t i = 0; i < n; ++i) dv[i] += static_cast<float>(dy[i] / kEps);
        return;
      }
      double dot = 0.0;
      for (int64_t i = 0; i < n; ++i) dot += static_cast<double>(yv[i]) * static_cast<double>(dy[i]);
      for (int64_t i = 0; i < n; ++i)
        dv[i] += static_cast<float>((static_cast<double>(dy[i]) - static_cast<double>(yv[i]) * dot) / denom);
    });
  }
  return out;
}

PatchOrigin draw_origin(const FeatureMap& f, int image_index, const SampleConfig& cfg, Rng& rng) {
  const int row = rng.uniform_int(f.height() - cfg.patch_rows + 1);
  const int col = rng.uniform_int(f.width() - cfg.patch_cols + 1);
  return PatchOrigin{image_index, row, col};
}

bool windows_overlap(const PatchOrigin& a, const PatchOrigin& b, const SampleConfig& cfg) {
  return std::abs(a.row - b.row) < cfg.patch_rows && std::abs(a.col - b.col) < cfg.patch_cols;
}

// Uniform over the positions that do not overlap `avoid`; enumerated rather
// than rejection-sampled, since a mid-map anchor can rule out most of a small
// grid.
PatchOrigin draw_origin_avoiding(const FeatureMap& f, int image_index, const SampleConfig& cfg,
                                 Rng& rng, const PatchOrigin& avoid) {
  std::vector<PatchOrigin> valid;
  for (int r = 0; r + cfg.patch_rows <= f.height(); ++r)
    for (int c = 0; c + cfg.patch_cols <= f.width(); ++c) {
      PatchOrigin o{image_index, r, c};
      if (!windows_overlap(o, avoid, cfg)) valid.push_back(o);
    }
  if (valid.empty())
    throw Error("sampler: exclude_overlap has no non-overlapping window for anchor (" +
                std::to_string(avoid.row) + "," + std::to_string(avoid.col) + ") with " +
                std::to_string(cfg.patch_rows) + "x" + std::to_string(cfg.patch_cols) + " on a " +
                std::to_string(f.height()) + "x" + std::to_string(f.width()) + " map");
  return valid[static_cast<size_t>(rng.uniform_int(static_cast<int>(valid.size())))];
}

Tensor patch_values(Tape* tape, const FeatureMap& f, const PatchOrigin& o,
                    const SampleConfig& cfg) {
  Tensor v = gather_patch(tape, f.values, o, cfg.patch_rows, cfg.patch_cols);
  if (cfg.normalize_features) v = l2_normalize(tape, v);
  return v;
}

// N x N matrix node: Dist(i,j) = ||anchor_i - contrast[i][j]||_2. Gradients
// fan out to every contributing patch vector.
Tensor pairwise_distances(Tape* tape, const std::vector<Tensor>& anchors,
                          const std::vector<std::vector<Tensor>>& contrasts) {
  const int N = static_cast<int>(anchors.size());
  Tensor out = Tensor::zeros({N, N}, false);
  bool rg = false;
  for (const auto& a : anchors) rg = rg || (tape && a.requires_grad());
  for (const auto& row : contrasts)
    for (const auto& c : row) rg = rg || (tape && c.requires_grad());

  float* d = out.data();
  const int64_t L = anchors.empty() ? 0 : anchors[0].numel();
  for (int i = 0; i < N; ++i) {
    const float* a = anchors[static_cast<size_t>(i)].data();
    for (int j = 0; j < N; ++j) {
      const float* c = contrasts[static_cast<size_t>(i)][static_cast<size_t>(j)].data();
      double s = 0.0;
      for (int64_t k = 0; k < L; ++k) {
        const double t = static_cast<double>(a[k]) - static_cast<double>(c[k]);
        s += t * t;
      }
      d[static_cast<int64_t>(i) * N + j] = static_cast<float>(std::sqrt(s));
    }
  }
  check_finite(out, "pairwise_distances");

  if (rg) {
    out.set_requires_grad(true);
    Tensor y = out;
    auto anchors_s = std::make_shared<std::vector<Tensor>>(anchors);
    auto contrasts_s = std::make_shared<std::vector<std::vector<Tensor>>>(contrasts);
    std::vector<Tensor> receivers;
    for (const auto& a : anchors)
      if (a.requires_grad()) receivers.push_back(a);
    for (const auto& row : contrasts)
      for (const auto& c : row)
        if (c.requires_grad()) receivers.push_back(c);
    tape->record("pairwise_distances", receivers, [=]() mutable {
      const float* dy = y.grad();
      const float* dval = y.data();
      for (int i = 0; i < N; ++i) {
        Tensor& a = (*anchors_s)[static_cast<size_t>(i)];
        for (int j = 0; j < N; ++j) {
          Tensor& c = (*contrasts_s)[static_cast<size_t>(i)][static_cast<size_t>(j)];
          const double dist = static_cast<double>(dval[static_cast<int64_t>(i) * N + j]);
          const double g = static_cast<double>(dy[static_cast<int64_t>(i) * N + j]);
          if (dist <= 0.0 || g == 0.0) continue;
          const double s = g / dist;
          const float* av = a.data();
          const float* cv = c.data();
          float* ag = a.requires_grad() ? a.grad() : nullptr;
          float* cg = c.requires_grad() ? c.grad() : nullptr;
          for (int64_t k = 0; k < L; ++k) {
            const float t =
                static_cast<float>(s * (static_cast<double>(av[k]) - static_cast<double>(cv[k])));
            if (ag) ag[k] += t;
            if (cg) cg[k] -= t;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace

PatchVector sample_patch(Tape* tape, const FeatureMap& f, int image_index, const SampleConfig& cfg,
                         Rng& rng) {
  validate_window(f, cfg, "sample_patch");
  if (image_index < 0 || image_index >= f.n())
    throw ShapeError("sample_patch: image index " + std::to_string(image_index) +
                     " out of batch " + std::to_string(f.n()));
  PatchOrigin o = draw_origin(f, image_index, cfg, rng);
  return PatchVector{patch_values(tape, f, o, cfg), o};
}

std::pair<PatchVector, PatchVector> sample_pair(Tape* tape, const FeatureMap& f, int image_index,
                                                const SampleConfig& cfg, Rng& rng) {
  validate_window(f, cfg, "sample_pair");
  if (image_index < 0 || image_index >= f.n())
    throw ShapeError("sample_pair: image index " + std::to_string(image_index) + " out of batch " +
                     std::to_string(f.n()));
  PatchOrigin o1 = draw_origin(f, image_index, cfg, rng);
  PatchOrigin o2 = cfg.exclude_overlap ? draw_origin_avoiding(f, image_index, cfg, rng, o1)
                                       : draw_origin(f, image_index, cfg, rng);
  return {PatchVector{patch_values(tape, f, o1, cfg), o1},
          PatchVector{patch_values(tape, f, o2, cfg), o2}};
}

DistanceMatrixBuild build_distance_matrix(Tape* tape, const FeatureMap& f, const SampleConfig& cfg,
                                          Rng& rng) {
  validate_window(f, cfg, "build_distance_matrix");
  const int N = f.n();

  std::vector<PatchOrigin> anchors(static_cast<size_t>(N));
  std::vector<std::vector<PatchOrigin>> contrasts(static_cast<size_t>(N),
                                                  std::vector<PatchOrigin>(static_cast<size_t>(N)));
  if (cfg.fresh_contrast_per_pair) {
    // Algorithm-literal draw order: anchor_i, then its row of contrasts.
    for (int i = 0; i < N; ++i) {
      anchors[static_cast<size_t>(i)] = draw_origin(f, i, cfg, rng);
      for (int j = 0; j < N; ++j) {
        contrasts[static_cast<size_t>(i)][static_cast<size_t>(j)] =
            (cfg.exclude_overlap && j == i)
                ? draw_origin_avoiding(f, j, cfg, rng, anchors[static_cast<size_t>(i)])
                : draw_origin(f, j, cfg, rng);
      }
    }
  } else {
    for (int i = 0; i < N; ++i) anchors[static_cast<size_t>(i)] = draw_origin(f, i, cfg, rng);
    for (int j = 0; j < N; ++j) {
      PatchOrigin o = cfg.exclude_overlap
                          ? draw_origin_avoiding(f, j, cfg, rng, anchors[static_cast<size_t>(j)])
                          : draw_origin(f, j, cfg, rng);
      for (int i = 0; i < N; ++i) contrasts[static_cast<size_t>(i)][static_cast<size_t>(j)] = o;
    }
  }

  DistanceMatrix dm = distance_matrix_from_origins(tape, f, anchors, contrasts, cfg);
  return DistanceMatrixBuild{std::move(dm), std::move(anchors), std::move(contrasts)};
}

DistanceMatrix distance_matrix_from_origins(Tape* tape, const FeatureMap& f,
                                            const std::vector<PatchOrigin>& anchors,
                                            const std::vector<std::vector<PatchOrigin>>& contrasts,
                                            const SampleConfig& cfg) {
  validate_window(f, cfg, "distance_matrix_from_origins");
  const int N = f.n();
  if (static_cast<int>(anchors.size()) != N || static_cast<int>(contrasts.size()) != N)
    throw ShapeError("distance_matrix_from_origins: origin grid does not match batch size");

  std::vector<Tensor> anchor_vals;
  anchor_vals.reserve(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i)
    anchor_vals.push_back(patch_values(tape, f, anchors[static_cast<size_t>(i)], cfg));

  // Identical origins gather once and share the node (the fresh=false case).
  std::map<std::tuple<int, int, int>, Tensor> cache;
  std::vector<std::vector<Tensor>> contrast_vals(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    if (static_cast<int>(contrasts[static_cast<size_t>(i)].size()) != N)
      throw ShapeError("distance_matrix_from_origins: origin grid row " + std::to_string(i) +
                       " does not match batch size");
    contrast_vals[static_cast<size_t>(i)].reserve(static_cast<size_t>(N));
    for (int j = 0; j < N; ++j) {
      const PatchOrigin& o = contrasts[static_cast<size_t>(i)][static_cast<size_t>(j)];
      auto key = std::make_tuple(o.image, o.row, o.col);
      auto it = cache.find(key);
      if (it == cache.end()) it = cache.emplace(key, patch_values(tape, f, o, cfg)).first;
      contrast_vals[static_cast<size_t>(i)].push_back(it->second);
    }
  }

  Tensor d = pairwise_distances(tape, anchor_vals, contrast_vals);
  return DistanceMatrix::from_tensor(std::move(d));
}

}  // namespace sc
