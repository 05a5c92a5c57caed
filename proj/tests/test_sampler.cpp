#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "sc/error.hpp"
#include "sc/gradcheck.hpp"
#include "sc/losses.hpp"
#include "sc/reference.hpp"
#include "sc/sampler.hpp"

using namespace sc;
using namespace sc::test;

namespace {

FeatureMap random_map(int n, int h, int w, int c, Rng& rng) {
  Tensor t = Tensor::zeros({n, h, w, c});
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(-1.0f, 1.0f);
  return FeatureMap{t};
}

}  // namespace

TEST_CASE("sample_patch: 1x1 window on a 1x1 map returns the full channel vector") {
  Tensor t = Tensor::from_vector({1, 1, 1, 3}, {0.5f, -1.0f, 2.0f});
  FeatureMap f{t};
  SampleConfig cfg;
  Rng rng(1);
  PatchVector p = sample_patch(nullptr, f, 0, cfg, rng);
  CHECK(p.values.shape() == Shape{3});
  CHECK(p.values.data()[0] == 0.5f);
  CHECK(p.values.data()[1] == -1.0f);
  CHECK(p.values.data()[2] == 2.0f);
  CHECK(p.origin.row == 0);
  CHECK(p.origin.col == 0);
}

TEST_CASE("sample_patch: full-map window flattens deterministically, rows then cols then channels") {
  Tensor t = Tensor::from_vector({1, 2, 2, 2}, {0, 1, 2, 3, 4, 5, 6, 7});
  FeatureMap f{t};
  SampleConfig cfg;
  cfg.patch_rows = 2;
  cfg.patch_cols = 2;
  Rng r1(1), r2(999);
  PatchVector p1 = sample_patch(nullptr, f, 0, cfg, r1);
  PatchVector p2 = sample_patch(nullptr, f, 0, cfg, r2);
  for (int i = 0; i < 8; ++i) {
    CHECK(p1.values.data()[i] == static_cast<float>(i));  // (r,c,ch) nesting
    CHECK(p2.values.data()[i] == static_cast<float>(i));  // rng-independent
  }
}

TEST_CASE("sample_patch: window larger than the map is an error") {
  Rng rng(3);
  FeatureMap f = random_map(1, 3, 3, 1, rng);
  SampleConfig cfg;
  cfg.patch_rows = 4;
  CHECK_THROWS_AS(sample_patch(nullptr, f, 0, cfg, rng), ShapeError);
}

TEST_CASE("sample_patch: origins are uniform over the valid grid (chi-square)") {
  Rng data_rng(5);
  FeatureMap f = random_map(1, 6, 6, 1, data_rng);
  SampleConfig cfg;
  cfg.patch_rows = 2;
  cfg.patch_cols = 2;  // 5x5 = 25 valid origins
  Rng rng(12345, 8);
  const int draws = 100000;
  std::map<std::pair<int, int>, int> counts;
  for (int i = 0; i < draws; ++i) {
    PatchVector p = sample_patch(nullptr, f, 0, cfg, rng);
    counts[{p.origin.row, p.origin.col}]++;
  }
  CHECK(counts.size() == 25);
  const double expected = draws / 25.0;
  const double sigma = std::sqrt(draws * (1.0 / 25) * (24.0 / 25));
  double chi2 = 0.0;
  for (const auto& [origin, count] : counts) {
    CHECK(std::fabs(count - expected) <= 3.0 * sigma);
    chi2 += (count - expected) * (count - expected) / expected;
  }
  CHECK(chi2 < 52.0);  // chi-square(24 dof) 99.9th percentile ~ 51.2
}

TEST_CASE("sample_pair: 1x1 map yields two identical vectors; seeds reproduce pairs") {
  Tensor t = Tensor::from_vector({1, 1, 1, 2}, {0.3f, 0.7f});
  FeatureMap f{t};
  SampleConfig cfg;
  Rng rng(7);
  auto [a, b] = sample_pair(nullptr, f, 0, cfg, rng);
  CHECK(a.values.data()[0] == b.values.data()[0]);
  CHECK(a.values.data()[1] == b.values.data()[1]);

  Rng d1(99), d2(99);
  FeatureMap big = random_map(1, 5, 5, 2, rng);
  auto pair1 = sample_pair(nullptr, big, 0, cfg, d1);
  auto pair2 = sample_pair(nullptr, big, 0, cfg, d2);
  CHECK(pair1.first.origin == pair2.first.origin);
  CHECK(pair1.second.origin == pair2.second.origin);
}

TEST_CASE("sample_pair: joint origin distribution factorizes (chi-square independence)") {
  Rng data_rng(11);
  FeatureMap f = random_map(1, 4, 4, 1, data_rng);
  SampleConfig cfg;
  cfg.patch_rows = 2;
  cfg.patch_cols = 2;  // 3x3 = 9 origins each
  Rng rng(777, 9);
  const int draws = 100000;
  int joint[9][9] = {};
  int first[9] = {}, second[9] = {};
  for (int i = 0; i < draws; ++i) {
    auto [a, b] = sample_pair(nullptr, f, 0, cfg, rng);
    const int ia = a.origin.row * 3 + a.origin.col;
    const int ib = b.origin.row * 3 + b.origin.col;
    joint[ia][ib]++;
    first[ia]++;
    second[ib]++;
  }
  double chi2 = 0.0;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) {
      const double expect = static_cast<double>(first[i]) * second[j] / draws;
      chi2 += (joint[i][j] - expect) * (joint[i][j] - expect) / expect;
    }
  CHECK(chi2 < 112.3);  // chi-square(64 dof) 99.9th percentile
}

TEST_CASE("sample_pair: exclude_overlap picks a non-overlapping window; impossible cases error") {
  Rng data_rng(13);
  FeatureMap f = random_map(1, 6, 6, 1, data_rng);  // large enough for every anchor
  SampleConfig cfg;
  cfg.patch_rows = 2;
  cfg.patch_cols = 2;
  cfg.exclude_overlap = true;
  Rng rng(15);
  for (int i = 0; i < 200; ++i) {
    auto [a, b] = sample_pair(nullptr, f, 0, cfg, rng);
    const bool overlap = std::abs(a.origin.row - b.origin.row) < 2 &&
                         std::abs(a.origin.col - b.origin.col) < 2;
    CHECK_FALSE(overlap);
  }
  SampleConfig full;  // window covers the whole map: no disjoint second draw
  full.patch_rows = 6;
  full.patch_cols = 6;
  full.exclude_overlap = true;
  CHECK_THROWS_AS(sample_pair(nullptr, f, 0, full, rng), Error);
}

TEST_CASE("build_distance_matrix: N=1 on a 1x1 map gives [[0]]") {
  Tensor t = Tensor::from_vector({1, 1, 1, 2}, {0.4f, -0.2f});
  FeatureMap f{t};
  SampleConfig cfg;
  Rng rng(17);
  auto built = build_distance_matrix(nullptr, f, cfg, rng);
  CHECK(built.dist.dist.shape() == Shape{1, 1});
  CHECK(built.dist.dist.data()[0] == 0.0f);
  CHECK(sc_batch_loss(nullptr, built.dist).value() == 0.0f);
}

TEST_CASE("build_distance_matrix: identical constant maps give all-equal entries, loss ln N") {
  const int N = 4;
  Tensor t = Tensor::full({N, 3, 3, 2}, 0.8f);
  FeatureMap f{t};
  SampleConfig cfg;
  Rng rng(19);
  auto built = build_distance_matrix(nullptr, f, cfg, rng);
  for (int64_t i = 0; i < built.dist.dist.numel(); ++i) CHECK(built.dist.dist.data()[i] == 0.0f);
  CHECK(sc_batch_loss64(built.dist) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("build_distance_matrix: N=2 distinct 1x1 maps match hand distances") {
  Tensor t = Tensor::from_vector({2, 1, 1, 2}, {1.0f, 2.0f, 4.0f, 6.0f});
  FeatureMap f{t};
  SampleConfig cfg;
  Rng rng(23);
  auto built = build_distance_matrix(nullptr, f, cfg, rng);
  const float d01 = std::sqrt(9.0f + 16.0f);  // ||(1,2)-(4,6)||
  CHECK(built.dist.dist.at({0, 0}) == 0.0f);
  CHECK(built.dist.dist.at({1, 1}) == 0.0f);
  CHECK(built.dist.dist.at({0, 1}) == doctest::Approx(d01));
  CHECK(built.dist.dist.at({1, 0}) == doctest::Approx(d01));
}

TEST_CASE("build_distance_matrix: fresh_contrast_per_pair=false shares one draw per column") {
  Rng data_rng(29);
  FeatureMap f = random_map(3, 5, 5, 2, data_rng);
  SampleConfig cfg;
  cfg.fresh_contrast_per_pair = false;
  Rng rng(31);
  auto built = build_distance_matrix(nullptr, f, cfg, rng);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) CHECK(built.contrasts[i][j] == built.contrasts[0][j]);

  // algorithm-literal mode draws fresh contrasts inside the inner loop
  SampleConfig fresh;
  Rng rng2(31);
  auto built2 = build_distance_matrix(nullptr, f, fresh, rng2);
  bool any_differ = false;
  for (int j = 0; j < 3 && !any_differ; ++j)
    for (int i = 1; i < 3 && !any_differ; ++i)
      any_differ = !(built2.contrasts[i][j] == built2.contrasts[0][j]);
  CHECK(any_differ);
}

TEST_CASE("build_distance_matrix: fixed seed fixes every origin and value bit-exactly") {
  Rng data_rng(37);
  FeatureMap f = random_map(4, 6, 6, 3, data_rng);
  SampleConfig cfg;
  Rng r1(41), r2(41);
  auto b1 = build_distance_matrix(nullptr, f, cfg, r1);
  auto b2 = build_distance_matrix(nullptr, f, cfg, r2);
  for (int i = 0; i < 4; ++i) CHECK(b1.anchors[i] == b2.anchors[i]);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      CHECK(b1.contrasts[i][j] == b2.contrasts[i][j]);
      CHECK(b1.dist.dist.at({i, j}) == b2.dist.dist.at({i, j}));
    }
}

TEST_CASE("gradients reach only the sampled windows and match finite differences there") {
  Rng data_rng(43);
  const int N = 2, H = 4, W = 4, C = 2;
  FeatureMap f = random_map(N, H, W, C, data_rng);
  f.values.set_requires_grad(true);
  SampleConfig cfg;
  Rng draw(47);
  Tape tape;
  auto built = build_distance_matrix(&tape, f, cfg, draw);
  Tensor loss = sc_batch_loss(&tape, built.dist);
  tape.backward(loss);

  // union of sampled cells
  std::vector<bool> sampled(static_cast<size_t>(f.values.numel()), false);
  auto mark = [&](const PatchOrigin& o) {
    for (int c = 0; c < C; ++c)
      sampled[static_cast<size_t>(((static_cast<int64_t>(o.image) * H + o.row) * W + o.col) * C + c)] =
          true;
  };
  for (const auto& a : built.anchors) mark(a);
  for (const auto& row : built.contrasts)
    for (const auto& o : row) mark(o);

  bool any_nonzero = false;
  for (int64_t i = 0; i < f.values.numel(); ++i) {
    if (!sampled[static_cast<size_t>(i)]) CHECK(f.values.grad()[i] == 0.0f);
    any_nonzero = any_nonzero || f.values.grad()[i] != 0.0f;
  }
  CHECK(any_nonzero);

  // finite differences through the same fixed origins
  namespace ref = sc::reference;
  const auto anchors = built.anchors;
  const auto contrasts = built.contrasts;
  auto tape_fn = [&](Tape* t, std::vector<Tensor>& in) {
    FeatureMap m{in[0]};
    return sc_batch_loss(t, distance_matrix_from_origins(t, m, anchors, contrasts, cfg));
  };
  auto ref_fn = [&](const std::vector<Tensor>& in) {
    return ref::sc_batch(
        ref::distance_matrix(ref::lift(in[0]), N, H, W, C, anchors, contrasts, 1, 1, false), N);
  };
  CHECK(gradcheck_max_rel_err(tape_fn, ref_fn, {f.values.clone()}) < 1e-4);
}

TEST_CASE("normalize_features computes distances between unit vectors") {
  Tensor t = Tensor::from_vector({2, 1, 1, 2}, {3.0f, 4.0f, 0.0f, 2.0f});
  FeatureMap f{t};
  SampleConfig cfg;
  cfg.normalize_features = true;
  Rng rng(53);
  auto built = build_distance_matrix(nullptr, f, cfg, rng);
  // (3,4)/5 = (0.6,0.8); (0,2)/2 = (0,1)
  const float want = std::sqrt(0.6f * 0.6f + 0.04f);
  CHECK(built.dist.dist.at({0, 1}) == doctest::Approx(want).epsilon(1e-6));
  CHECK(built.dist.dist.at({0, 0}) == 0.0f);
}

TEST_CASE("multi-draw rng streams do not collide across forks") {
  Rng root(61);
  Rng a = root.fork(1), b = root.fork(2);
  bool differ = false;
  for (int i = 0; i < 8; ++i) differ = differ || (a.next_u64() != b.next_u64());
  CHECK(differ);
}
