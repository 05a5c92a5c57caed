#include "sc/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "sc/error.hpp"
#include "sc/ops.hpp"

namespace sc {

namespace {

void require_vectors(const char* op, const Tensor& a, const Tensor& b, const Tensor& c) {
  for (const Tensor* t : {&a, &b, &c})
    if (!t->defined() || t->rank() != 1)
      throw ShapeError(std::string(op) + ": patch vectors must have rank 1");
  if (a.dim(0) != b.dim(0) || a.dim(0) != c.dim(0))
    throw ShapeError(std::string(op) + ": vector length mismatch " + std::to_string(a.dim(0)) +
                     "/" + std::to_string(b.dim(0)) + "/" + std::to_string(c.dim(0)));
}

double dist64(const float* a, const float* b, int64_t n) {
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

// d||a-b|| / da = (a-b)/||a-b||, contribution dropped at the kink d == 0
void add_dist_grad(float* da, float* db, const float* a, const float* b, int64_t n, double d,
                   double g) {
  if (d <= 0.0) return;
  const double s = g / d;
  for (int64_t i = 0; i < n; ++i) {
    const float t = static_cast<float>(s * (static_cast<double>(a[i]) - static_cast<double>(b[i])));
    if (da) da[i] += t;
    if (db) db[i] -= t;
  }
}

}  // namespace

DistanceMatrix DistanceMatrix::from_tensor(Tensor t) {
  if (!t.defined() || t.rank() != 2 || t.dim(0) != t.dim(1))
    throw ShapeError("DistanceMatrix: expected a square matrix, got " +
                     (t.defined() ? shape_str(t.shape()) : std::string("<undefined>")));
  const int64_t n = t.numel();
  const float* v = t.data();
  for (int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(v[i]))
      throw NumericError("DistanceMatrix: non-finite entry at flat index " + std::to_string(i));
    if (v[i] < 0.0f)
      throw Error("DistanceMatrix: negative distance " + std::to_string(v[i]) + " at flat index " +
                  std::to_string(i));
  }
  return DistanceMatrix{std::move(t)};
}

Tensor euclidean_distance(Tape* tape, const Tensor& a, const Tensor& b) {
  if (a.rank() != 1 || b.rank() != 1 || a.dim(0) != b.dim(0))
    throw ShapeError("euclidean_distance: vector length mismatch");
  const int64_t n = a.dim(0);
  const double d = dist64(a.data(), b.data(), n);
  Tensor out = Tensor::zeros({}, wants_grad(tape, {&a, &b}));
  out.data()[0] = static_cast<float>(d);
  check_finite(out, "euclidean_distance");

  if (out.requires_grad()) {
    Tensor a_t = a, b_t = b, y = out;
    std::vector<Tensor> receivers;
    if (a_t.requires_grad()) receivers.push_back(a_t);
    if (b_t.requires_grad()) receivers.push_back(b_t);
    tape->record("euclidean_distance", receivers, [=]() mutable {
      add_dist_grad(a_t.requires_grad() ? a_t.grad() : nullptr,
                    b_t.requires_grad() ? b_t.grad() : nullptr, a_t.data(), b_t.data(), n, d,
                    static_cast<double>(y.grad()[0]));
    });
  }
  return out;
}

double margin_triplet_loss64(const Tensor& anchor, const Tensor& positive, const Tensor& negative,
                             float alpha) {
  require_vectors("margin_triplet_loss", anchor, positive, negative);
  if (alpha < 0.0f)
    throw Error("margin_triplet_loss: margin must be >= 0, got " + std::to_string(alpha));
  const int64_t n = anchor.dim(0);
  const double dp = dist64(anchor.data(), positive.data(), n);
  const double dn = dist64(anchor.data(), negative.data(), n);
  const double raw = dp - dn + static_cast<double>(alpha);
  return raw > 0.0 ? raw : 0.0;
}

Tensor margin_triplet_loss(Tape* tape, const Tensor& anchor, const Tensor& positive,
                           const Tensor& negative, float alpha) {
  const double loss = margin_triplet_loss64(anchor, positive, negative, alpha);
  const int64_t n = anchor.dim(0);
  const double dp = dist64(anchor.data(), positive.data(), n);
  const double dn = dist64(anchor.data(), negative.data(), n);
  const double raw = dp - dn + static_cast<double>(alpha);

  Tensor out = Tensor::zeros({}, wants_grad(tape, {&anchor, &positive, &negative}));
  out.data()[0] = static_cast<float>(loss);
  check_finite(out, "margin_triplet_loss");

  if (out.requires_grad()) {
    Tensor a = anchor, p = positive, ng = negative, y = out;
    std::vector<Tensor> receivers;
    for (Tensor* t : {&a, &p, &ng})
      if (t->requires_grad()) receivers.push_back(*t);
    tape->record("margin_triplet_loss", receivers, [=]() mutable {
      if (raw <= 0.0) return;  // clamped region
      const double g = static_cast<double>(y.grad()[0]);
      add_dist_grad(a.requires_grad() ? a.grad() : nullptr,
                    p.requires_grad() ? p.grad() : nullptr, a.data(), p.data(), n, dp, g);
      add_dist_grad(a.requires_grad() ? a.grad() : nullptr,
                    ng.requires_grad() ? ng.grad() : nullptr, a.data(), ng.data(), n, dn, -g);
    });
  }
  return out;
}

namespace {

// loss = d+ + log(e^{-d+} + e^{-d-}), max-subtracted; dloss/dd+ = sigma(t),
// dloss/dd- = -sigma(t) with t = d+ - d-.
double ratio_loss_from_distances(double dp, double dn) {
  const double m = std::max(-dp, -dn);
  return dp + m + std::log(std::exp(-dp - m) + std::exp(-dn - m));
}

double stable_sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace

double ratio_triplet_loss64(const Tensor& anchor, const Tensor& positive, const Tensor& negative) {
  require_vectors("ratio_triplet_loss", anchor, positive, negative);
  const int64_t n = anchor.dim(0);
  return ratio_loss_from_distances(dist64(anchor.data(), positive.data(), n),
                                   dist64(anchor.data(), negative.data(), n));
}

Tensor ratio_triplet_loss(Tape* tape, const Tensor& anchor, const Tensor& positive,
                          const Tensor& negative) {
  require_vectors("ratio_triplet_loss", anchor, positive, negative);
  const int64_t n = anchor.dim(0);
  const double dp = dist64(anchor.data(), positive.data(), n);
  const double dn = dist64(anchor.data(), negative.data(), n);
  const double loss = ratio_loss_from_distances(dp, dn);

  Tensor out = Tensor::zeros({}, wants_grad(tape, {&anchor, &positive, &negative}));
  out.data()[0] = static_cast<float>(loss);
  check_finite(out, "ratio_triplet_loss");

  if (out.requires_grad()) {
    Tensor a = anchor, p = positive, ng = negative, y = out;
    std::vector<Tensor> receivers;
    for (Tensor* t : {&a, &p, &ng})
      if (t->requires_grad()) receivers.push_back(*t);
    tape->record("ratio_triplet_loss", receivers, [=]() mutable {
      const double g = static_cast<double>(y.grad()[0]);
      const double s = stable_sigmoid(dp - dn);
      add_dist_grad(a.requires_grad() ? a.grad() : nullptr,
                    p.requires_grad() ? p.grad() : nullptr, a.data(), p.data(), n, dp, g * s);
      add_dist_grad(a.requires_grad() ? a.grad() : nullptr,
                    ng.requires_grad() ? ng.grad() : nullptr, a.data(), ng.data(), n, dn, -g * s);
    });
  }
  return out;
}

Tensor sc_pair_loss(Tape* tape, const Tensor& f1_anchor, const Tensor& f1_pos,
                    const Tensor& f2_contrast) {
  // the contrast patch plays the negative role; numerics are shared
  return ratio_triplet_loss(tape, f1_anchor, f1_pos, f2_contrast);
}

Tensor sc_pair_loss_symmetric(Tape* tape, const Tensor& x1_anchor, const Tensor& x1_pos,
                              const Tensor& x2_anchor, const Tensor& x2_pos) {
  Tensor l12 = sc_pair_loss(tape, x1_anchor, x1_pos, x2_anchor);
  Tensor l21 = sc_pair_loss(tape, x2_anchor, x2_pos, x1_anchor);
  return scale(tape, add(tape, l12, l21), 0.5f);
}

double sc_batch_loss64(const DistanceMatrix& dm) {
  const Tensor& D = dm.dist;
  if (!D.defined() || D.rank() != 2 || D.dim(0) != D.dim(1))
    throw ShapeError("sc_batch_loss: distance matrix must be square, got " +
                     (D.defined() ? shape_str(D.shape()) : std::string("<undefined>")));
  const int N = D.dim(0);
  if (N < 1) throw ShapeError("sc_batch_loss: empty distance matrix");

  const float* d = D.data();
  double total = 0.0;
  for (int i = 0; i < N; ++i) {
    const float* row = d + static_cast<int64_t>(i) * N;
    double m = -static_cast<double>(row[0]);
    for (int k = 1; k < N; ++k) m = std::max(m, -static_cast<double>(row[k]));
    double sum = 0.0;
    for (int k = 0; k < N; ++k) sum += std::exp(-static_cast<double>(row[k]) - m);
    total += static_cast<double>(row[i]) + m + std::log(sum);
  }
  return total / static_cast<double>(N);
}

Tensor sc_batch_loss(Tape* tape, const DistanceMatrix& dm) {
  const double total = sc_batch_loss64(dm);
  const Tensor& D = dm.dist;
  const int N = D.dim(0);

  Tensor out = Tensor::zeros({}, wants_grad(tape, {&D}));
  out.data()[0] = static_cast<float>(total);
  check_finite(out, "sc_batch_loss");

  if (out.requires_grad()) {
    Tensor d_t = D, y = out;
    tape->record("sc_batch_loss", {d_t}, [=]() mutable {
      const double g = static_cast<double>(y.grad()[0]) / static_cast<double>(N);
      const float* dd = d_t.data();
      float* dg = d_t.grad();
      for (int i = 0; i < N; ++i) {
        const float* row = dd + static_cast<int64_t>(i) * N;
        double m = -static_cast<double>(row[0]);
        for (int k = 1; k < N; ++k) m = std::max(m, -static_cast<double>(row[k]));
        double sum = 0.0;
        for (int k = 0; k < N; ++k) sum += std::exp(-static_cast<double>(row[k]) - m);
        for (int k = 0; k < N; ++k) {
          const double p = std::exp(-static_cast<double>(row[k]) - m) / sum;
          const double indicator = (k == i) ? 1.0 : 0.0;
          dg[static_cast<int64_t>(i) * N + k] += static_cast<float>(g * (indicator - p));
        }
      }
    });
  }
  return out;
}

}  // namespace sc
