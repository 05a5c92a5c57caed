#include "sc/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sc/error.hpp"
#include "sc/losses.hpp"
#include "sc/ops.hpp"
#include "sc/reference.hpp"
#include "sc/rng.hpp"
#include "sc/sampler.hpp"

namespace sc {

namespace {

namespace ref = sc::reference;

// scalar = sum_i coeffs[i] * t[i], accumulated in double
Tensor probe_loss(Tape* tape, const Tensor& t, const std::vector<float>& coeffs) {
  if (static_cast<int64_t>(coeffs.size()) != t.numel())
    throw ShapeError("probe_loss: coefficient count mismatch");
  double s = 0.0;
  const float* d = t.data();
  for (int64_t i = 0; i < t.numel(); ++i)
    s += static_cast<double>(coeffs[static_cast<size_t>(i)]) * static_cast<double>(d[i]);
  Tensor out = Tensor::zeros({}, wants_grad(tape, {&t}));
  out.data()[0] = static_cast<float>(s);

  if (out.requires_grad()) {
    Tensor t_t = t, y = out;
    auto c = std::make_shared<std::vector<float>>(coeffs);
    const int64_t n = t.numel();
    tape->record("probe_loss", {t_t}, [=]() mutable {
      const float g = y.grad()[0];
      float* dt = t_t.grad();
      for (int64_t i = 0; i < n; ++i) dt[i] += g * (*c)[static_cast<size_t>(i)];
    });
  }
  return out;
}

double probe(const ref::dvec& values, const std::vector<float>& coeffs) {
  double s = 0.0;
  for (size_t i = 0; i < values.size(); ++i) s += static_cast<double>(coeffs[i]) * values[i];
  return s;
}

}  // namespace

double gradcheck_max_rel_err(const TapeLossFn& fn, const RefLossFn& ref_fn,
                             std::vector<Tensor> inputs, double h) {
  for (auto& t : inputs) t.set_requires_grad(true);

  Tape tape;
  Tensor loss = fn(&tape, inputs);
  if (loss.numel() != 1) throw ShapeError("gradcheck: fn must return a scalar");
  tape.backward(loss);

  // the two forward paths must agree before differentiating anything
  const double v_prod = static_cast<double>(loss.value());
  const double v_ref = ref_fn(inputs);
  if (std::fabs(v_prod - v_ref) > 1e-4 * std::max(1.0, std::fabs(v_ref)))
    throw NumericError("gradcheck: production forward " + std::to_string(v_prod) +
                       " disagrees with float64 reference " + std::to_string(v_ref));

  std::vector<std::vector<float>> analytic;
  for (auto& t : inputs) analytic.emplace_back(t.grad(), t.grad() + t.numel());

  double max_abs_diff = 0.0;
  double max_mag = 0.0;
  for (size_t k = 0; k < inputs.size(); ++k) {
    Tensor& t = inputs[k];
    float* d = t.data();
    for (int64_t i = 0; i < t.numel(); ++i) {
      const float saved = d[i];
      d[i] = static_cast<float>(static_cast<double>(saved) + h);
      const double x_plus = static_cast<double>(d[i]);
      const double f_plus = ref_fn(inputs);
      d[i] = static_cast<float>(static_cast<double>(saved) - h);
      const double x_minus = static_cast<double>(d[i]);
      const double f_minus = ref_fn(inputs);
      d[i] = saved;
      const double numeric = (f_plus - f_minus) / (x_plus - x_minus);
      const double a = static_cast<double>(analytic[k][static_cast<size_t>(i)]);
      max_abs_diff = std::max(max_abs_diff, std::fabs(a - numeric));
      max_mag = std::max({max_mag, std::fabs(a), std::fabs(numeric)});
    }
  }
  if (max_mag < 1e-8) return max_abs_diff;  // everything vanished: absolute error
  return max_abs_diff / max_mag;
}

namespace {

Tensor random_tensor(Shape shape, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int64_t i = 0; i < t.numel(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// Pairwise-distinct values with gaps well above 2h, for ops with ties/kinks.
Tensor separated_tensor(Shape shape, Rng& rng, float gap = 0.05f) {
  Tensor t = Tensor::zeros(std::move(shape));
  const int64_t n = t.numel();
  std::vector<int> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = static_cast<int>(i);
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)],
              order[static_cast<size_t>(rng.uniform_int(static_cast<int>(i + 1)))]);
  const float offset = rng.uniform(-1.0f, 1.0f);
  for (int64_t i = 0; i < n; ++i)
    t.data()[i] = offset + gap * static_cast<float>(order[static_cast<size_t>(i)] - n / 2);
  return t;
}

// Entries bounded away from 0 (the ReLU kink).
Tensor kink_free_tensor(Shape shape, Rng& rng, float margin = 0.05f) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (int64_t i = 0; i < t.numel(); ++i) {
    float& v = t.data()[i];
    if (std::fabs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

std::vector<float> probe_coeffs(int64_t n, Rng& rng) {
  std::vector<float> c(static_cast<size_t>(n));
  for (auto& v : c) v = rng.uniform(-1.0f, 1.0f);
  return c;
}

double worst_over_cases(int cases, Rng& rng, const std::function<double(Rng&)>& one_case) {
  double worst = 0.0;
  for (int i = 0; i < cases; ++i) worst = std::max(worst, one_case(rng));
  return worst;
}

double check_conv2d(Rng& rng) {
  const int N = 1 + rng.uniform_int(2), H = 3 + rng.uniform_int(3), W = 3 + rng.uniform_int(3);
  const int Cin = 1 + rng.uniform_int(2), Cout = 1 + rng.uniform_int(3);
  const int k = 1 + rng.uniform_int(3), stride = 1 + rng.uniform_int(2);
  const int padding = rng.uniform_int(2);
  Tensor x = random_tensor({N, H, W, Cin}, rng);
  Tensor w = random_tensor({k, k, Cin, Cout}, rng);
  Tensor b = random_tensor({Cout}, rng);
  const int Ho = (H + 2 * padding - k) / stride + 1;
  const int Wo = (W + 2 * padding - k) / stride + 1;
  auto coeffs = probe_coeffs(static_cast<int64_t>(N) * Ho * Wo * Cout, rng);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        return probe_loss(tape, conv2d(tape, in[0], in[1], in[2], stride, padding), coeffs);
      },
      [=](const std::vector<Tensor>& in) {
        return probe(ref::conv2d(ref::lift(in[0]), N, H, W, Cin, ref::lift(in[1]), k, k, Cout,
                                 ref::lift(in[2]), stride, padding),
                     coeffs);
      },
      {x, w, b});
}

double check_maxpool2d(Rng& rng) {
  const int N = 1 + rng.uniform_int(2), C = 1 + rng.uniform_int(2);
  const int H = 4 + rng.uniform_int(3), W = 4 + rng.uniform_int(3);
  const int window = 2 + rng.uniform_int(2), stride = 1 + rng.uniform_int(2);
  Tensor x = separated_tensor({N, H, W, C}, rng);
  const int Ho = (H - window) / stride + 1, Wo = (W - window) / stride + 1;
  auto coeffs = probe_coeffs(static_cast<int64_t>(N) * Ho * Wo * C, rng);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        return probe_loss(tape, maxpool2d(tape, in[0], window, stride), coeffs);
      },
      [=](const std::vector<Tensor>& in) {
        return probe(ref::maxpool2d(ref::lift(in[0]), N, H, W, C, window, stride), coeffs);
      },
      {x});
}

double check_batchnorm(Rng& rng) {
  const int N = 2, H = 2 + rng.uniform_int(3), W = 2 + rng.uniform_int(3);
  const int C = 1 + rng.uniform_int(3);
  Tensor x = random_tensor({N, H, W, C}, rng);
  Tensor gamma = random_tensor({C}, rng, 0.5f, 1.5f);
  Tensor beta = random_tensor({C}, rng, -0.5f, 0.5f);
  auto coeffs = probe_coeffs(x.numel(), rng);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        BatchNormState state = BatchNormState::make(C);  // fresh per call
        return probe_loss(tape, batchnorm(tape, in[0], in[1], in[2], Mode::train, state), coeffs);
      },
      [=](const std::vector<Tensor>& in) {
        return probe(ref::batchnorm_train(ref::lift(in[0]), N, H, W, C, ref::lift(in[1]),
                                          ref::lift(in[2])),
                     coeffs);
      },
      {x, gamma, beta});
}

double check_leaky_relu(Rng& rng, float slope) {
  const int N = 2 + rng.uniform_int(4), D = 3 + rng.uniform_int(5);
  Tensor x = kink_free_tensor({N, D, 1, 1}, rng);
  auto coeffs = probe_coeffs(x.numel(), rng);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        return probe_loss(tape, leaky_relu(tape, in[0], slope), coeffs);
      },
      [=](const std::vector<Tensor>& in) {
        return probe(ref::leaky_relu(ref::lift(in[0]), static_cast<double>(slope)), coeffs);
      },
      {x});
}

double check_affine(Rng& rng) {
  const int N = 1 + rng.uniform_int(3), D = 1 + rng.uniform_int(4), K = 1 + rng.uniform_int(4);
  Tensor x = random_tensor({N, D}, rng);
  Tensor w = random_tensor({D, K}, rng);
  Tensor b = random_tensor({K}, rng);
  auto coeffs = probe_coeffs(static_cast<int64_t>(N) * K, rng);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        return probe_loss(tape, affine(tape, in[0], in[1], in[2]), coeffs);
      },
      [=](const std::vector<Tensor>& in) {
        return probe(ref::affine(ref::lift(in[0]), N, D, ref::lift(in[1]), K, ref::lift(in[2])),
                     coeffs);
      },
      {x, w, b});
}

double check_dropout(Rng& rng) {
  const int N = 2 + rng.uniform_int(3), D = 3 + rng.uniform_int(4);
  Tensor x = random_tensor({N, D, 1, 1}, rng);
  const uint64_t mask_seed = rng.next_u64();
  const float p = 0.3f;
  auto mask = ref::dropout_mask(x.numel(), p, Rng(mask_seed));
  auto coeffs = probe_coeffs(x.numel(), rng);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        Rng mask_rng(mask_seed);  // identical mask on every probe
        return probe_loss(tape, dropout(tape, in[0], p, Mode::train, mask_rng), coeffs);
      },
      [=](const std::vector<Tensor>& in) {
        return probe(ref::elementwise_mul(ref::lift(in[0]), mask), coeffs);
      },
      {x});
}

double check_gap(Rng& rng) {
  const int N = 1 + rng.uniform_int(3), H = 2 + rng.uniform_int(3), W = 2 + rng.uniform_int(3);
  const int C = 1 + rng.uniform_int(3);
  Tensor x = random_tensor({N, H, W, C}, rng);
  auto coeffs = probe_coeffs(static_cast<int64_t>(N) * C, rng);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        return probe_loss(tape, global_avg_pool(tape, in[0]), coeffs);
      },
      [=](const std::vector<Tensor>& in) {
        return probe(ref::global_avg_pool(ref::lift(in[0]), N, H, W, C), coeffs);
      },
      {x});
}

double check_cross_entropy(Rng& rng) {
  const int N = 1 + rng.uniform_int(4), K = 2 + rng.uniform_int(5);
  Tensor z = random_tensor({N, K}, rng);
  std::vector<int> labels;
  for (int i = 0; i < N; ++i) labels.push_back(rng.uniform_int(K));
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        return log_softmax_cross_entropy(tape, in[0], labels);
      },
      [=](const std::vector<Tensor>& in) {
        return ref::cross_entropy(ref::lift(in[0]), N, K, labels);
      },
      {z});
}

// Triplet vectors with all pairwise distances bounded away from the norm kink.
std::vector<Tensor> triplet_inputs(Rng& rng, int count = 3) {
  const int D = 3 + rng.uniform_int(6);
  while (true) {
    std::vector<Tensor> vs;
    for (int i = 0; i < count; ++i) vs.push_back(random_tensor({D}, rng));
    bool ok = true;
    for (int i = 0; i < count && ok; ++i)
      for (int j = i + 1; j < count && ok; ++j)
        ok = ref::euclidean(ref::lift(vs[static_cast<size_t>(i)]),
                            ref::lift(vs[static_cast<size_t>(j)])) > 0.05;
    if (ok) return vs;
  }
}

double check_margin_triplet(Rng& rng) {
  while (true) {
    auto vs = triplet_inputs(rng);
    const float alpha = 0.2f;
    const double raw = ref::euclidean(ref::lift(vs[0]), ref::lift(vs[1])) -
                       ref::euclidean(ref::lift(vs[0]), ref::lift(vs[2])) + alpha;
    if (raw < 0.02) continue;  // keep clear of the clamp boundary
    return gradcheck_max_rel_err(
        [=](Tape* tape, std::vector<Tensor>& in) {
          return margin_triplet_loss(tape, in[0], in[1], in[2], alpha);
        },
        [=](const std::vector<Tensor>& in) {
          return ref::margin_triplet(ref::lift(in[0]), ref::lift(in[1]), ref::lift(in[2]), alpha);
        },
        vs);
  }
}

double check_ratio_triplet(Rng& rng) {
  auto vs = triplet_inputs(rng);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        return ratio_triplet_loss(tape, in[0], in[1], in[2]);
      },
      [=](const std::vector<Tensor>& in) {
        return ref::ratio_triplet(ref::lift(in[0]), ref::lift(in[1]), ref::lift(in[2]));
      },
      vs);
}

double check_sc_pair(Rng& rng) {
  auto vs = triplet_inputs(rng);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) { return sc_pair_loss(tape, in[0], in[1], in[2]); },
      [=](const std::vector<Tensor>& in) {
        return ref::ratio_triplet(ref::lift(in[0]), ref::lift(in[1]), ref::lift(in[2]));
      },
      vs);
}

double check_sc_pair_symmetric(Rng& rng) {
  auto vs = triplet_inputs(rng, 4);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        return sc_pair_loss_symmetric(tape, in[0], in[1], in[2], in[3]);
      },
      [=](const std::vector<Tensor>& in) {
        const double l12 = ref::ratio_triplet(ref::lift(in[0]), ref::lift(in[1]), ref::lift(in[2]));
        const double l21 = ref::ratio_triplet(ref::lift(in[2]), ref::lift(in[3]), ref::lift(in[0]));
        return 0.5 * (l12 + l21);
      },
      vs);
}

double check_sc_batch(Rng& rng) {
  const int N = 2 + rng.uniform_int(5);
  Tensor d = random_tensor({N, N}, rng, 0.5f, 3.0f);
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        return sc_batch_loss(tape, DistanceMatrix::from_tensor(in[0]));
      },
      [=](const std::vector<Tensor>& in) { return ref::sc_batch(ref::lift(in[0]), N); },
      {d});
}

// Full sampled path: feature map -> fixed-origin distance matrix -> loss.
double check_sc_batch_sampled(Rng& rng) {
  const int N = 2 + rng.uniform_int(3), H = 3 + rng.uniform_int(2), W = 3 + rng.uniform_int(2);
  const int C = 1 + rng.uniform_int(3);
  Tensor f = separated_tensor({N, H, W, C}, rng, 0.08f);
  SampleConfig cfg;
  cfg.patch_rows = 1 + rng.uniform_int(2);
  cfg.patch_cols = 1 + rng.uniform_int(2);
  Rng draw = rng.fork(99);
  FeatureMap fm{f};
  auto built = build_distance_matrix(nullptr, fm, cfg, draw);
  const auto anchors = built.anchors;
  const auto contrasts = built.contrasts;
  return gradcheck_max_rel_err(
      [=](Tape* tape, std::vector<Tensor>& in) {
        FeatureMap m{in[0]};
        DistanceMatrix dm = distance_matrix_from_origins(tape, m, anchors, contrasts, cfg);
        return sc_batch_loss(tape, dm);
      },
      [=](const std::vector<Tensor>& in) {
        return ref::sc_batch(ref::distance_matrix(ref::lift(in[0]), N, H, W, C, anchors, contrasts,
                                                  cfg.patch_rows, cfg.patch_cols,
                                                  cfg.normalize_features),
                             N);
      },
      {f});
}

}  // namespace

std::vector<GradCheckResult> run_gradcheck_suite(const std::string& module, uint64_t seed,
                                                 int cases_per_op) {
  const bool layers = module == "all" || module == "layers";
  const bool losses = module == "all" || module == "losses";
  if (!layers && !losses)
    throw ConfigError("gradcheck: unknown module '" + module + "' (want all|layers|losses)");

  Rng rng(seed, 7);
  std::vector<GradCheckResult> out;
  auto run = [&](const char* name, double tol, const std::function<double(Rng&)>& one_case) {
    out.push_back(
        GradCheckResult{name, worst_over_cases(cases_per_op, rng, one_case), tol, cases_per_op});
  };

  if (layers) {
    run("conv2d", 1e-4, check_conv2d);
    run("maxpool2d", 1e-4, check_maxpool2d);
    run("batchnorm", 1e-3, check_batchnorm);
    run("relu", 1e-4, [](Rng& r) { return check_leaky_relu(r, 0.0f); });
    run("leaky_relu", 1e-4, [](Rng& r) { return check_leaky_relu(r, 0.1f); });
    run("affine", 1e-4, check_affine);
    run("dropout", 1e-4, check_dropout);
    run("global_avg_pool", 1e-4, check_gap);
    run("log_softmax_cross_entropy", 1e-4, check_cross_entropy);
  }
  if (losses) {
    run("margin_triplet_loss", 1e-4, check_margin_triplet);
    run("ratio_triplet_loss", 1e-4, check_ratio_triplet);
    run("sc_pair_loss", 1e-4, check_sc_pair);
    run("sc_pair_loss_symmetric", 1e-4, check_sc_pair_symmetric);
    run("sc_batch_loss", 1e-4, check_sc_batch);
    run("sc_batch_loss_sampled", 1e-4, check_sc_batch_sampled);
  }
  return out;
}

}  // namespace sc
