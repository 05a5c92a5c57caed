#include "sc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "sc/error.hpp"
#include "sc/losses.hpp"

namespace sc {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::pretrain: return "pretrain";
    case Phase::finetune: return "finetune";
    case Phase::scratch: return "scratch";
  }
  return "?";
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (phase == Phase::pretrain && batch_size < 2)
    throw ConfigError("train: pretraining needs batch_size >= 2 (contrast undefined for N < 2)");
  if (!(lr_decay_factor > 0.0 && lr_decay_factor < 1.0))
    throw ConfigError("train: lr_decay_factor must be in (0,1)");
  if (plateau_patience < 1) throw ConfigError("train: plateau_patience must be >= 1");
  if (!(min_lr > 0.0) || initial_lr < min_lr)
    throw ConfigError("train: need 0 < min_lr <= initial_lr");
  if (!(momentum >= 0.0f && momentum < 1.0f)) throw ConfigError("train: momentum must be in [0,1)");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
  if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
}

void sgd_step(const std::vector<std::pair<std::string, Tensor>>& params, double lr, float momentum,
              std::unordered_map<std::string, Tensor>& velocity) {
  for (const auto& [name, p] : params) {
    Tensor param = p;
    auto it = velocity.find(name);
    if (it == velocity.end()) it = velocity.emplace(name, Tensor::zeros(param.shape())).first;
    Tensor v = it->second;
    if (v.shape() != param.shape())
      throw ShapeError("sgd_step: velocity shape " + shape_str(v.shape()) +
                       " does not match parameter '" + name + "' " + shape_str(param.shape()));
    float* vp = v.data();
    float* pp = param.data();
    const float* gp = param.grad();
    const int64_t n = param.numel();
    const float flr = static_cast<float>(lr);
    for (int64_t i = 0; i < n; ++i) {
      vp[i] = momentum * vp[i] + gp[i];
      pp[i] -= flr * vp[i];
    }
    check_finite(param, "sgd_step");
  }
}

double plateau_schedule(TrainState& state, double epoch_loss, const TrainConfig& cfg) {
  const bool improved =
      !state.best_seen || epoch_loss < state.best_loss - cfg.plateau_rel_tol * std::fabs(state.best_loss);
  if (improved) {
    state.best_loss = epoch_loss;
    state.best_seen = true;
    state.epochs_since_improvement = 0;
    return state.lr;
  }
  ++state.epochs_since_improvement;
  if (state.epochs_since_improvement >= cfg.plateau_patience) {
    state.epochs_since_improvement = 0;
    if (state.lr > cfg.min_lr * 1.0000001) {
      state.lr = std::max(state.lr * cfg.lr_decay_factor, cfg.min_lr);
    } else {
      state.stop_requested = true;  // converged: at the floor and still flat
    }
  }
  return state.lr;
}

namespace {

int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

struct RngStreams {
  Rng shuffle, sample, augment, dropout;
  explicit RngStreams(uint64_t seed)
      : shuffle(seed, 1), sample(seed, 2), augment(seed, 3), dropout(seed, 4) {}
};

}  // namespace

PretrainResult pretrain(Model& model, const Dataset& unlabeled, const TrainConfig& cfg,
                        const SampleConfig& sample_cfg, MetricsLog* log,
                        const std::string& checkpoint_path) {
  TrainConfig c = cfg;
  c.phase = Phase::pretrain;
  c.validate();
  if (unlabeled.size() < c.batch_size)
    throw Error("pretrain: dataset of " + std::to_string(unlabeled.size()) +
                " images yields no full batch of " + std::to_string(c.batch_size));

  RngStreams rngs(c.seed);
  auto trunk = model.trunk_parameters();
  std::unordered_map<std::string, Tensor> velocity;

  TrainState state;
  state.lr = c.initial_lr;
  PretrainResult result;

  for (int epoch = 1; epoch <= c.max_epochs; ++epoch) {
    const int64_t t0 = now_ms();
    state.epoch = epoch;
    auto batches = batch_indices(unlabeled.size(), c.batch_size, true, /*drop_last=*/true,
                                 rngs.shuffle);
    double loss_sum = 0.0;
    int64_t loss_count = 0;
    for (const auto& idx : batches) {
      if (static_cast<int>(idx.size()) < 2)
        throw Error("pretrain: batch of " + std::to_string(idx.size()) +
                    " images rejected (contrast undefined for N < 2)");
      Tensor x = gather_images(unlabeled, idx);
      if (c.augment.max_translate > 0 || c.augment.mirror) x = augment(x, c.augment, rngs.augment);

      Tape tape;
      Tensor loss;
      if (model.spec().multi_tap) {
        auto taps = forward_taps(model, &tape, x, Mode::train, &rngs.dropout);
        for (auto& tap : taps) {
          auto built = build_distance_matrix(&tape, tap, sample_cfg, rngs.sample);
          Tensor l = sc_batch_loss(&tape, built.dist);
          loss = loss.defined() ? add(&tape, loss, l) : l;
        }
      } else {
        FeatureMap fmap = forward_trunk(model, &tape, x, Mode::train, &rngs.dropout);
        auto built = build_distance_matrix(&tape, fmap, sample_cfg, rngs.sample);
        loss = sc_batch_loss(&tape, built.dist);
      }
      tape.backward(loss);
      sgd_step(trunk, state.lr, c.momentum, velocity);
      ++state.step;
      loss_sum += static_cast<double>(loss.value());
      ++loss_count;
    }
    const double mean_loss = loss_sum / static_cast<double>(loss_count);
    result.epoch_losses.push_back(mean_loss);
    const double logged_lr = state.lr;
    plateau_schedule(state, mean_loss, c);
    if (log)
      log->append(MetricsRecord{phase_name(Phase::pretrain), epoch, logged_lr, mean_loss,
                                std::nullopt, now_ms() - t0});
    if (state.stop_requested) break;
  }

  if (!checkpoint_path.empty()) {
    std::vector<std::pair<std::string, Tensor>> extra;
    for (const auto& [name, v] : velocity) extra.emplace_back("opt." + name + ".v", v);
    std::sort(extra.begin(), extra.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    save_checkpoint(checkpoint_path, checkpoint_from_model(model, extra));
    result.checkpoint_path = checkpoint_path;
  }
  return result;
}

FinetuneResult finetune(Model& model, const Checkpoint* init, bool resume, const Dataset& train_ds,
                        const Dataset& test_ds, const TrainConfig& cfg, MetricsLog* log,
                        const std::string& checkpoint_path) {
  TrainConfig c = cfg;
  if (c.phase == Phase::pretrain) c.phase = init ? Phase::finetune : Phase::scratch;
  c.validate();
  if (train_ds.size() == 0) throw Error("finetune: empty training dataset");
  if (!train_ds.labeled()) throw Error("finetune: training dataset has no labels");

  RngStreams rngs(c.seed);
  auto params = model.parameters();
  std::unordered_map<std::string, Tensor> velocity;

  if (init) {
    apply_checkpoint(model, *init, /*trunk_only=*/!resume);
    if (resume) {
      for (const auto& [name, t] : init->state) {
        if (name.rfind("opt.", 0) == 0 && name.size() > 6) {
          const std::string pname = name.substr(4, name.size() - 6);  // strip opt. / .v
          velocity.emplace(pname, t.clone());
        }
      }
    }
  }

  TrainState state;
  state.lr = c.initial_lr;
  FinetuneResult result;
  const char* phase = phase_name(c.phase);

  for (int epoch = 1; epoch <= c.max_epochs; ++epoch) {
    const int64_t t0 = now_ms();
    state.epoch = epoch;
    auto batches =
        batch_indices(train_ds.size(), c.batch_size, true, /*drop_last=*/false, rngs.shuffle);
    double loss_sum = 0.0;
    int64_t example_count = 0;
    for (const auto& idx : batches) {
      Tensor x = gather_images(train_ds, idx);
      std::vector<int> labels = gather_labels(train_ds, idx);
      if (c.augment.max_translate > 0 || c.augment.mirror) x = augment(x, c.augment, rngs.augment);

      Tape tape;
      Tensor logits = forward_full(model, &tape, x, Mode::train, &rngs.dropout);
      Tensor loss = log_softmax_cross_entropy(&tape, logits, labels);
      tape.backward(loss);
      sgd_step(params, state.lr, c.momentum, velocity);
      ++state.step;
      loss_sum += static_cast<double>(loss.value()) * static_cast<double>(idx.size());
      example_count += static_cast<int64_t>(idx.size());
    }
    const double mean_loss = loss_sum / static_cast<double>(example_count);
    result.epoch_losses.push_back(mean_loss);

    std::optional<double> acc;
    const double logged_lr = state.lr;
    plateau_schedule(state, mean_loss, c);
    const bool last = (epoch == c.max_epochs) || state.stop_requested;
    if (test_ds.size() > 0 && (epoch % c.eval_every == 0 || last)) {
      EvalResult ev = evaluate(model, test_ds);
      acc = ev.accuracy;
      result.final_test_accuracy = ev.accuracy;
    }
    if (log)
      log->append(
          MetricsRecord{phase, epoch, logged_lr, mean_loss, acc, now_ms() - t0});
    if (state.stop_requested) break;
  }

  if (!checkpoint_path.empty()) {
    std::vector<std::pair<std::string, Tensor>> extra;
    for (const auto& [name, v] : velocity) extra.emplace_back("opt." + name + ".v", v);
    std::sort(extra.begin(), extra.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    save_checkpoint(checkpoint_path, checkpoint_from_model(model, extra));
    result.checkpoint_path = checkpoint_path;
  }
  return result;
}

EvalResult evaluate(Model& model, const Dataset& ds, int batch_size) {
  if (ds.size() == 0) throw Error("evaluate: empty dataset");
  if (!ds.labeled()) throw Error("evaluate: dataset '" + ds.split + "' has no labels");

  Rng unused(0);
  double loss_sum = 0.0;
  int64_t correct = 0;
  auto batches = batch_indices(ds.size(), std::min(batch_size, ds.size()), false, false, unused);
  for (const auto& idx : batches) {
    Tensor x = gather_images(ds, idx);
    std::vector<int> labels = gather_labels(ds, idx);
    Tensor logits = forward_full(model, nullptr, x, Mode::eval, nullptr);
    Tensor loss = log_softmax_cross_entropy(nullptr, logits, labels);
    loss_sum += static_cast<double>(loss.value()) * static_cast<double>(idx.size());
    const int K = logits.dim(1);
    for (size_t r = 0; r < idx.size(); ++r) {
      const float* row = logits.data() + static_cast<int64_t>(r) * K;
      int best = 0;
      for (int k = 1; k < K; ++k)
        if (row[k] > row[best]) best = k;  // strict: ties keep the lowest index
      if (best == labels[r]) ++correct;
    }
  }
  EvalResult out;
  out.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  out.mean_loss = loss_sum / static_cast<double>(ds.size());
  return out;
}

}  // namespace sc
