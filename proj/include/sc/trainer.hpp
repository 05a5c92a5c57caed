#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sc/checkpoint.hpp"
#include "sc/data.hpp"
#include "sc/metrics.hpp"
#include "sc/models.hpp"
#include "sc/sampler.hpp"

namespace sc {

enum class Phase { pretrain, finetune, scratch };

const char* phase_name(Phase p);

struct TrainConfig {
  Phase phase = Phase::pretrain;
  int batch_size = 32;
  double initial_lr = 0.1;      // 0.01 for the supervised phase
  double lr_decay_factor = 0.1; // divide by 10 on plateau
  int plateau_patience = 3;     // epochs without improvement before decay
  double plateau_rel_tol = 1e-3;
  double min_lr = 1e-5;
  float momentum = 0.9f;
  int max_epochs = 10;
  uint64_t seed = 1;
  int eval_every = 1;  // supervised phase: evaluate test accuracy every k epochs
  AugmentConfig augment;

  void validate() const;
};

struct TrainState {
  int epoch = 0;
  int64_t step = 0;
  double lr = 0.0;
  double best_loss = 0.0;
  bool best_seen = false;
  int epochs_since_improvement = 0;
  bool stop_requested = false;  // min_lr reached and one further plateau
};

// v <- momentum*v + g; p <- p - lr*v. Velocity tensors are created lazily.
void sgd_step(const std::vector<std::pair<std::string, Tensor>>& params, double lr, float momentum,
              std::unordered_map<std::string, Tensor>& velocity);

// Divides lr by 10 after plateau_patience consecutive epochs without an
// improvement of at least rel_tol*|best|; at min_lr a further plateau
// requests a stop. Returns the (possibly decayed) learning rate.
double plateau_schedule(TrainState& state, double epoch_loss, const TrainConfig& cfg);

struct PretrainResult {
  std::vector<double> epoch_losses;
  std::string checkpoint_path;
};

// SC pretraining: trunk forward, distance matrix, batch loss, SGD on the
// trunk parameters only. Writes a checkpoint at the end when a path is given.
PretrainResult pretrain(Model& model, const Dataset& unlabeled, const TrainConfig& cfg,
                        const SampleConfig& sample_cfg, MetricsLog* log = nullptr,
                        const std::string& checkpoint_path = "");

struct EvalResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

struct FinetuneResult {
  std::vector<double> epoch_losses;
  double final_test_accuracy = 0.0;
  std::string checkpoint_path;
};

// Supervised training. `init` restores trunk weights from a pretraining
// checkpoint (head stays fresh); `resume` restores everything including
// optimizer velocity.
FinetuneResult finetune(Model& model, const Checkpoint* init, bool resume, const Dataset& train_ds,
                        const Dataset& test_ds, const TrainConfig& cfg, MetricsLog* log = nullptr,
                        const std::string& checkpoint_path = "");

// Eval-mode forward; accuracy by argmax with ties broken toward the lowest
// class index.
EvalResult evaluate(Model& model, const Dataset& ds, int batch_size = 256);

}  // namespace sc
