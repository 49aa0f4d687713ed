#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sine/dataset.hpp"
#include "sine/eval.hpp"
#include "sine/model.hpp"
#include "sine/tensor.hpp"

namespace sine {

struct TrainConfig {
  std::size_t batch_size = 128;
  double learning_rate = 0.001;
  std::size_t negatives = 5;
  std::size_t epochs = 30;
  double lambda = 0.5;
  double tau = 0.1;
  std::size_t K = 4;
  std::size_t L = 50;
  std::size_t D = 128;
  std::size_t n = 20;
  std::uint64_t seed = 1;
  Aggregation aggregation = Aggregation::adaptive;

  std::size_t eval_every = 0;   // optimizer steps between validations; 0 = each epoch end
  std::size_t patience = 5;     // validation intervals without improvement before stopping
  std::size_t eval_cutoff = 50; // HR cutoff used for model selection
  std::size_t eval_users = 0;   // cap on validation users; 0 = all
  std::size_t max_windows_per_user = 0;  // most recent windows kept; 0 = all
  std::size_t threads = 1;      // validation workers

  void validate() const;
};

// One line per validation interval, stable field order.
struct TrainLogEntry {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double train_loss = 0.0;  // mean batch loss since the previous interval
  double val_hr = 0.0;
  double val_ndcg = 0.0;
  long long wall_seconds = 0;
};

std::string format_log_entry(const TrainLogEntry& e);

// Per-parameter Adam moments, lazily sized on the first step.
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
};

// Standard bias-corrected Adam over a parameter registry, consuming the
// gradients accumulated by the last backward pass.
void adam_step(const std::vector<std::pair<std::string, TensorPtr>>& params, AdamState& state,
               double learning_rate);

// --- loss terms ---

// -log( exp(h_target . v) / sum over {target} u negatives of exp(h_j . v) ).
TensorPtr sampled_softmax_loss(Tape& tape, const TensorPtr& user_vector, std::size_t target,
                               const std::vector<std::size_t>& negatives, const TensorPtr& H);

// Half the squared off-diagonal mass of the prototype row-covariance matrix
// M = (C - mean)(C - mean)^T / D, columns centered.
TensorPtr covariance_regularizer(Tape& tape, const TensorPtr& C);

struct TrainBatchItem {
  const TrainWindow* window;
  std::vector<std::size_t> negatives;
};

// Mean sampled-softmax loss over the batch plus lambda times the prototype
// covariance regularizer.
TensorPtr total_loss(Tape& tape, const ModelParams& params,
                     const std::vector<TrainBatchItem>& batch, Aggregation mode, double lambda);

// Hard selection of the interest most similar to the target embedding;
// training-time path of the label-aware ablation.
TensorPtr label_aware_aggregate(Tape& tape, const TensorPtr& interests,
                                const TensorPtr& target_embedding);

struct TrainResult {
  ModelParams params;  // best validation checkpoint (final params if never validated)
  std::vector<TrainLogEntry> log;
  double best_val_hr = 0.0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
};

struct BaselineTrainResult {
  BaselineParams params;
  std::vector<TrainLogEntry> log;
  double best_val_hr = 0.0;
  std::size_t best_step = 0;
  std::size_t steps = 0;
};

// Thrown when the loss turns non-finite; carries the abort diagnostics.
struct TrainAbort : std::runtime_error {
  explicit TrainAbort(const std::string& what) : std::runtime_error(what) {}
};

TrainResult train(const TrainConfig& config, const std::vector<UserSequence>& sequences,
                  std::size_t num_items);

BaselineTrainResult train_baseline(const TrainConfig& config,
                                   const std::vector<UserSequence>& sequences,
                                   std::size_t num_items);

ModelParams clone_params(const ModelParams& p);
BaselineParams clone_params(const BaselineParams& p);

}  // namespace sine
