#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sine/dataset.hpp"
#include "sine/train.hpp"

namespace sine {

// Flat key=value configuration with '#' comments. Unknown keys are rejected;
// every run echoes the fully resolved configuration (defaults included) into
// its output directory so the run can be reproduced bit-for-bit.
struct RunConfig {
  // data
  std::string data;
  std::string labels;
  std::size_t min_user_len = 3;

  // model
  std::string model = "sine";  // sine | baseline
  std::size_t K = 4, L = 50, D = 128, n = 20;
  double tau = 0.1;
  double lambda = 0.5;

  // training
  std::size_t batch_size = 128;
  double learning_rate = 0.001;
  std::size_t negatives = 5;
  std::size_t epochs = 30;
  std::string aggregation = "adaptive";  // adaptive | label_aware
  std::size_t eval_every = 0;
  std::size_t patience = 5;
  std::size_t eval_cutoff = 50;
  std::size_t eval_users = 0;
  std::size_t max_windows_per_user = 0;

  // evaluation / retrieval
  std::vector<std::size_t> cutoffs{10, 50};
  std::string checkpoint;

  // synthetic corpus generation
  std::size_t synth_users = 1000;
  std::size_t synth_items = 500;
  std::size_t synth_intents = 16;
  std::size_t synth_intents_per_user = 4;
  std::size_t synth_seq_len = 20;
  double synth_pop_exponent = 1.0;

  // run
  std::string out = "out";
  std::uint64_t seed = 1;
  std::size_t threads = 1;

  static RunConfig from_file(const std::string& path);

  // "key=value" (config file line or command-line override).
  void apply(const std::string& assignment, const std::string& context);

  // Full key=value echo in fixed order.
  std::string resolved() const;

  TrainConfig train_config() const;
  SyntheticSpec synthetic_spec() const;
};

}  // namespace sine
