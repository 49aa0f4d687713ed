#include "sine/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>

namespace sine {

namespace {

TensorPtr clone_tensor(const TensorPtr& t) {
  auto out = make_tensor(t->shape, t->requires_grad);
  out->values = t->values;
  return out;
}

double max_abs_grad(const std::vector<std::pair<std::string, TensorPtr>>& params) {
  double worst = 0.0;
  for (const auto& [name, p] : params) {
    for (double g : p->grad) worst = std::max(worst, std::abs(g));
  }
  return worst;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
  if (epochs == 0) throw std::invalid_argument("epochs must be positive");
  if (lambda < 0.0 || lambda > 1.0) throw std::invalid_argument("lambda must lie in [0, 1]");
  if (!(tau > 0.0)) throw std::invalid_argument("tau must be positive");
  if (K == 0 || K > L) throw std::invalid_argument("require 1 <= K <= L");
  if (n == 0) throw std::invalid_argument("n must be positive");
}

std::string format_log_entry(const TrainLogEntry& e) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << e.step << ' ' << e.epoch << ' ' << e.train_loss << ' ' << e.val_hr << ' '
     << e.val_ndcg << ' ' << e.wall_seconds;
  return os.str();
}

void adam_step(const std::vector<std::pair<std::string, TensorPtr>>& params, AdamState& state,
               double learning_rate) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].second->size(), 0.0);
      state.v[i].assign(params[i].second->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::logic_error("adam_step: state tracks a different parameter registry");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i].second;
    if (!p.requires_grad) continue;
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = p.grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p.values[j] -= learning_rate * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

TensorPtr sampled_softmax_loss(Tape& tape, const TensorPtr& user_vector, std::size_t target,
                               const std::vector<std::size_t>& negatives, const TensorPtr& H) {
  for (std::size_t neg : negatives) {
    if (neg == target) {
      throw std::logic_error("sampled_softmax_loss: target " + std::to_string(target) +
                             " appears among the negatives");
    }
  }
  std::vector<std::size_t> candidates;
  candidates.reserve(negatives.size() + 1);
  candidates.push_back(target);
  candidates.insert(candidates.end(), negatives.begin(), negatives.end());
  auto rows = tape.gather_rows(H, candidates);                        // J x D
  auto scores = tape.transpose(tape.matmul(rows, tape.transpose(user_vector)));  // 1 x J
  return tape.softmax_xent(scores, 0);
}

TensorPtr covariance_regularizer(Tape& tape, const TensorPtr& C) {
  const std::size_t rows = C->shape[0], d = C->shape[1];
  if (rows < 2) throw std::invalid_argument("covariance_regularizer: need at least 2 prototypes");

  auto ones_row = make_tensor({1, rows});
  std::fill(ones_row->values.begin(), ones_row->values.end(), 1.0);
  auto ones_col = make_tensor({rows, 1});
  std::fill(ones_col->values.begin(), ones_col->values.end(), 1.0);

  auto col_mean = tape.scale(tape.matmul(ones_row, C), 1.0 / static_cast<double>(rows));  // 1 x D
  auto centered = tape.add(C, tape.scale(tape.matmul(ones_col, col_mean), -1.0));         // L x D
  auto cov = tape.scale(tape.matmul(centered, tape.transpose(centered)),
                        1.0 / static_cast<double>(d));  // L x L

  // Off-diagonal selector; the diagonal never contributes to the penalty.
  auto off_diag = make_tensor({rows, rows});
  std::fill(off_diag->values.begin(), off_diag->values.end(), 1.0);
  for (std::size_t i = 0; i < rows; ++i) off_diag->values[i * rows + i] = 0.0;

  return tape.scale(tape.sum(tape.hadamard(tape.hadamard(cov, cov), off_diag)), 0.5);
}

TensorPtr label_aware_aggregate(Tape& tape, const TensorPtr& interests,
                                const TensorPtr& target_embedding) {
  const std::size_t k_count = interests->shape[0], d = interests->shape[1];
  if (target_embedding->size() != d) {
    throw std::invalid_argument("label_aware_aggregate: dimension mismatch");
  }
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < k_count; ++k) {
    double score = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      score += interests->values[k * d + j] * target_embedding->values[j];
    }
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return tape.gather_rows(interests, {best});  // 1 x D
}

TensorPtr total_loss(Tape& tape, const ModelParams& params,
                     const std::vector<TrainBatchItem>& batch, Aggregation mode, double lambda) {
  if (batch.empty()) throw std::invalid_argument("total_loss: empty batch");
  TensorPtr acc;
  for (const auto& item : batch) {
    const InterestBundle bundle = forward(tape, params, *item.window);
    TensorPtr v = bundle.user_vector;
    if (mode == Aggregation::label_aware) {
      auto target_row = tape.gather_rows(params.H, {item.window->target});
      v = label_aware_aggregate(tape, bundle.interests, target_row);
    }
    auto loss = sampled_softmax_loss(tape, v, item.window->target, item.negatives, params.H);
    acc = acc ? tape.add(acc, loss) : loss;
  }
  auto mean = tape.scale(acc, 1.0 / static_cast<double>(batch.size()));
  // A single prototype has no off-diagonal covariance; the penalty is
  // identically zero below L = 2.
  if (lambda == 0.0 || params.C->shape[0] < 2) return mean;
  return tape.add(mean, tape.scale(covariance_regularizer(tape, params.C), lambda));
}

ModelParams clone_params(const ModelParams& p) {
  ModelParams out;
  out.hp = p.hp;
  out.num_items = p.num_items;
  out.H = clone_tensor(p.H);
  out.C = clone_tensor(p.C);
  out.W1 = clone_tensor(p.W1);
  out.W2 = clone_tensor(p.W2);
  out.W3_assign = clone_tensor(p.W3_assign);
  out.W3_agg = clone_tensor(p.W3_agg);
  out.W4 = clone_tensor(p.W4);
  for (const auto& w : p.Wk1) out.Wk1.push_back(clone_tensor(w));
  for (const auto& w : p.Wk2) out.Wk2.push_back(clone_tensor(w));
  out.pos = clone_tensor(p.pos);
  out.ln1 = {clone_tensor(p.ln1.gain), clone_tensor(p.ln1.bias)};
  out.ln2 = {clone_tensor(p.ln2.gain), clone_tensor(p.ln2.bias)};
  out.ln3 = {clone_tensor(p.ln3.gain), clone_tensor(p.ln3.bias)};
  out.ln4 = {clone_tensor(p.ln4.gain), clone_tensor(p.ln4.bias)};
  return out;
}

BaselineParams clone_params(const BaselineParams& p) {
  BaselineParams out;
  out.D = p.D;
  out.n = p.n;
  out.num_items = p.num_items;
  out.H = clone_tensor(p.H);
  out.W1 = clone_tensor(p.W1);
  out.W2 = clone_tensor(p.W2);
  out.pos = clone_tensor(p.pos);
  return out;
}

namespace {

std::vector<TrainWindow> collect_windows(const TrainConfig& cfg,
                                         const std::vector<UserSequence>& sequences) {
  std::vector<TrainWindow> windows;
  for (const auto& seq : sequences) {
    auto user_windows = make_train_windows(seq, cfg.n);
    if (cfg.max_windows_per_user > 0 && user_windows.size() > cfg.max_windows_per_user) {
      user_windows.erase(user_windows.begin(),
                         user_windows.end() - static_cast<std::ptrdiff_t>(cfg.max_windows_per_user));
    }
    for (auto& w : user_windows) windows.push_back(std::move(w));
  }
  return windows;
}

// The loop shared by both models. BuildLoss maps a batch to the scalar loss
// on a fresh tape; PostStep runs after every optimizer step (padding-row
// re-zero); the remaining hooks handle validation and checkpointing.
template <typename BuildLoss, typename Registry, typename PostStep, typename Validate,
          typename Snapshot>
std::vector<TrainLogEntry> training_loop(const TrainConfig& cfg,
                                         const std::vector<TrainWindow>& windows,
                                         std::size_t num_items, const BuildLoss& build_loss,
                                         const Registry& registry, const PostStep& post_step,
                                         const Validate& validate, const Snapshot& snapshot,
                                         std::size_t& steps_out) {
  if (windows.empty()) throw std::invalid_argument("train: no training windows");
  if (cfg.negatives + 1 > num_items) {
    throw std::domain_error("train: " + std::to_string(cfg.negatives) +
                            " negatives need more than " + std::to_string(num_items) + " items");
  }

  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 0x2545f4914f6cdd1dULL);
  AdamState adam;
  std::vector<TrainLogEntry> log;

  std::vector<std::size_t> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  const auto started = std::chrono::steady_clock::now();
  std::size_t step = 0;
  double interval_loss = 0.0;
  std::size_t interval_batches = 0;
  double best_hr = -1.0;
  std::size_t intervals_since_best = 0;
  bool stop = false;

  auto run_validation = [&](std::size_t epoch) {
    const std::optional<std::pair<double, double>> metrics = validate();
    TrainLogEntry entry;
    entry.step = step;
    entry.epoch = epoch;
    entry.train_loss = interval_batches > 0 ? interval_loss / interval_batches : 0.0;
    entry.val_hr = metrics ? metrics->first : 0.0;
    entry.val_ndcg = metrics ? metrics->second : 0.0;
    entry.wall_seconds = static_cast<long long>(std::chrono::duration<double>(
        std::chrono::steady_clock::now() - started).count());
    log.push_back(entry);
    interval_loss = 0.0;
    interval_batches = 0;
    // Without holdout users there is nothing to select on: no best
    // checkpoint, no early stopping.
    if (!metrics) return;
    if (metrics->first > best_hr) {
      best_hr = metrics->first;
      intervals_since_best = 0;
      snapshot(metrics->first, step);
    } else if (++intervals_since_best >= cfg.patience) {
      stop = true;
    }
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    rng.shuffle(order);
    for (std::size_t begin = 0; begin < order.size() && !stop; begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      std::vector<TrainBatchItem> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) {
        const TrainWindow& w = windows[order[i]];
        batch.push_back({&w, sample_negatives(w.target, cfg.negatives, num_items, rng)});
      }

      Tape tape;
      TensorPtr loss = build_loss(tape, batch);
      tape.backward(loss);
      const double loss_value = loss->values[0];
      if (!std::isfinite(loss_value)) {
        std::ostringstream os;
        os << "training aborted: non-finite loss at step " << step + 1 << " (lr "
           << cfg.learning_rate << ", max |grad| " << max_abs_grad(registry()) << ")";
        throw TrainAbort(os.str());
      }
      adam_step(registry(), adam, cfg.learning_rate);
      post_step();
      for (auto& [name, p] : registry()) p->zero_grad();
      interval_loss += loss_value;
      ++interval_batches;
      ++step;

      if (cfg.eval_every > 0 && step % cfg.eval_every == 0) run_validation(epoch);
    }
    if (cfg.eval_every == 0 && !stop) run_validation(epoch);
  }
  steps_out = step;
  return log;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<UserSequence>& sequences,
                  std::size_t num_items) {
  cfg.validate();
  const auto windows = collect_windows(cfg, sequences);

  HyperParams hp{cfg.K, cfg.L, cfg.D, cfg.n, cfg.tau, cfg.lambda};
  TrainResult result;
  ModelParams params = ModelParams::init(hp, num_items, cfg.seed);
  result.params = clone_params(params);

  auto registry_fn = [&params]() { return params.trainable(); };
  auto build_loss = [&](Tape& tape, const std::vector<TrainBatchItem>& batch) {
    auto loss = total_loss(tape, params, batch, cfg.aggregation, cfg.lambda);
    return loss;
  };
  auto validate = [&]() -> std::optional<std::pair<double, double>> {
    ItemIndex index(*params.H, num_items);
    // Validation metrics use the adaptive query even in label-aware training
    // runs; the merged-retrieval path is the test-time contract.
    const auto encoder = sine_encoder(params, Aggregation::adaptive);
    const auto report = evaluate(index, encoder, sequences, cfg.n, {cfg.eval_cutoff},
                                 Split::valid, cfg.threads, cfg.eval_users);
    if (report.users == 0) return std::nullopt;
    return std::pair{report.hr[0], report.ndcg[0]};
  };
  auto snapshot = [&](double hr, std::size_t step) {
    result.params = clone_params(params);
    result.best_val_hr = hr;
    result.best_step = step;
  };
  auto post_step = [&params]() {
    for (std::size_t j = 0; j < params.hp.D; ++j) params.H->values[j] = 0.0;
  };

  result.log = training_loop(cfg, windows, num_items, build_loss, registry_fn, post_step,
                             validate, snapshot, result.steps);
  if (result.best_step == 0 && result.best_val_hr == 0.0) result.params = clone_params(params);
  return result;
}

BaselineTrainResult train_baseline(const TrainConfig& cfg,
                                   const std::vector<UserSequence>& sequences,
                                   std::size_t num_items) {
  cfg.validate();
  const auto windows = collect_windows(cfg, sequences);

  BaselineTrainResult result;
  BaselineParams params = BaselineParams::init(cfg.D, cfg.n, num_items, cfg.seed);
  result.params = clone_params(params);

  auto registry_fn = [&params]() { return params.trainable(); };
  auto build_loss = [&](Tape& tape, const std::vector<TrainBatchItem>& batch) {
    TensorPtr acc;
    for (const auto& item : batch) {
      auto v = baseline_forward(tape, params, *item.window);
      auto loss = sampled_softmax_loss(tape, v, item.window->target, item.negatives, params.H);
      acc = acc ? tape.add(acc, loss) : loss;
    }
    return tape.scale(acc, 1.0 / static_cast<double>(batch.size()));
  };
  auto validate = [&]() -> std::optional<std::pair<double, double>> {
    ItemIndex index(*params.H, num_items);
    const auto encoder = baseline_encoder(params);
    const auto report = evaluate(index, encoder, sequences, cfg.n, {cfg.eval_cutoff},
                                 Split::valid, cfg.threads, cfg.eval_users);
    if (report.users == 0) return std::nullopt;
    return std::pair{report.hr[0], report.ndcg[0]};
  };
  auto snapshot = [&](double hr, std::size_t step) {
    result.params = clone_params(params);
    result.best_val_hr = hr;
    result.best_step = step;
  };
  auto post_step = [&params]() {
    for (std::size_t j = 0; j < params.D; ++j) params.H->values[j] = 0.0;
  };

  result.log = training_loop(cfg, windows, num_items, build_loss, registry_fn, post_step,
                             validate, snapshot, result.steps);
  if (result.best_step == 0 && result.best_val_hr == 0.0) result.params = clone_params(params);
  return result;
}

}  // namespace sine
