#include "sine/model.hpp"

#include <algorithm>
#include <stdexcept>

namespace sine {

namespace {

TensorPtr normal_init(std::vector<std::size_t> shape, Rng& rng, double std_dev) {
  auto t = make_tensor(std::move(shape), true);
  for (double& v : t->values) v = rng.normal() * std_dev;
  return t;
}

TensorPtr const_tensor(std::vector<std::size_t> shape, double fill) {
  auto t = make_tensor(std::move(shape), false);
  std::fill(t->values.begin(), t->values.end(), fill);
  return t;
}

LayerNormParams learnable_ln(std::size_t d) {
  LayerNormParams ln;
  ln.gain = make_tensor({d}, true);
  std::fill(ln.gain->values.begin(), ln.gain->values.end(), 1.0);
  ln.bias = make_tensor({d}, true);
  return ln;
}

LayerNormParams frozen_ln(std::size_t d) {
  LayerNormParams ln;
  ln.gain = const_tensor({d}, 1.0);
  ln.bias = const_tensor({d}, 0.0);
  return ln;
}

}  // namespace

Aggregation parse_aggregation(const std::string& name) {
  if (name == "adaptive") return Aggregation::adaptive;
  if (name == "label_aware") return Aggregation::label_aware;
  throw std::invalid_argument("unknown aggregation mode '" + name +
                              "' (expected adaptive or label_aware)");
}

ModelParams ModelParams::init(const HyperParams& hp, std::size_t num_items, std::uint64_t seed,
                              double init_std) {
  if (hp.K == 0 || hp.K > hp.L) {
    throw std::invalid_argument("ModelParams: require 1 <= K <= L, got K=" +
                                std::to_string(hp.K) + " L=" + std::to_string(hp.L));
  }
  if (!(hp.tau > 0.0)) throw std::invalid_argument("ModelParams: tau must be positive");

  Rng rng(seed);
  ModelParams p;
  p.hp = hp;
  p.num_items = num_items;
  p.H = normal_init({num_items + 1, hp.D}, rng, init_std);
  for (std::size_t j = 0; j < hp.D; ++j) p.H->values[j] = 0.0;  // padding row
  // Prototype rows start wider than the other arrays: the concept scores
  // <C, z> need enough initial spread for the hard top-K selection to be
  // decisive, otherwise near-tied scores make the selected set thrash.
  p.C = normal_init({hp.L, hp.D}, rng, init_std * 5.0);
  p.W1 = normal_init({hp.D, hp.D}, rng, init_std);
  p.W2 = normal_init({hp.D, 1}, rng, init_std);
  p.W3_assign = normal_init({hp.D, hp.D}, rng, init_std);
  p.W3_agg = normal_init({hp.D, hp.D}, rng, init_std);
  p.W4 = normal_init({hp.D, 1}, rng, init_std);
  for (std::size_t k = 0; k < hp.K; ++k) {
    p.Wk1.push_back(normal_init({hp.D, hp.D}, rng, init_std));
    p.Wk2.push_back(normal_init({hp.D, 1}, rng, init_std));
  }
  p.pos = normal_init({hp.n, hp.D}, rng, init_std);
  p.ln1 = frozen_ln(hp.D);
  p.ln2 = frozen_ln(hp.D);
  p.ln3 = learnable_ln(hp.D);
  p.ln4 = learnable_ln(hp.D);
  return p;
}

std::vector<std::pair<std::string, TensorPtr>> ModelParams::trainable() const {
  std::vector<std::pair<std::string, TensorPtr>> out = {
      {"H", H},         {"C", C},           {"W1", W1},
      {"W2", W2},       {"W3_assign", W3_assign}, {"W3_agg", W3_agg},
      {"W4", W4},       {"pos", pos},       {"ln3.gain", ln3.gain},
      {"ln3.bias", ln3.bias}, {"ln4.gain", ln4.gain}, {"ln4.bias", ln4.bias},
  };
  for (std::size_t k = 0; k < Wk1.size(); ++k) {
    out.emplace_back("Wk1." + std::to_string(k), Wk1[k]);
    out.emplace_back("Wk2." + std::to_string(k), Wk2[k]);
  }
  return out;
}

std::vector<std::pair<std::string, TensorPtr>> ModelParams::all_arrays() const {
  auto out = trainable();
  out.emplace_back("ln1.gain", ln1.gain);
  out.emplace_back("ln1.bias", ln1.bias);
  out.emplace_back("ln2.gain", ln2.gain);
  out.emplace_back("ln2.bias", ln2.bias);
  return out;
}

void ModelParams::zero_grad() {
  for (auto& [name, t] : trainable()) t->zero_grad();
}

BaselineParams BaselineParams::init(std::size_t D, std::size_t n, std::size_t num_items,
                                    std::uint64_t seed, double init_std) {
  Rng rng(seed);
  BaselineParams p;
  p.D = D;
  p.n = n;
  p.num_items = num_items;
  p.H = normal_init({num_items + 1, D}, rng, init_std);
  for (std::size_t j = 0; j < D; ++j) p.H->values[j] = 0.0;
  p.W1 = normal_init({D, D}, rng, init_std);
  p.W2 = normal_init({D, 1}, rng, init_std);
  p.pos = normal_init({n, D}, rng, init_std);
  return p;
}

std::vector<std::pair<std::string, TensorPtr>> BaselineParams::trainable() const {
  return {{"H", H}, {"W1", W1}, {"W2", W2}, {"pos", pos}};
}

std::vector<std::pair<std::string, TensorPtr>> BaselineParams::all_arrays() const {
  return trainable();
}

void BaselineParams::zero_grad() {
  for (auto& [name, t] : trainable()) t->zero_grad();
}

std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k) {
  if (k > scores.size()) {
    throw std::invalid_argument("top_k_indices: k=" + std::to_string(k) + " exceeds " +
                                std::to_string(scores.size()) + " scores");
  }
  // Selection by repeated max keeps this independent of the sort-based
  // oracle the tests compare against.
  std::vector<std::size_t> picked;
  std::vector<std::uint8_t> used(scores.size(), 0);
  picked.reserve(k);
  for (std::size_t round = 0; round < k; ++round) {
    std::size_t best = scores.size();
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (used[i]) continue;
      if (best == scores.size() || scores[i] > scores[best]) best = i;
    }
    used[best] = 1;
    picked.push_back(best);
  }
  return picked;
}

EncoderInput embed_window(Tape& tape, const TensorPtr& H, const TrainWindow& window) {
  if (window.inputs.size() != window.mask.size()) {
    throw std::invalid_argument("embed_window: inputs/mask length mismatch");
  }
  EncoderInput in;
  in.X = tape.gather_rows(H, window.inputs);
  in.mask = window.mask;
  return in;
}

TensorPtr position_augmented(Tape& tape, const TensorPtr& X, const TensorPtr& pos,
                             const Mask& mask) {
  const std::size_t n = X->shape[0];
  // Positional rows by recency: the most recent real item gets row 0. Padding
  // positions reuse row 0 but are dropped by every mask downstream, so they
  // never contribute.
  std::vector<std::size_t> pos_rows(n, 0);
  std::size_t rank = 0;
  for (std::size_t i = n; i-- > 0;) {
    if (mask[i]) {
      if (rank >= pos->shape[0]) {
        throw std::invalid_argument("position_augmented: window has more real items than the " +
                                    std::to_string(pos->shape[0]) + "-row positional table");
      }
      pos_rows[i] = rank++;
    }
  }
  auto pos_slice = tape.gather_rows(pos, pos_rows);
  // Zero the padding rows of the positional slice so masked X rows stay zero.
  auto mask_col = make_tensor({n, 1});
  for (std::size_t i = 0; i < n; ++i) mask_col->values[i] = mask[i] ? 1.0 : 0.0;
  return tape.add(X, tape.hadamard_col(pos_slice, mask_col));
}

std::pair<TensorPtr, TensorPtr> virtual_concept(Tape& tape, const ModelParams& p,
                                                const EncoderInput& in) {
  auto logits = tape.matmul(tape.tanh(tape.matmul(in.X, p.W1)), p.W2);  // n x 1
  auto a = tape.softmax_rows(tape.transpose(logits), 1.0, &in.mask);    // 1 x n
  auto z = tape.matmul(a, in.X);                                        // 1 x D
  return {a, z};
}

ConceptActivation activate_concepts(Tape& tape, const ModelParams& p, const TensorPtr& z) {
  ConceptActivation act;
  act.scores = tape.matmul(p.C, tape.transpose(z));  // L x 1
  act.indices = top_k_indices(act.scores->values, p.hp.K);
  auto rows = tape.gather_rows(p.C, act.indices);                 // K x D
  auto gate = tape.sigmoid(tape.gather_rows(act.scores, act.indices));  // K x 1
  act.gated = tape.hadamard_col(rows, gate);
  return act;
}

TensorPtr assign_intentions(Tape& tape, const ModelParams& p, const EncoderInput& in,
                            const TensorPtr& gated_prototypes) {
  auto queries = tape.layer_norm(tape.matmul(in.X, p.W3_assign), p.ln1.gain, p.ln1.bias,
                                 kLayerNormEps);  // n x D
  auto keys = tape.layer_norm(gated_prototypes, p.ln2.gain, p.ln2.bias, kLayerNormEps);  // K x D
  auto logits = tape.matmul(queries, tape.transpose(keys));  // n x K
  auto assignment = tape.softmax_rows(logits, 1.0);
  const std::size_t n = in.X->shape[0];
  auto mask_col = make_tensor({n, 1});
  for (std::size_t i = 0; i < n; ++i) mask_col->values[i] = in.mask[i] ? 1.0 : 0.0;
  return tape.hadamard_col(assignment, mask_col);
}

TensorPtr position_attention_row(Tape& tape, const ModelParams& p, const EncoderInput& in,
                                 std::size_t k) {
  auto x_pos = position_augmented(tape, in.X, p.pos, in.mask);
  auto logits = tape.matmul(tape.tanh(tape.matmul(x_pos, p.Wk1[k])), p.Wk2[k]);  // n x 1
  return tape.softmax_rows(tape.transpose(logits), 1.0, &in.mask);               // 1 x n
}

TensorPtr interest_embeddings(Tape& tape, const ModelParams& p, const EncoderInput& in,
                              const TensorPtr& assignment, const TensorPtr& position_attn) {
  // Combined weight per position and slot: P[t,k] * p_k[t].
  auto combined = tape.hadamard(assignment, tape.transpose(position_attn));  // n x K
  auto pooled = tape.matmul(tape.transpose(combined), in.X);                 // K x D
  return tape.layer_norm(pooled, p.ln3.gain, p.ln3.bias, kLayerNormEps);
}

AggregateResult aggregate(Tape& tape, const ModelParams& p, const EncoderInput& in,
                          const TensorPtr& interests, const TensorPtr& assignment,
                          const TensorPtr& gated_prototypes) {
  auto intention_seq = tape.matmul(assignment, gated_prototypes);  // n x D
  auto logits = tape.matmul(tape.tanh(tape.matmul(intention_seq, p.W3_agg)), p.W4);  // n x 1
  auto attn = tape.softmax_rows(tape.transpose(logits), 1.0, &in.mask);              // 1 x n
  auto pooled = tape.matmul(attn, intention_seq);                                    // 1 x D
  AggregateResult agg;
  agg.next_intention = tape.layer_norm(pooled, p.ln4.gain, p.ln4.bias, kLayerNormEps);
  auto scores = tape.transpose(tape.matmul(interests, tape.transpose(agg.next_intention)));
  agg.weights = tape.softmax_rows(scores, p.hp.tau);  // 1 x K
  agg.user_vector = tape.matmul(agg.weights, interests);
  return agg;
}

InterestBundle forward(Tape& tape, const ModelParams& p, const TrainWindow& window) {
  auto in = embed_window(tape, p.H, window);

  InterestBundle b;
  auto [a, z] = virtual_concept(tape, p, in);
  b.attention = a;
  b.virtual_concept = z;

  auto act = activate_concepts(tape, p, z);
  b.concept_indices = act.indices;
  b.concept_scores = act.scores;
  b.gated_prototypes = act.gated;

  b.assignment = assign_intentions(tape, p, in, b.gated_prototypes);

  std::vector<TensorPtr> attn_rows;
  attn_rows.reserve(p.hp.K);
  for (std::size_t k = 0; k < p.hp.K; ++k) {
    attn_rows.push_back(position_attention_row(tape, p, in, k));
  }
  b.position_attention = tape.concat_rows(attn_rows);  // K x n

  b.interests = interest_embeddings(tape, p, in, b.assignment, b.position_attention);

  auto agg = aggregate(tape, p, in, b.interests, b.assignment, b.gated_prototypes);
  b.next_intention = agg.next_intention;
  b.weights = agg.weights;
  b.user_vector = agg.user_vector;
  return b;
}

TensorPtr baseline_forward(Tape& tape, const BaselineParams& p, const TrainWindow& window) {
  auto in = embed_window(tape, p.H, window);
  auto x_pos = position_augmented(tape, in.X, p.pos, in.mask);
  auto logits = tape.matmul(tape.tanh(tape.matmul(x_pos, p.W1)), p.W2);  // n x 1
  auto a = tape.softmax_rows(tape.transpose(logits), 1.0, &in.mask);     // 1 x n
  return tape.matmul(a, x_pos);                                          // 1 x D
}

}  // namespace sine
