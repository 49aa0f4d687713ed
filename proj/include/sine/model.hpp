#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sine/dataset.hpp"
#include "sine/rng.hpp"
#include "sine/tensor.hpp"

namespace sine {

constexpr double kLayerNormEps = 1e-8;

// How the K interest embeddings become ranking queries: `adaptive` follows
// the predicted next intention; `label_aware` selects by target similarity
// during training and retrieves per interest at inference.
enum class Aggregation { adaptive, label_aware };

Aggregation parse_aggregation(const std::string& name);

struct HyperParams {
  std::size_t K = 4;   // activated concepts per user
  std::size_t L = 50;  // conceptual prototype pool size
  std::size_t D = 128; // embedding dimension
  std::size_t n = 20;  // sequence window length
  double tau = 0.1;    // interest aggregation temperature
  double lambda = 0.5; // covariance regularizer weight
};

struct LayerNormParams {
  TensorPtr gain;
  TensorPtr bias;
};

// All trainable arrays of the sparse-interest encoder. H row 0 is the
// padding embedding and stays exactly zero through training.
struct ModelParams {
  HyperParams hp;
  std::size_t num_items = 0;  // M; H has M+1 rows

  TensorPtr H;          // (M+1) x D item embeddings
  TensorPtr C;          // L x D conceptual prototypes
  TensorPtr W1;         // D x D   concept-activation attention
  TensorPtr W2;         // D x 1
  TensorPtr W3_assign;  // D x D   intention assignment projection
  TensorPtr W3_agg;     // D x D   next-intention attention
  TensorPtr W4;         // D x 1
  std::vector<TensorPtr> Wk1;  // K of D x D, one attention per interest slot
  std::vector<TensorPtr> Wk2;  // K of D x 1
  TensorPtr pos;        // n x D positional table, shared across the K slots

  LayerNormParams ln1, ln2;  // intention assignment: frozen at gain 1 / bias 0
  LayerNormParams ln3, ln4;  // interest embeddings / next intention: learnable

  static ModelParams init(const HyperParams& hp, std::size_t num_items, std::uint64_t seed,
                          double init_std = 0.02);

  std::vector<std::pair<std::string, TensorPtr>> trainable() const;
  std::vector<std::pair<std::string, TensorPtr>> all_arrays() const;
  void zero_grad();
};

// Single-embedding comparator: the same self-attentive pooling the encoder
// uses for its virtual concept vector, applied to position-augmented inputs.
struct BaselineParams {
  std::size_t D = 0, n = 0;
  std::size_t num_items = 0;

  TensorPtr H;    // (M+1) x D
  TensorPtr W1;   // D x D
  TensorPtr W2;   // D x 1
  TensorPtr pos;  // n x D

  static BaselineParams init(std::size_t D, std::size_t n, std::size_t num_items,
                             std::uint64_t seed, double init_std = 0.02);

  std::vector<std::pair<std::string, TensorPtr>> trainable() const;
  std::vector<std::pair<std::string, TensorPtr>> all_arrays() const;
  void zero_grad();
};

// Every intermediate of one forward pass, kept for training, inspection and
// tests. All tensors stay attached to the tape that produced them.
struct InterestBundle {
  std::vector<std::size_t> concept_indices;  // K distinct rows of C, by descending score
  TensorPtr concept_scores;     // L x 1, affinity of every prototype to z
  TensorPtr attention;          // 1 x n, behavior attention (a)
  TensorPtr virtual_concept;    // 1 x D (z)
  TensorPtr gated_prototypes;   // K x D (C^u)
  TensorPtr assignment;         // n x K (P), masked rows zeroed
  TensorPtr position_attention; // K x n, one row per interest slot
  TensorPtr interests;          // K x D (Phi)
  TensorPtr next_intention;     // 1 x D (C_apt)
  TensorPtr weights;            // 1 x K (e)
  TensorPtr user_vector;        // 1 x D (v)
};

// What every encoder stage consumes: the position-free input rows X and
// their validity mask. Rows at masked positions are zero.
struct EncoderInput {
  TensorPtr X;  // n x D, rows at masked positions are zero
  Mask mask;
};

// --- individual encoder stages (exposed for unit tests) ---

// a = masked softmax(tanh(X W1) W2), z = a X.
std::pair<TensorPtr, TensorPtr> virtual_concept(Tape& tape, const ModelParams& p,
                                                const EncoderInput& in);

struct ConceptActivation {
  std::vector<std::size_t> indices;  // descending score, ties to the lower index
  TensorPtr scores;                  // L x 1
  TensorPtr gated;                   // K x D
};

// Scores every prototype against z, hard-selects the top K and gates the
// selected rows by sigmoid(score); gradients flow through rows and gate,
// the index set itself is a non-differentiable decision.
ConceptActivation activate_concepts(Tape& tape, const ModelParams& p, const TensorPtr& z);

// P[t,k] = softmax_k( LN1(X_t W3) . LN2(C_u_k) ); masked rows zeroed.
TensorPtr assign_intentions(Tape& tape, const ModelParams& p, const EncoderInput& in,
                            const TensorPtr& gated_prototypes);

// One self-attention over position-augmented inputs per interest slot k.
TensorPtr position_attention_row(Tape& tape, const ModelParams& p, const EncoderInput& in,
                                 std::size_t k);

// Phi[k] = LN3( sum_t P[t,k] * p_k[t] * X_t ).
TensorPtr interest_embeddings(Tape& tape, const ModelParams& p, const EncoderInput& in,
                              const TensorPtr& assignment, const TensorPtr& position_attn);

struct AggregateResult {
  TensorPtr next_intention;  // 1 x D
  TensorPtr weights;         // 1 x K
  TensorPtr user_vector;     // 1 x D
};

// Predicts the next intention from the intention sequence P C^u and combines
// the K interests under a temperature softmax.
AggregateResult aggregate(Tape& tape, const ModelParams& p, const EncoderInput& in,
                          const TensorPtr& interests, const TensorPtr& assignment,
                          const TensorPtr& gated_prototypes);

// Full composition over one window. Throws when every position is padding.
InterestBundle forward(Tape& tape, const ModelParams& p, const TrainWindow& window);

// Single-vector baseline encoder.
TensorPtr baseline_forward(Tape& tape, const BaselineParams& p, const TrainWindow& window);

// Builds the masked, position-free embedding rows for a window. Positional
// rows are assigned by recency (most recent real item -> pos row 0), so
// extra padding anywhere in the window cannot change any output.
EncoderInput embed_window(Tape& tape, const TensorPtr& H, const TrainWindow& window);
TensorPtr position_augmented(Tape& tape, const TensorPtr& X, const TensorPtr& pos,
                             const Mask& mask);

// Top-K selection used by activate_concepts: indices of the K largest
// entries, descending, ties broken toward the lower index.
std::vector<std::size_t> top_k_indices(const std::vector<double>& scores, std::size_t k);

}  // namespace sine
