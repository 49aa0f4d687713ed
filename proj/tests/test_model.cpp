#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "sine/model.hpp"
#include "sine/rng.hpp"

using namespace sine;

namespace {

HyperParams tiny_hp(std::size_t K, std::size_t L, std::size_t D, std::size_t n,
                    double tau = 0.1) {
  return HyperParams{K, L, D, n, tau, 0.5};
}

TrainWindow window_of(std::vector<std::size_t> inputs, Mask mask, std::size_t target = 1) {
  TrainWindow w;
  w.inputs = std::move(inputs);
  w.mask = std::move(mask);
  w.target = target;
  return w;
}

// Straight-line layer norm used by the recomputation oracles.
std::vector<double> ln_row(const std::vector<double>& x, const std::vector<double>& gain,
                           const std::vector<double>& bias, double eps) {
  const std::size_t d = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= d;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= d;
  std::vector<double> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    out[j] = gain[j] * (x[j] - mean) / std::sqrt(var + eps) + bias[j];
  }
  return out;
}

double entropy(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

}  // namespace

TEST_CASE("virtual_concept: single item and identical rows") {
  auto params = ModelParams::init(tiny_hp(2, 4, 6, 3), 8, 42);
  Tape tape;
  auto in1 = embed_window(tape, params.H, window_of({kPaddingItem, kPaddingItem, 5}, {0, 0, 1}));
  auto [a1, z1] = virtual_concept(tape, params, in1);
  CHECK(a1->values[2] == 1.0);
  for (std::size_t j = 0; j < 6; ++j) {
    CHECK(z1->values[j] == params.H->at(5, j));
  }

  auto in2 = embed_window(tape, params.H, window_of({3, 3, kPaddingItem}, {1, 1, 0}));
  auto [a2, z2] = virtual_concept(tape, params, in2);
  CHECK(a2->values[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a2->values[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(a2->values[2] == 0.0);
}

TEST_CASE("virtual_concept: attention sums to 1, z lies in the row space of X") {
  Rng rng(5);
  auto params = ModelParams::init(tiny_hp(2, 4, 5, 4), 10, 17);
  for (int trial = 0; trial < 50; ++trial) {
    Tape tape;
    std::vector<std::size_t> items;
    for (int i = 0; i < 4; ++i) items.push_back(1 + rng.below(10));
    auto in = embed_window(tape, params.H, window_of(items, {1, 1, 1, 1}));
    auto [a, z] = virtual_concept(tape, params, in);
    double sum = 0.0;
    for (double v : a->values) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-12);
    // Direct recomputation: z_j = sum_t a_t X_tj.
    for (std::size_t j = 0; j < 5; ++j) {
      double direct = 0.0;
      for (std::size_t t = 0; t < 4; ++t) direct += a->values[t] * in.X->at(t, j);
      CHECK(std::abs(z->values[j] - direct) < 1e-12);
    }
  }
}

TEST_CASE("virtual_concept: all-padding window is rejected") {
  auto params = ModelParams::init(tiny_hp(1, 2, 4, 2), 5, 3);
  Tape tape;
  auto in = embed_window(tape, params.H, window_of({kPaddingItem, kPaddingItem}, {0, 0}));
  CHECK_THROWS_AS(virtual_concept(tape, params, in), std::domain_error);
}

TEST_CASE("top_k_indices: forced ranking and exhaustive case") {
  CHECK(top_k_indices({0.9, 0.1, 0.5}, 2) == std::vector<std::size_t>{0, 2});

  const auto full = top_k_indices({0.3, 0.9, 0.1, 0.5}, 4);
  std::set<std::size_t> unique(full.begin(), full.end());
  CHECK(unique.size() == 4);
  CHECK(full == std::vector<std::size_t>{1, 3, 0, 2});
}

TEST_CASE("top_k_indices: matches a full-sort oracle with ties to the lower index") {
  Rng rng(101);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t l = 2 + rng.below(20);
    const std::size_t k = 1 + rng.below(l);
    std::vector<double> scores(l);
    // Coarse grid so ties happen often.
    for (double& s : scores) s = static_cast<double>(rng.below(5));

    std::vector<std::size_t> oracle(l);
    for (std::size_t i = 0; i < l; ++i) oracle[i] = i;
    std::sort(oracle.begin(), oracle.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    });
    oracle.resize(k);
    CHECK(top_k_indices(scores, k) == oracle);
  }
}

TEST_CASE("activate_concepts: gate scales gathered rows by sigmoid of the score") {
  auto params = ModelParams::init(tiny_hp(2, 4, 3, 2), 6, 11);
  Tape tape;
  auto in = embed_window(tape, params.H, window_of({2, 4}, {1, 1}));
  auto [a, z] = virtual_concept(tape, params, in);
  auto act = activate_concepts(tape, params, z);

  CHECK(act.indices.size() == 2);
  CHECK(act.indices[0] != act.indices[1]);
  for (std::size_t k = 0; k < 2; ++k) {
    const double s = act.scores->values[act.indices[k]];
    const double gate = 1.0 / (1.0 + std::exp(-s));
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(act.gated->at(k, j) ==
            doctest::Approx(params.C->at(act.indices[k], j) * gate).epsilon(1e-12));
    }
  }
}

TEST_CASE("assign_intentions: single concept and identical prototypes") {
  auto params1 = ModelParams::init(tiny_hp(1, 2, 4, 3), 6, 7);
  Tape tape;
  auto in = embed_window(tape, params1.H, window_of({2, 3, kPaddingItem}, {1, 1, 0}));
  auto cu1 = make_tensor({1, 4}, {0.3, -0.1, 0.8, 0.2});
  auto p1 = assign_intentions(tape, params1, in, cu1);
  CHECK(p1->at(0, 0) == 1.0);
  CHECK(p1->at(1, 0) == 1.0);
  CHECK(p1->at(2, 0) == 0.0);  // masked row zeroed

  auto params2 = ModelParams::init(tiny_hp(2, 4, 4, 3), 6, 7);
  auto cu2 = make_tensor({2, 4}, {0.3, -0.1, 0.8, 0.2, 0.3, -0.1, 0.8, 0.2});
  auto p2 = assign_intentions(tape, params2, in, cu2);
  CHECK(p2->at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p2->at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("assign_intentions: row scale invariance (cosine robustness)") {
  auto params = ModelParams::init(tiny_hp(2, 4, 5, 3), 9, 23);
  Rng rng(31);
  auto cu = make_tensor({2, 5});
  for (double& v : cu->values) v = rng.normal();

  // Working-magnitude projection and inputs keep the normalization eps
  // negligible against the row variance; the invariance bound assumes that.
  for (double& v : params.W3_assign->values) v = rng.normal();
  auto x = make_tensor({3, 5});
  for (double& v : x->values) v = rng.normal() * 2.0;
  auto x_scaled = make_tensor({3, 5});
  x_scaled->values = x->values;
  for (std::size_t j = 0; j < 5; ++j) x_scaled->at(1, j) *= 5.0;

  Tape tape;
  EncoderInput in{x, {1, 1, 1}};
  EncoderInput in_scaled{x_scaled, {1, 1, 1}};
  auto p = assign_intentions(tape, params, in, cu);
  auto p_scaled = assign_intentions(tape, params, in_scaled, cu);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(std::abs(p->at(1, k) - p_scaled->at(1, k)) < 1e-9);
  }
}

TEST_CASE("position_attention: single position, masking, duplicates") {
  auto params = ModelParams::init(tiny_hp(2, 4, 4, 3), 7, 13);
  Tape tape;
  auto in1 = embed_window(tape, params.H, window_of({kPaddingItem, kPaddingItem, 4}, {0, 0, 1}));
  auto p1 = position_attention_row(tape, params, in1, 0);
  CHECK(p1->values[2] == 1.0);
  CHECK(p1->values[0] == 0.0);

  // Zero positional table plus duplicate rows: uniform over the duplicates.
  std::fill(params.pos->values.begin(), params.pos->values.end(), 0.0);
  auto in2 = embed_window(tape, params.H, window_of({5, 5, kPaddingItem}, {1, 1, 0}));
  auto p2 = position_attention_row(tape, params, in2, 1);
  CHECK(p2->values[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p2->values[1] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(p2->values[2] == 0.0);
}

TEST_CASE("interest_embeddings: weights collapse at n=1, K=1") {
  auto params = ModelParams::init(tiny_hp(1, 2, 5, 1), 4, 19);
  Tape tape;
  auto in = embed_window(tape, params.H, window_of({3}, {1}));
  auto assignment = make_tensor({1, 1}, std::vector<double>{1.0});
  auto attn = make_tensor({1, 1}, std::vector<double>{1.0});
  auto phi = interest_embeddings(tape, params, in, assignment, attn);

  std::vector<double> x_row(5);
  for (std::size_t j = 0; j < 5; ++j) x_row[j] = in.X->at(0, j);
  const auto expect = ln_row(x_row, params.ln3.gain->values, params.ln3.bias->values,
                             kLayerNormEps);
  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(phi->values[j] == doctest::Approx(expect[j]).epsilon(1e-12));
  }
}

TEST_CASE("forward: recomputation oracle for interests and aggregation") {
  auto params = ModelParams::init(tiny_hp(3, 6, 7, 5, 0.25), 12, 29);
  Tape tape;
  auto w = window_of({kPaddingItem, 2, 7, 4, 9}, {0, 1, 1, 1, 1}, 5);
  const auto bundle = forward(tape, params, w);

  const std::size_t K = 3, D = 7, n = 5;

  // Phi[k] = LN3( sum_t P[t,k] * p_k[t] * X_t ), straight-line.
  Tape scratch;
  auto in = embed_window(scratch, params.H, w);
  for (std::size_t k = 0; k < K; ++k) {
    std::vector<double> pooled(D, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      const double weight = bundle.assignment->at(t, k) * bundle.position_attention->at(k, t);
      for (std::size_t j = 0; j < D; ++j) pooled[j] += weight * in.X->at(t, j);
    }
    const auto expect = ln_row(pooled, params.ln3.gain->values, params.ln3.bias->values,
                               kLayerNormEps);
    for (std::size_t j = 0; j < D; ++j) {
      CHECK(std::abs(bundle.interests->at(k, j) - expect[j]) < 1e-12);
    }
  }

  // e = softmax(Phi C_apt / tau); v = sum_k e_k Phi_k.
  std::vector<double> scores(K);
  double mx = -1e300;
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) {
      s += bundle.interests->at(k, j) * bundle.next_intention->values[j];
    }
    scores[k] = s;
    mx = std::max(mx, s);
  }
  double denom = 0.0;
  for (double s : scores) denom += std::exp((s - mx) / 0.25);
  double weight_sum = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const double e_k = std::exp((scores[k] - mx) / 0.25) / denom;
    CHECK(std::abs(bundle.weights->values[k] - e_k) < 1e-12);
    weight_sum += bundle.weights->values[k];
  }
  CHECK(std::abs(weight_sum - 1.0) < 1e-12);
  for (std::size_t j = 0; j < D; ++j) {
    double v = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      v += bundle.weights->values[k] * bundle.interests->at(k, j);
    }
    CHECK(std::abs(bundle.user_vector->values[j] - v) < 1e-12);
  }
}

TEST_CASE("aggregate: K=1 passes the single interest through") {
  auto params = ModelParams::init(tiny_hp(1, 3, 4, 3), 8, 37);
  Tape tape;
  auto w = window_of({2, 5, 8}, {1, 1, 1}, 1);
  const auto bundle = forward(tape, params, w);
  CHECK(bundle.weights->values[0] == 1.0);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(bundle.user_vector->values[j] == bundle.interests->values[j]);
  }
}

TEST_CASE("aggregate: entropy of e non-increasing in 1/tau, one-hot limit") {
  const std::vector<double> taus{10.0, 1.0, 0.1, 1e-3};
  std::vector<double> entropies;
  std::vector<std::vector<double>> weights_at_tau;
  InterestBundle low_tau_bundle;
  ModelParams low_tau_params;

  for (double tau : taus) {
    auto params = ModelParams::init(tiny_hp(3, 8, 6, 4, tau), 15, 53);
    Tape tape;
    auto w = window_of({3, 11, 7, 14}, {1, 1, 1, 1}, 2);
    const auto bundle = forward(tape, params, w);
    entropies.push_back(entropy(bundle.weights->values));
    weights_at_tau.push_back(bundle.weights->values);
    if (tau == 1e-3) {
      low_tau_bundle = bundle;
      low_tau_params = std::move(params);
    }
  }
  for (std::size_t i = 1; i < entropies.size(); ++i) {
    CHECK(entropies[i] <= entropies[i - 1] + 1e-15);
  }

  // At tau = 1e-3 with distinct scores, v collapses onto the top interest.
  const auto& e = low_tau_bundle.weights->values;
  const std::size_t best = std::max_element(e.begin(), e.end()) - e.begin();
  double diff = 0.0, norm = 0.0;
  for (std::size_t j = 0; j < 6; ++j) {
    const double phi = low_tau_bundle.interests->at(best, j);
    const double d = low_tau_bundle.user_vector->values[j] - phi;
    diff += d * d;
    norm += phi * phi;
  }
  CHECK(std::sqrt(diff) / std::sqrt(norm) < 1e-3);
}

TEST_CASE("forward: deterministic, bundle invariants over random instances") {
  Rng rng(61);
  auto params = ModelParams::init(tiny_hp(2, 5, 6, 4), 20, 71);
  {
    Tape t1, t2;
    auto w = window_of({4, 9, 13, 2}, {1, 1, 1, 1}, 6);
    const auto b1 = forward(t1, params, w);
    const auto b2 = forward(t2, params, w);
    CHECK(b1.user_vector->values == b2.user_vector->values);
    CHECK(b1.concept_indices == b2.concept_indices);
  }

  for (int trial = 0; trial < 200; ++trial) {
    Tape tape;
    TrainWindow w;
    const std::size_t len = 1 + rng.below(4);
    w.inputs.assign(4, kPaddingItem);
    w.mask.assign(4, 0);
    for (std::size_t i = 0; i < len; ++i) {
      w.inputs[4 - len + i] = 1 + rng.below(20);
      w.mask[4 - len + i] = 1;
    }
    w.target = 1 + rng.below(20);
    const auto b = forward(tape, params, w);

    std::set<std::size_t> unique(b.concept_indices.begin(), b.concept_indices.end());
    CHECK(unique.size() == 2);

    for (std::size_t t = 0; t < 4; ++t) {
      double row = 0.0;
      for (std::size_t k = 0; k < 2; ++k) row += b.assignment->at(t, k);
      if (w.mask[t]) {
        CHECK(std::abs(row - 1.0) < 1e-12);
      } else {
        CHECK(row == 0.0);
      }
    }
    double e_sum = 0.0;
    for (double v : b.weights->values) e_sum += v;
    CHECK(std::abs(e_sum - 1.0) < 1e-12);
    CHECK(b.user_vector->all_finite());
  }
}

TEST_CASE("forward: masking soundness — extra padding is bit-invisible") {
  auto params = ModelParams::init(tiny_hp(2, 5, 6, 8), 20, 83);
  auto w_tight = window_of({4, 9, 13}, {1, 1, 1}, 6);
  auto w_left = window_of({kPaddingItem, kPaddingItem, 4, 9, 13}, {0, 0, 1, 1, 1}, 6);
  auto w_mid = window_of({4, kPaddingItem, 9, kPaddingItem, 13}, {1, 0, 1, 0, 1}, 6);
  auto w_right = window_of({4, 9, 13, kPaddingItem}, {1, 1, 1, 0}, 6);

  Tape t0, t1, t2, t3;
  const auto b0 = forward(t0, params, w_tight);
  const auto b1 = forward(t1, params, w_left);
  const auto b2 = forward(t2, params, w_mid);
  const auto b3 = forward(t3, params, w_right);

  CHECK(b0.user_vector->values == b1.user_vector->values);
  CHECK(b0.user_vector->values == b2.user_vector->values);
  CHECK(b0.user_vector->values == b3.user_vector->values);
  CHECK(b0.interests->values == b1.interests->values);
  CHECK(b0.weights->values == b3.weights->values);
  CHECK(b0.concept_indices == b1.concept_indices);
}

TEST_CASE("forward: slot relabeling permutes Phi and leaves v unchanged") {
  const auto hp = tiny_hp(2, 4, 5, 3);
  auto params = ModelParams::init(hp, 10, 97);
  auto swapped = ModelParams::init(hp, 10, 97);
  std::swap(swapped.Wk1[0], swapped.Wk1[1]);
  std::swap(swapped.Wk2[0], swapped.Wk2[1]);

  auto w = window_of({3, 7, 9}, {1, 1, 1}, 2);

  // Slot contents come from the concept ranking, so relabeling the slots
  // means permuting the activated prototypes together with the per-slot
  // attention parameters.
  auto run = [&](const ModelParams& p, bool permute) {
    Tape tape;
    auto in = embed_window(tape, p.H, w);
    auto [a, z] = virtual_concept(tape, p, in);
    auto act = activate_concepts(tape, p, z);
    auto cu = permute ? tape.gather_rows(act.gated, {1, 0}) : act.gated;
    auto assignment = assign_intentions(tape, p, in, cu);
    std::vector<TensorPtr> rows;
    for (std::size_t k = 0; k < 2; ++k) rows.push_back(position_attention_row(tape, p, in, k));
    auto attn = tape.concat_rows(rows);
    auto phi = interest_embeddings(tape, p, in, assignment, attn);
    auto agg = aggregate(tape, p, in, phi, assignment, cu);
    return std::make_pair(phi->values, agg.user_vector->values);
  };

  const auto [phi_base, v_base] = run(params, false);
  const auto [phi_swap, v_swap] = run(swapped, true);

  for (std::size_t j = 0; j < 5; ++j) {
    CHECK(std::abs(phi_base[j] - phi_swap[5 + j]) < 1e-12);
    CHECK(std::abs(phi_base[5 + j] - phi_swap[j]) < 1e-12);
    CHECK(std::abs(v_base[j] - v_swap[j]) < 1e-12);
  }
}

TEST_CASE("baseline_forward: single item, order sensitivity, gradients") {
  auto params = BaselineParams::init(5, 4, 9, 7);
  {
    Tape t1, t2;
    auto w = window_of({kPaddingItem, kPaddingItem, kPaddingItem, 6}, {0, 0, 0, 1});
    const auto v1 = baseline_forward(t1, params, w);
    const auto v2 = baseline_forward(t2, params, w);
    CHECK(v1->values == v2->values);
    // Single position: v = H[6] + pos[0].
    for (std::size_t j = 0; j < 5; ++j) {
      CHECK(v1->values[j] ==
            doctest::Approx(params.H->at(6, j) + params.pos->at(0, j)).epsilon(1e-12));
    }
  }
  {
    Tape t1, t2;
    auto fwd = window_of({2, 3, 4, 5}, {1, 1, 1, 1});
    auto rev = window_of({5, 4, 3, 2}, {1, 1, 1, 1});
    const auto v_fwd = baseline_forward(t1, params, fwd);
    const auto v_rev = baseline_forward(t2, params, rev);
    double max_diff = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      max_diff = std::max(max_diff, std::abs(v_fwd->values[j] - v_rev->values[j]));
    }
    CHECK(max_diff > 1e-9);
  }
  {
    auto w = window_of({kPaddingItem, 2, 8, 3}, {0, 1, 1, 1});
    auto weights = make_tensor({1, 5});
    Rng rng(3);
    for (double& v : weights->values) v = rng.normal();
    auto loss = [&](Tape& tape) {
      return tape.sum(tape.hadamard(baseline_forward(tape, params, w), weights));
    };
    const auto report = grad_check(loss, params.trainable(), 1e-5);
    CHECK(report.worst_rel_err < 1e-6);
  }
}

TEST_CASE("model init: padding row zero, K <= L enforced") {
  auto params = ModelParams::init(tiny_hp(2, 4, 6, 3), 10, 1);
  for (std::size_t j = 0; j < 6; ++j) CHECK(params.H->values[j] == 0.0);
  CHECK_THROWS_AS(ModelParams::init(tiny_hp(5, 4, 6, 3), 10, 1), std::invalid_argument);
}
