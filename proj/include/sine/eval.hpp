#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "sine/dataset.hpp"
#include "sine/model.hpp"
#include "sine/retrieval.hpp"

namespace sine {

enum class Split { valid, test };

struct EvalReport {
  std::vector<std::size_t> cutoffs;
  std::vector<double> hr;    // aligned with cutoffs
  std::vector<double> ndcg;  // aligned with cutoffs
  std::size_t users = 0;
  std::optional<double> nmi;
  double wall_seconds = 0.0;

  // Machine-readable key=value block, one metric per line.
  std::string format() const;
};

// Full catalog ranking for one query: items by descending inner product,
// excluded items removed, ties toward the lower index.
std::vector<ScoredItem> rank_items(const std::vector<double>& query, const ItemIndex& index,
                                   const std::vector<std::uint8_t>& exclude);

// 1-based rank of `target` under the same ordering, without materialising
// the list.
std::size_t target_rank(const std::vector<double>& query, const ItemIndex& index,
                        std::size_t target, const std::vector<std::uint8_t>& exclude);

// HR@N and NDCG@N for a single held-out target at the given rank.
std::pair<double, double> hr_ndcg(std::size_t rank, std::size_t cutoff);

// Normalized mutual information between two partitions of the same items,
// I / sqrt(H_a * H_b) with natural logs; 0 when either entropy is 0.
double nmi(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b);

// Each item to its argmax-cosine prototype; entry 0 is unused.
std::vector<std::size_t> assign_items_to_prototypes(const ItemIndex& index, const Tensor& C);

// NMI of the prototype-induced item partition against ground-truth labels.
double prototype_label_nmi(const ItemIndex& index, const Tensor& C,
                           const std::unordered_map<std::size_t, std::size_t>& labels);

// Encodes one window into one query vector (adaptive, baseline) or K of
// them (label-aware, scored by per-interest retrieval and merge).
using MultiEncoder = std::function<std::vector<std::vector<double>>(const TrainWindow&)>;

MultiEncoder sine_encoder(const ModelParams& params, Aggregation mode);
MultiEncoder baseline_encoder(const BaselineParams& params);

// Leave-one-out evaluation over every user with holdout targets. Parallel
// over users; per-worker partial sums merge in worker order, so results are
// reproducible for a fixed thread count. max_users > 0 caps the evaluated
// users (used for cheap in-training validation).
EvalReport evaluate(const ItemIndex& index, const MultiEncoder& encode,
                    const std::vector<UserSequence>& sequences, std::size_t window_len,
                    const std::vector<std::size_t>& cutoffs, Split split, std::size_t threads = 1,
                    std::size_t max_users = 0);

}  // namespace sine
