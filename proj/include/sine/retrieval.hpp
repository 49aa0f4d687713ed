#pragma once

#include <cstdint>
#include <vector>

#include "sine/model.hpp"
#include "sine/tensor.hpp"

namespace sine {

struct ScoredItem {
  std::size_t item = 0;
  double score = 0.0;
};

// Frozen copy of the item embedding rows 1..M with cached norms. Immutable
// after construction; queries may run from any number of threads.
class ItemIndex {
 public:
  ItemIndex(const Tensor& H, std::size_t num_items);

  std::size_t num_items() const { return m_; }
  std::size_t dim() const { return d_; }

  double dot(std::size_t item, const std::vector<double>& query) const;
  double cosine(std::size_t item, const std::vector<double>& query) const;

  // Exact maximum-inner-product top-N by full scan. Ties break toward the
  // lower item index. `exclude` is a bitmap over dense item ids (may be
  // empty). Throws when N exceeds the number of non-excluded items.
  std::vector<ScoredItem> top_n(const std::vector<double>& query, std::size_t n,
                                const std::vector<std::uint8_t>& exclude) const;

 private:
  std::size_t m_, d_;
  std::vector<double> rows_;
  std::vector<double> norms_;
};

// Items ranked by cosine similarity to one prototype row.
std::vector<ScoredItem> concept_neighbors(const ItemIndex& index, const Tensor& C,
                                          std::size_t concept_id, std::size_t top);

// Merge of K per-interest top-N lists: duplicates keep their maximum
// per-interest score, the union is re-sorted and truncated to N.
std::vector<ScoredItem> merge_interest_lists(const std::vector<std::vector<ScoredItem>>& lists,
                                             std::size_t n);

// Matching-stage candidate generation for one user history. Adaptive mode
// issues the single aggregated query; label-aware mode retrieves per
// interest and merges.
std::vector<ScoredItem> retrieve_for_user(const ModelParams& params, const ItemIndex& index,
                                          const std::vector<std::size_t>& items, std::size_t n,
                                          Aggregation mode);

// Builds the inference window from the last hp.n items of a history.
TrainWindow window_from_history(const std::vector<std::size_t>& items, std::size_t n);

}  // namespace sine
