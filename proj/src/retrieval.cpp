#include "sine/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace sine {

namespace {

bool better(const ScoredItem& a, const ScoredItem& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.item < b.item;
}

}  // namespace

ItemIndex::ItemIndex(const Tensor& H, std::size_t num_items) : m_(num_items), d_(H.cols()) {
  if (H.rows() < num_items + 1) {
    throw std::invalid_argument("ItemIndex: embedding table has " + std::to_string(H.rows()) +
                                " rows for " + std::to_string(num_items) + " items");
  }
  rows_.assign(H.values.begin() + static_cast<std::ptrdiff_t>(d_),
               H.values.begin() + static_cast<std::ptrdiff_t>((num_items + 1) * d_));
  norms_.resize(m_);
  for (std::size_t i = 0; i < m_; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d_; ++j) acc += rows_[i * d_ + j] * rows_[i * d_ + j];
    norms_[i] = std::sqrt(acc);
  }
}

double ItemIndex::dot(std::size_t item, const std::vector<double>& query) const {
  const double* r = rows_.data() + (item - 1) * d_;
  double acc = 0.0;
  for (std::size_t j = 0; j < d_; ++j) acc += r[j] * query[j];
  return acc;
}

double ItemIndex::cosine(std::size_t item, const std::vector<double>& query) const {
  double qn = 0.0;
  for (double v : query) qn += v * v;
  qn = std::sqrt(qn);
  const double denom = norms_[item - 1] * qn;
  if (denom == 0.0) return 0.0;
  return dot(item, query) / denom;
}

std::vector<ScoredItem> ItemIndex::top_n(const std::vector<double>& query, std::size_t n,
                                         const std::vector<std::uint8_t>& exclude) const {
  if (query.size() != d_) {
    throw std::invalid_argument("top_n: query dimension " + std::to_string(query.size()) +
                                " vs index dimension " + std::to_string(d_));
  }
  std::vector<ScoredItem> scored;
  scored.reserve(m_);
  for (std::size_t item = 1; item <= m_; ++item) {
    if (item < exclude.size() && exclude[item]) continue;
    scored.push_back({item, dot(item, query)});
  }
  if (n > scored.size()) {
    throw std::domain_error("top_n: requested " + std::to_string(n) + " of " +
                            std::to_string(scored.size()) + " candidate items");
  }
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n),
                    scored.end(), better);
  scored.resize(n);
  return scored;
}

std::vector<ScoredItem> concept_neighbors(const ItemIndex& index, const Tensor& C,
                                          std::size_t concept_id, std::size_t top) {
  if (concept_id >= C.rows()) {
    throw std::out_of_range("concept_neighbors: concept " + std::to_string(concept_id) +
                            " outside " + std::to_string(C.rows()) + " prototypes");
  }
  std::vector<double> proto(C.values.begin() + static_cast<std::ptrdiff_t>(concept_id * C.cols()),
                            C.values.begin() + static_cast<std::ptrdiff_t>((concept_id + 1) * C.cols()));
  std::vector<ScoredItem> scored;
  scored.reserve(index.num_items());
  for (std::size_t item = 1; item <= index.num_items(); ++item) {
    scored.push_back({item, index.cosine(item, proto)});
  }
  const std::size_t keep = std::min(top, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                    scored.end(), better);
  scored.resize(keep);
  return scored;
}

std::vector<ScoredItem> merge_interest_lists(const std::vector<std::vector<ScoredItem>>& lists,
                                             std::size_t n) {
  std::unordered_map<std::size_t, double> best_score;
  for (const auto& list : lists) {
    for (const auto& s : list) {
      auto [it, fresh] = best_score.try_emplace(s.item, s.score);
      if (!fresh && s.score > it->second) it->second = s.score;
    }
  }
  std::vector<ScoredItem> merged;
  merged.reserve(best_score.size());
  for (const auto& [item, score] : best_score) merged.push_back({item, score});
  std::sort(merged.begin(), merged.end(), better);
  if (merged.size() > n) merged.resize(n);
  return merged;
}

TrainWindow window_from_history(const std::vector<std::size_t>& items, std::size_t n) {
  TrainWindow w;
  w.inputs.assign(n, kPaddingItem);
  w.mask.assign(n, 0);
  const std::size_t len = std::min(items.size(), n);
  for (std::size_t i = 0; i < len; ++i) {
    w.inputs[n - len + i] = items[items.size() - len + i];
    w.mask[n - len + i] = 1;
  }
  return w;
}

std::vector<ScoredItem> retrieve_for_user(const ModelParams& params, const ItemIndex& index,
                                          const std::vector<std::size_t>& items, std::size_t n,
                                          Aggregation mode) {
  if (items.empty()) throw std::invalid_argument("retrieve_for_user: empty history");
  const TrainWindow w = window_from_history(items, params.hp.n);

  std::vector<std::uint8_t> exclude(index.num_items() + 1, 0);
  for (std::size_t item : items) {
    if (item < exclude.size()) exclude[item] = 1;
  }

  Tape tape;
  const InterestBundle bundle = forward(tape, params, w);

  if (mode == Aggregation::adaptive) {
    return index.top_n(bundle.user_vector->values, n, exclude);
  }
  std::vector<std::vector<ScoredItem>> lists;
  lists.reserve(params.hp.K);
  for (std::size_t k = 0; k < params.hp.K; ++k) {
    std::vector<double> query(bundle.interests->values.begin() +
                                  static_cast<std::ptrdiff_t>(k * params.hp.D),
                              bundle.interests->values.begin() +
                                  static_cast<std::ptrdiff_t>((k + 1) * params.hp.D));
    lists.push_back(index.top_n(query, n, exclude));
  }
  return merge_interest_lists(lists, n);
}

}  // namespace sine
