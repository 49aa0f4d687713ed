#include "sine/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace sine {

namespace {

struct PartialSums {
  std::vector<double> hr;
  std::vector<double> ndcg;
  std::size_t users = 0;
};

std::string format_metric(double v) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << v;
  return os.str();
}

}  // namespace

std::string EvalReport::format() const {
  std::ostringstream os;
  os << "# nmi normalization: I / sqrt(H(clusters) * H(labels)), natural logs\n";
  os << "users=" << users << "\n";
  for (std::size_t i = 0; i < cutoffs.size(); ++i) {
    os << "hr@" << cutoffs[i] << "=" << format_metric(hr[i]) << "\n";
    os << "ndcg@" << cutoffs[i] << "=" << format_metric(ndcg[i]) << "\n";
  }
  if (nmi.has_value()) os << "nmi=" << format_metric(*nmi) << "\n";
  os << "wall_seconds=" << format_metric(wall_seconds) << "\n";
  return os.str();
}

std::vector<ScoredItem> rank_items(const std::vector<double>& query, const ItemIndex& index,
                                   const std::vector<std::uint8_t>& exclude) {
  std::vector<ScoredItem> scored;
  scored.reserve(index.num_items());
  for (std::size_t item = 1; item <= index.num_items(); ++item) {
    if (item < exclude.size() && exclude[item]) continue;
    scored.push_back({item, index.dot(item, query)});
  }
  std::sort(scored.begin(), scored.end(), [](const ScoredItem& a, const ScoredItem& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.item < b.item;
  });
  return scored;
}

std::size_t target_rank(const std::vector<double>& query, const ItemIndex& index,
                        std::size_t target, const std::vector<std::uint8_t>& exclude) {
  if (target == kPaddingItem || target > index.num_items()) {
    throw std::out_of_range("target_rank: target " + std::to_string(target) +
                            " outside item range");
  }
  const double target_score = index.dot(target, query);
  std::size_t rank = 1;
  for (std::size_t item = 1; item <= index.num_items(); ++item) {
    if (item == target) continue;
    if (item < exclude.size() && exclude[item]) continue;
    const double s = index.dot(item, query);
    if (s > target_score || (s == target_score && item < target)) ++rank;
  }
  return rank;
}

std::pair<double, double> hr_ndcg(std::size_t rank, std::size_t cutoff) {
  if (rank == 0) throw std::invalid_argument("hr_ndcg: rank is 1-based");
  if (rank > cutoff) return {0.0, 0.0};
  return {1.0, 1.0 / std::log2(static_cast<double>(rank) + 1.0)};
}

double nmi(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("nmi: partition size mismatch");
  if (a.size() < 2) throw std::invalid_argument("nmi: need at least 2 items");
  const double n = static_cast<double>(a.size());

  // Relabel both partitions densely so arbitrary label ids are safe.
  auto densify = [](const std::vector<std::size_t>& raw) {
    std::unordered_map<std::size_t, std::size_t> ids;
    std::vector<std::size_t> out(raw.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
      out[i] = ids.try_emplace(raw[i], ids.size()).first->second;
    }
    return std::pair{out, ids.size()};
  };
  const auto [da, na] = densify(a);
  const auto [db, nb] = densify(b);

  std::vector<std::size_t> count_a(na, 0), count_b(nb, 0);
  std::vector<std::size_t> joint(na * nb, 0);
  for (std::size_t i = 0; i < da.size(); ++i) {
    ++count_a[da[i]];
    ++count_b[db[i]];
    ++joint[da[i] * nb + db[i]];
  }

  double h_a = 0.0, h_b = 0.0;
  for (std::size_t c : count_a) {
    if (c == 0) continue;
    const double p = c / n;
    h_a -= p * std::log(p);
  }
  for (std::size_t c : count_b) {
    if (c == 0) continue;
    const double p = c / n;
    h_b -= p * std::log(p);
  }
  if (h_a <= 0.0 || h_b <= 0.0) return 0.0;

  double mi = 0.0;
  for (std::size_t ia = 0; ia < na; ++ia) {
    for (std::size_t ib = 0; ib < nb; ++ib) {
      const std::size_t c = joint[ia * nb + ib];
      if (c == 0) continue;
      const double p = c / n;
      mi += p * std::log(p / ((count_a[ia] / n) * (count_b[ib] / n)));
    }
  }
  return mi / std::sqrt(h_a * h_b);
}

std::vector<std::size_t> assign_items_to_prototypes(const ItemIndex& index, const Tensor& C) {
  const std::size_t num_protos = C.rows();
  const std::size_t d = C.cols();
  std::vector<std::vector<double>> protos(num_protos);
  for (std::size_t l = 0; l < num_protos; ++l) {
    protos[l].assign(C.values.begin() + static_cast<std::ptrdiff_t>(l * d),
                     C.values.begin() + static_cast<std::ptrdiff_t>((l + 1) * d));
  }
  std::vector<std::size_t> assignment(index.num_items() + 1, 0);
  for (std::size_t item = 1; item <= index.num_items(); ++item) {
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t l = 0; l < num_protos; ++l) {
      const double sim = index.cosine(item, protos[l]);
      if (sim > best_sim) {
        best_sim = sim;
        best = l;
      }
    }
    assignment[item] = best;
  }
  return assignment;
}

double prototype_label_nmi(const ItemIndex& index, const Tensor& C,
                           const std::unordered_map<std::size_t, std::size_t>& labels) {
  const auto assignment = assign_items_to_prototypes(index, C);
  std::vector<std::size_t> clusters, truth;
  clusters.reserve(labels.size());
  truth.reserve(labels.size());
  for (std::size_t item = 1; item <= index.num_items(); ++item) {
    auto it = labels.find(item);
    if (it == labels.end()) continue;
    clusters.push_back(assignment[item]);
    truth.push_back(it->second);
  }
  if (clusters.size() < 2) {
    throw std::invalid_argument("prototype_label_nmi: fewer than 2 labeled items");
  }
  return nmi(clusters, truth);
}

MultiEncoder sine_encoder(const ModelParams& params, Aggregation mode) {
  return [&params, mode](const TrainWindow& w) {
    Tape tape;
    const InterestBundle bundle = forward(tape, params, w);
    std::vector<std::vector<double>> queries;
    if (mode == Aggregation::adaptive) {
      queries.push_back(bundle.user_vector->values);
    } else {
      const std::size_t d = params.hp.D;
      for (std::size_t k = 0; k < params.hp.K; ++k) {
        queries.emplace_back(
            bundle.interests->values.begin() + static_cast<std::ptrdiff_t>(k * d),
            bundle.interests->values.begin() + static_cast<std::ptrdiff_t>((k + 1) * d));
      }
    }
    return queries;
  };
}

MultiEncoder baseline_encoder(const BaselineParams& params) {
  return [&params](const TrainWindow& w) {
    Tape tape;
    return std::vector<std::vector<double>>{baseline_forward(tape, params, w)->values};
  };
}

EvalReport evaluate(const ItemIndex& index, const MultiEncoder& encode,
                    const std::vector<UserSequence>& sequences, std::size_t window_len,
                    const std::vector<std::size_t>& cutoffs, Split split, std::size_t threads,
                    std::size_t max_users) {
  const auto started = std::chrono::steady_clock::now();
  for (std::size_t i = 1; i < cutoffs.size(); ++i) {
    if (cutoffs[i] <= cutoffs[i - 1]) {
      throw std::invalid_argument("evaluate: cutoffs must be strictly ascending");
    }
  }

  // Users with holdout targets, capped for cheap validation passes.
  std::vector<const UserSequence*> eligible;
  for (const auto& seq : sequences) {
    if (seq.has_targets()) eligible.push_back(&seq);
    if (max_users > 0 && eligible.size() == max_users) break;
  }

  const std::size_t max_cutoff =
      cutoffs.empty() ? 0 : *std::max_element(cutoffs.begin(), cutoffs.end());

  auto eval_user = [&](const UserSequence& seq, PartialSums& sums) {
    std::vector<std::size_t> input(seq.train_items().begin(), seq.train_items().end());
    if (split == Split::test) input.push_back(seq.valid_target());
    const std::size_t target = split == Split::test ? seq.test_target() : seq.valid_target();

    std::vector<std::uint8_t> exclude(index.num_items() + 1, 0);
    for (std::size_t item : input) exclude[item] = 1;
    exclude[target] = 0;  // a repeated target must stay rankable

    const TrainWindow w = window_from_history(input, window_len);
    const auto queries = encode(w);

    std::size_t rank = 0;
    if (queries.size() == 1) {
      rank = target_rank(queries[0], index, target, exclude);
    } else {
      // Label-aware: per-interest top-N lists merged, target looked up in
      // the merged list (a miss counts as rank beyond every cutoff).
      std::size_t available = 0;
      for (std::size_t item = 1; item <= index.num_items(); ++item) {
        if (!exclude[item]) ++available;
      }
      const std::size_t depth = std::min(max_cutoff, available);
      std::vector<std::vector<ScoredItem>> lists;
      lists.reserve(queries.size());
      for (const auto& q : queries) lists.push_back(index.top_n(q, depth, exclude));
      const auto merged = merge_interest_lists(lists, max_cutoff);
      rank = max_cutoff + 1;
      for (std::size_t i = 0; i < merged.size(); ++i) {
        if (merged[i].item == target) {
          rank = i + 1;
          break;
        }
      }
    }

    for (std::size_t ci = 0; ci < cutoffs.size(); ++ci) {
      const auto [h, nd] = hr_ndcg(rank, cutoffs[ci]);
      sums.hr[ci] += h;
      sums.ndcg[ci] += nd;
    }
    ++sums.users;
  };

  const std::size_t worker_count = std::max<std::size_t>(1, threads);
  std::vector<PartialSums> partials(worker_count);
  for (auto& p : partials) {
    p.hr.assign(cutoffs.size(), 0.0);
    p.ndcg.assign(cutoffs.size(), 0.0);
  }

  if (worker_count == 1) {
    for (const auto* seq : eligible) eval_user(*seq, partials[0]);
  } else {
    std::vector<std::thread> workers;
    const std::size_t chunk = (eligible.size() + worker_count - 1) / worker_count;
    for (std::size_t wi = 0; wi < worker_count; ++wi) {
      workers.emplace_back([&, wi] {
        const std::size_t begin = wi * chunk;
        const std::size_t end = std::min(eligible.size(), begin + chunk);
        for (std::size_t i = begin; i < end; ++i) eval_user(*eligible[i], partials[wi]);
      });
    }
    for (auto& t : workers) t.join();
  }

  EvalReport report;
  report.cutoffs = cutoffs;
  report.hr.assign(cutoffs.size(), 0.0);
  report.ndcg.assign(cutoffs.size(), 0.0);
  for (const auto& p : partials) {
    report.users += p.users;
    for (std::size_t ci = 0; ci < cutoffs.size(); ++ci) {
      report.hr[ci] += p.hr[ci];
      report.ndcg[ci] += p.ndcg[ci];
    }
  }
  if (report.users > 0) {
    for (std::size_t ci = 0; ci < cutoffs.size(); ++ci) {
      report.hr[ci] /= static_cast<double>(report.users);
      report.ndcg[ci] /= static_cast<double>(report.users);
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace sine
