#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sine/rng.hpp"
#include "sine/tensor.hpp"

namespace sine {

// Item index 0 is reserved for padding; external items map to 1..M.
constexpr std::size_t kPaddingItem = 0;

// Interaction records digested into dense per-user, time-ordered sequences.
struct InteractionLog {
  std::vector<std::string> item_ids;  // dense index -> external id; [0] is the padding slot
  std::vector<std::string> user_ids;  // dense index -> external id
  std::unordered_map<std::string, std::size_t> item_index;
  std::unordered_map<std::string, std::size_t> user_index;
  std::vector<std::vector<std::size_t>> sequences;  // per user, ascending by timestamp

  std::size_t num_items() const { return item_ids.empty() ? 0 : item_ids.size() - 1; }
  std::size_t num_users() const { return user_ids.size(); }
  std::size_t num_interactions() const;
};

// One user's sequence with leave-one-out markers: last item is the test
// target, second-to-last the validation target, the rest train. Users with
// fewer than three items have no holdout targets.
struct UserSequence {
  std::size_t user = 0;
  std::vector<std::size_t> items;

  bool has_targets() const { return items.size() >= 3; }
  std::size_t test_target() const { return items.back(); }
  std::size_t valid_target() const { return items[items.size() - 2]; }
  std::span<const std::size_t> train_items() const {
    const std::size_t trim = items.size() >= 3 ? 2 : 0;
    return {items.data(), items.size() - trim};
  }
};

// Fixed-length training window: `inputs` is left-padded with the padding
// index to length n, mask[i] = 1 iff inputs[i] is a real item.
struct TrainWindow {
  std::vector<std::size_t> inputs;
  Mask mask;
  std::size_t target = 0;

  std::size_t real_length() const;
};

struct SyntheticSpec {
  std::size_t num_users = 1000;
  std::size_t num_items = 500;
  std::size_t num_latent_intents = 16;
  std::size_t intents_per_user = 4;
  std::size_t sequence_length = 20;
  double popularity_exponent = 1.0;  // Zipf exponent within each intent
  std::uint64_t seed = 1;
};

struct SyntheticCorpus {
  InteractionLog log;
  std::vector<std::size_t> item_intent;  // dense item index 1..M -> latent intent
};

// Lines are "user, item, timestamp" separated by tabs or commas; '#' lines
// and blank lines are skipped. Users with fewer than min_user_len records
// are dropped before the dense vocabularies are built.
InteractionLog load_interactions(const std::string& path, std::size_t min_user_len);

// Sidecar "item_id, label_id" file; returns dense item index -> label.
// Items absent from the log are ignored.
std::unordered_map<std::size_t, std::size_t> load_item_labels(const std::string& path,
                                                              const InteractionLog& log);

std::vector<UserSequence> split_leave_one_out(const InteractionLog& log);

// One window per train position t >= 2 (1-based): the window sees the last
// min(t-1, n) items before t and predicts the item at t.
std::vector<TrainWindow> make_train_windows(const UserSequence& seq, std::size_t n);

// `count` distinct items drawn uniformly from 1..num_items excluding the
// target. Throws when count exceeds the number of available items.
std::vector<std::size_t> sample_negatives(std::size_t target, std::size_t count,
                                          std::size_t num_items, Rng& rng);

// Each user owns a sparse subset of latent intents; each click picks one of
// them uniformly and then an item from that intent's Zipf popularity.
SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

void write_interactions(const InteractionLog& log, const std::string& path);
void write_item_labels(const SyntheticCorpus& corpus, const std::string& path);

}  // namespace sine
