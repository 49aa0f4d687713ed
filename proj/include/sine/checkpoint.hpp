#pragma once

#include <optional>
#include <string>
#include <variant>

#include "sine/dataset.hpp"
#include "sine/model.hpp"

namespace sine {

// Versioned text archive: magic "SINE1", hyperparameters, vocab maps and
// every named parameter array with its shape. Values are serialised with
// shortest-round-trip formatting, so save/load is bit-exact and two saves of
// the same state are byte-identical.
struct Checkpoint {
  std::variant<ModelParams, BaselineParams> params;
  std::vector<std::string> item_ids;  // dense order, excluding the padding slot
  std::vector<std::string> user_ids;

  bool is_baseline() const { return std::holds_alternative<BaselineParams>(params); }
  const ModelParams& model() const { return std::get<ModelParams>(params); }
  const BaselineParams& baseline() const { return std::get<BaselineParams>(params); }
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Vocab maps must agree exactly with the dataset the checkpoint is applied
// to; mismatches throw with the first differing entry.
void check_vocab(const Checkpoint& ckpt, const InteractionLog& log);

}  // namespace sine
