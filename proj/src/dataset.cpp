#include "sine/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sine {

namespace {

struct RawRecord {
  std::string user;
  std::string item;
  long long timestamp;
  std::size_t line_no;  // input-file order, used as the stable tie-break
};

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_fields(const std::string& line) {
  const char sep = line.find('\t') != std::string::npos ? '\t' : ',';
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, sep)) fields.push_back(trim(field));
  return fields;
}

std::vector<RawRecord> parse_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open interaction file: " + path);
  std::vector<RawRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto fields = split_fields(stripped);
    if (fields.size() < 3 || fields[0].empty() || fields[1].empty()) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) +
                               ": expected user, item, timestamp");
    }
    RawRecord rec;
    rec.user = fields[0];
    rec.item = fields[1];
    try {
      rec.timestamp = std::stoll(fields[2]);
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad timestamp '" +
                               fields[2] + "'");
    }
    rec.line_no = line_no;
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

std::size_t InteractionLog::num_interactions() const {
  std::size_t total = 0;
  for (const auto& s : sequences) total += s.size();
  return total;
}

std::size_t TrainWindow::real_length() const {
  std::size_t len = 0;
  for (auto m : mask) len += m;
  return len;
}

InteractionLog load_interactions(const std::string& path, std::size_t min_user_len) {
  const auto records = parse_records(path);

  std::unordered_map<std::string, std::size_t> counts;
  for (const auto& r : records) ++counts[r.user];

  InteractionLog log;
  log.item_ids.push_back("<pad>");
  std::vector<std::vector<std::pair<long long, std::size_t>>> keyed;  // (timestamp, item)

  for (const auto& r : records) {
    if (counts[r.user] < min_user_len) continue;
    auto [uit, user_new] = log.user_index.try_emplace(r.user, log.user_ids.size());
    if (user_new) {
      log.user_ids.push_back(r.user);
      keyed.emplace_back();
    }
    auto [iit, item_new] = log.item_index.try_emplace(r.item, log.item_ids.size());
    if (item_new) log.item_ids.push_back(r.item);
    keyed[uit->second].emplace_back(r.timestamp, iit->second);
  }
  if (log.user_ids.empty()) {
    throw std::runtime_error("empty dataset: no user has >= " + std::to_string(min_user_len) +
                             " interactions in " + path);
  }

  log.sequences.resize(keyed.size());
  for (std::size_t u = 0; u < keyed.size(); ++u) {
    auto& per_user = keyed[u];
    std::stable_sort(per_user.begin(), per_user.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    log.sequences[u].reserve(per_user.size());
    for (const auto& [ts, item] : per_user) log.sequences[u].push_back(item);
  }
  return log;
}

std::unordered_map<std::size_t, std::size_t> load_item_labels(const std::string& path,
                                                              const InteractionLog& log) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open label file: " + path);
  std::unordered_map<std::size_t, std::size_t> labels;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto fields = split_fields(stripped);
    if (fields.size() < 2) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": expected item, label");
    }
    auto it = log.item_index.find(fields[0]);
    if (it == log.item_index.end()) continue;
    try {
      labels[it->second] = static_cast<std::size_t>(std::stoull(fields[1]));
    } catch (const std::exception&) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": bad label '" +
                               fields[1] + "'");
    }
  }
  return labels;
}

std::vector<UserSequence> split_leave_one_out(const InteractionLog& log) {
  if (log.num_users() == 0) throw std::runtime_error("split_leave_one_out: empty log");
  std::vector<UserSequence> out(log.num_users());
  for (std::size_t u = 0; u < log.num_users(); ++u) {
    out[u].user = u;
    out[u].items = log.sequences[u];
  }
  return out;
}

std::vector<TrainWindow> make_train_windows(const UserSequence& seq, std::size_t n) {
  if (n == 0) throw std::invalid_argument("make_train_windows: n must be >= 1");
  const auto train = seq.train_items();
  std::vector<TrainWindow> windows;
  if (train.size() < 2) return windows;
  windows.reserve(train.size() - 1);
  for (std::size_t t = 1; t < train.size(); ++t) {
    TrainWindow w;
    w.inputs.assign(n, kPaddingItem);
    w.mask.assign(n, 0);
    const std::size_t len = std::min(t, n);
    for (std::size_t i = 0; i < len; ++i) {
      w.inputs[n - len + i] = train[t - len + i];
      w.mask[n - len + i] = 1;
    }
    w.target = train[t];
    windows.push_back(std::move(w));
  }
  return windows;
}

std::vector<std::size_t> sample_negatives(std::size_t target, std::size_t count,
                                          std::size_t num_items, Rng& rng) {
  const std::size_t available = num_items > 0 ? num_items - 1 : 0;  // all real items but target
  if (count > available) {
    throw std::domain_error("sample_negatives: " + std::to_string(count) + " negatives from " +
                            std::to_string(available) + " available items");
  }
  std::vector<std::size_t> negatives;
  negatives.reserve(count);
  std::vector<std::uint8_t> taken(num_items + 1, 0);
  taken[target] = 1;
  while (negatives.size() < count) {
    const std::size_t cand = 1 + static_cast<std::size_t>(rng.below(num_items));
    if (taken[cand]) continue;
    taken[cand] = 1;
    negatives.push_back(cand);
  }
  return negatives;
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  if (spec.intents_per_user > spec.num_latent_intents) {
    throw std::invalid_argument("generate_synthetic: intents_per_user exceeds intent pool");
  }
  if (spec.num_items < spec.num_latent_intents) {
    throw std::invalid_argument("generate_synthetic: fewer items than intents");
  }
  Rng rng(spec.seed);

  SyntheticCorpus corpus;
  auto& log = corpus.log;
  log.item_ids.push_back("<pad>");
  corpus.item_intent.assign(spec.num_items + 1, 0);

  // Items partitioned round-robin over intents; popularity is Zipf by the
  // item's rank within its intent.
  std::vector<std::vector<std::size_t>> intent_items(spec.num_latent_intents);
  for (std::size_t d = 1; d <= spec.num_items; ++d) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "i%06zu", d);
    log.item_ids.emplace_back(buf);
    log.item_index.emplace(buf, d);
    const std::size_t intent = (d - 1) % spec.num_latent_intents;
    corpus.item_intent[d] = intent;
    intent_items[intent].push_back(d);
  }

  std::vector<std::vector<double>> intent_cdf(spec.num_latent_intents);
  for (std::size_t c = 0; c < spec.num_latent_intents; ++c) {
    double total = 0.0;
    intent_cdf[c].reserve(intent_items[c].size());
    for (std::size_t r = 0; r < intent_items[c].size(); ++r) {
      total += std::pow(static_cast<double>(r + 1), -spec.popularity_exponent);
      intent_cdf[c].push_back(total);
    }
    for (double& v : intent_cdf[c]) v /= total;
  }

  log.sequences.resize(spec.num_users);
  for (std::size_t u = 0; u < spec.num_users; ++u) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "u%06zu", u);
    log.user_ids.emplace_back(buf);
    log.user_index.emplace(buf, u);

    std::vector<std::size_t> pool(spec.num_latent_intents);
    for (std::size_t c = 0; c < pool.size(); ++c) pool[c] = c;
    rng.shuffle(pool);
    pool.resize(spec.intents_per_user);

    auto& seq = log.sequences[u];
    seq.reserve(spec.sequence_length);
    for (std::size_t t = 0; t < spec.sequence_length; ++t) {
      const std::size_t intent = pool[rng.below(pool.size())];
      const auto& cdf = intent_cdf[intent];
      const double r = rng.uniform();
      const std::size_t rank =
          std::lower_bound(cdf.begin(), cdf.end(), r) - cdf.begin();
      seq.push_back(intent_items[intent][std::min(rank, cdf.size() - 1)]);
    }
  }
  return corpus;
}

void write_interactions(const InteractionLog& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write interaction file: " + path);
  for (std::size_t u = 0; u < log.num_users(); ++u) {
    for (std::size_t t = 0; t < log.sequences[u].size(); ++t) {
      out << log.user_ids[u] << '\t' << log.item_ids[log.sequences[u][t]] << '\t' << t << '\n';
    }
  }
}

void write_item_labels(const SyntheticCorpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write label file: " + path);
  for (std::size_t d = 1; d < corpus.log.item_ids.size(); ++d) {
    out << corpus.log.item_ids[d] << '\t' << corpus.item_intent[d] << '\n';
  }
}

}  // namespace sine
