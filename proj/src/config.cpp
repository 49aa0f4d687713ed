#include "sine/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sine {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& v, const std::string& key) {
  try {
    return std::stoull(v);
  } catch (const std::exception&) {
    throw std::runtime_error("config: bad integer '" + v + "' for key '" + key + "'");
  }
}

double parse_real(const std::string& v, const std::string& key) {
  double out = 0.0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
    throw std::runtime_error("config: bad number '" + v + "' for key '" + key + "'");
  }
  return out;
}

std::vector<std::size_t> parse_cutoffs(const std::string& v, const std::string& key) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(parse_size(tok, key));
  }
  if (out.empty()) throw std::runtime_error("config: empty cutoff list for '" + key + "'");
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i] <= out[i - 1]) {
      throw std::runtime_error("config: cutoffs must be strictly ascending, got '" + v + "'");
    }
  }
  return out;
}

std::string format_real(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    cfg.apply(stripped, path + ":" + std::to_string(line_no));
  }
  return cfg;
}

void RunConfig::apply(const std::string& assignment, const std::string& context) {
  const std::size_t eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw std::runtime_error("config: expected key=value at " + context + ", got '" +
                             assignment + "'");
  }
  const std::string key = trim(assignment.substr(0, eq));
  const std::string value = trim(assignment.substr(eq + 1));

  if (key == "data") data = value;
  else if (key == "labels") labels = value;
  else if (key == "min_user_len") min_user_len = parse_size(value, key);
  else if (key == "model") {
    if (value != "sine" && value != "baseline") {
      throw std::runtime_error("config: model must be sine or baseline, got '" + value + "'");
    }
    model = value;
  }
  else if (key == "K") K = parse_size(value, key);
  else if (key == "L") L = parse_size(value, key);
  else if (key == "D") D = parse_size(value, key);
  else if (key == "n") n = parse_size(value, key);
  else if (key == "tau") tau = parse_real(value, key);
  else if (key == "lambda") lambda = parse_real(value, key);
  else if (key == "batch_size") batch_size = parse_size(value, key);
  else if (key == "learning_rate") learning_rate = parse_real(value, key);
  else if (key == "negatives") negatives = parse_size(value, key);
  else if (key == "epochs") epochs = parse_size(value, key);
  else if (key == "aggregation") {
    parse_aggregation(value);  // validates
    aggregation = value;
  }
  else if (key == "eval_every") eval_every = parse_size(value, key);
  else if (key == "patience") patience = parse_size(value, key);
  else if (key == "eval_cutoff") eval_cutoff = parse_size(value, key);
  else if (key == "eval_users") eval_users = parse_size(value, key);
  else if (key == "max_windows_per_user") max_windows_per_user = parse_size(value, key);
  else if (key == "cutoffs") cutoffs = parse_cutoffs(value, key);
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "synth_users") synth_users = parse_size(value, key);
  else if (key == "synth_items") synth_items = parse_size(value, key);
  else if (key == "synth_intents") synth_intents = parse_size(value, key);
  else if (key == "synth_intents_per_user") synth_intents_per_user = parse_size(value, key);
  else if (key == "synth_seq_len") synth_seq_len = parse_size(value, key);
  else if (key == "synth_pop_exponent") synth_pop_exponent = parse_real(value, key);
  else if (key == "out") out = value;
  else if (key == "seed") seed = parse_size(value, key);
  else if (key == "threads") threads = parse_size(value, key);
  else {
    throw std::runtime_error("config: unknown key '" + key + "' at " + context);
  }
}

std::string RunConfig::resolved() const {
  std::ostringstream os;
  os << "data=" << data << "\n";
  os << "labels=" << labels << "\n";
  os << "min_user_len=" << min_user_len << "\n";
  os << "model=" << model << "\n";
  os << "K=" << K << "\n";
  os << "L=" << L << "\n";
  os << "D=" << D << "\n";
  os << "n=" << n << "\n";
  os << "tau=" << format_real(tau) << "\n";
  os << "lambda=" << format_real(lambda) << "\n";
  os << "batch_size=" << batch_size << "\n";
  os << "learning_rate=" << format_real(learning_rate) << "\n";
  os << "negatives=" << negatives << "\n";
  os << "epochs=" << epochs << "\n";
  os << "aggregation=" << aggregation << "\n";
  os << "eval_every=" << eval_every << "\n";
  os << "patience=" << patience << "\n";
  os << "eval_cutoff=" << eval_cutoff << "\n";
  os << "eval_users=" << eval_users << "\n";
  os << "max_windows_per_user=" << max_windows_per_user << "\n";
  os << "cutoffs=";
  for (std::size_t i = 0; i < cutoffs.size(); ++i) os << (i ? "," : "") << cutoffs[i];
  os << "\n";
  os << "checkpoint=" << checkpoint << "\n";
  os << "synth_users=" << synth_users << "\n";
  os << "synth_items=" << synth_items << "\n";
  os << "synth_intents=" << synth_intents << "\n";
  os << "synth_intents_per_user=" << synth_intents_per_user << "\n";
  os << "synth_seq_len=" << synth_seq_len << "\n";
  os << "synth_pop_exponent=" << format_real(synth_pop_exponent) << "\n";
  os << "out=" << out << "\n";
  os << "seed=" << seed << "\n";
  os << "threads=" << threads << "\n";
  return os.str();
}

TrainConfig RunConfig::train_config() const {
  TrainConfig cfg;
  cfg.batch_size = batch_size;
  cfg.learning_rate = learning_rate;
  cfg.negatives = negatives;
  cfg.epochs = epochs;
  cfg.lambda = lambda;
  cfg.tau = tau;
  cfg.K = K;
  cfg.L = L;
  cfg.D = D;
  cfg.n = n;
  cfg.seed = seed;
  cfg.aggregation = parse_aggregation(aggregation);
  cfg.eval_every = eval_every;
  cfg.patience = patience;
  cfg.eval_cutoff = eval_cutoff;
  cfg.eval_users = eval_users;
  cfg.max_windows_per_user = max_windows_per_user;
  cfg.threads = threads;
  return cfg;
}

SyntheticSpec RunConfig::synthetic_spec() const {
  SyntheticSpec spec;
  spec.num_users = synth_users;
  spec.num_items = synth_items;
  spec.num_latent_intents = synth_intents;
  spec.intents_per_user = synth_intents_per_user;
  spec.sequence_length = synth_seq_len;
  spec.popularity_exponent = synth_pop_exponent;
  spec.seed = seed;
  return spec;
}

}  // namespace sine
