#include "sine/checkpoint.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace sine {

namespace {

constexpr const char* kMagic = "SINE1";

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& context) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw std::runtime_error("checkpoint: bad number '" + s + "' in " + context);
  }
  return v;
}

void write_array(std::ostream& out, const std::string& name, const Tensor& t) {
  out << "param " << name;
  out << ' ' << t.shape.size();
  for (std::size_t d : t.shape) out << ' ' << d;
  out << '\n';
  for (std::size_t i = 0; i < t.size(); ++i) {
    out << format_double(t.values[i]) << (i + 1 == t.size() ? '\n' : ' ');
  }
}

struct Reader {
  std::ifstream in;
  std::string path;
  std::size_t line_no = 0;

  explicit Reader(const std::string& p) : in(p), path(p) {
    if (!in) throw std::runtime_error("cannot open checkpoint: " + p);
  }

  std::string next_line() {
    std::string line;
    if (!std::getline(in, line)) {
      throw std::runtime_error("checkpoint truncated: " + path + " after line " +
                               std::to_string(line_no));
    }
    ++line_no;
    return line;
  }

  std::vector<std::string> next_tokens() {
    std::stringstream ss(next_line());
    std::vector<std::string> tokens;
    std::string t;
    while (ss >> t) tokens.push_back(t);
    return tokens;
  }
};

void read_array(Reader& reader, const std::string& expect_name, Tensor& t) {
  const auto header = reader.next_tokens();
  if (header.size() < 3 || header[0] != "param" || header[1] != expect_name) {
    throw std::runtime_error("checkpoint: expected parameter '" + expect_name + "' at " +
                             reader.path + ":" + std::to_string(reader.line_no));
  }
  const std::size_t ndims = std::stoull(header[2]);
  if (header.size() != 3 + ndims) {
    throw std::runtime_error("checkpoint: malformed shape for '" + expect_name + "'");
  }
  std::vector<std::size_t> shape;
  for (std::size_t i = 0; i < ndims; ++i) shape.push_back(std::stoull(header[3 + i]));
  if (shape != t.shape) {
    throw std::runtime_error("checkpoint: parameter '" + expect_name + "' has shape " +
                             Tensor(shape, false).shape_str() + ", expected " + t.shape_str());
  }
  const bool keep_grad = t.requires_grad;
  t = Tensor(shape, keep_grad);
  std::stringstream ss(reader.next_line());
  std::string tok;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!(ss >> tok)) {
      throw std::runtime_error("checkpoint: short value row for '" + expect_name + "'");
    }
    t.values[i] = parse_double(tok, expect_name);
  }
  if (ss >> tok) {
    throw std::runtime_error("checkpoint: trailing values for '" + expect_name + "'");
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << kMagic << '\n';
  out << "model " << (ckpt.is_baseline() ? "baseline" : "sine") << '\n';
  if (ckpt.is_baseline()) {
    const auto& p = ckpt.baseline();
    out << "hyper 1 1 " << p.D << ' ' << p.n << ' ' << format_double(0.0) << ' '
        << format_double(0.0) << '\n';
  } else {
    const auto& hp = ckpt.model().hp;
    out << "hyper " << hp.K << ' ' << hp.L << ' ' << hp.D << ' ' << hp.n << ' '
        << format_double(hp.tau) << ' ' << format_double(hp.lambda) << '\n';
  }
  out << "items " << ckpt.item_ids.size() << '\n';
  for (const auto& id : ckpt.item_ids) out << "item " << id << '\n';
  out << "users " << ckpt.user_ids.size() << '\n';
  for (const auto& id : ckpt.user_ids) out << "user " << id << '\n';

  const auto arrays = ckpt.is_baseline() ? ckpt.baseline().all_arrays()
                                         : ckpt.model().all_arrays();
  out << "params " << arrays.size() << '\n';
  for (const auto& [name, t] : arrays) write_array(out, name, *t);
  out << "end\n";
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader reader(path);
  if (reader.next_line() != kMagic) {
    throw std::runtime_error("not a SINE1 checkpoint: " + path);
  }
  auto model_line = reader.next_tokens();
  if (model_line.size() != 2 || model_line[0] != "model") {
    throw std::runtime_error("checkpoint: missing model line in " + path);
  }
  const bool baseline = model_line[1] == "baseline";

  auto hyper = reader.next_tokens();
  if (hyper.size() != 7 || hyper[0] != "hyper") {
    throw std::runtime_error("checkpoint: missing hyper line in " + path);
  }
  HyperParams hp;
  hp.K = std::stoull(hyper[1]);
  hp.L = std::stoull(hyper[2]);
  hp.D = std::stoull(hyper[3]);
  hp.n = std::stoull(hyper[4]);
  hp.tau = parse_double(hyper[5], "hyper tau");
  hp.lambda = parse_double(hyper[6], "hyper lambda");

  Checkpoint ckpt;
  auto items_line = reader.next_tokens();
  if (items_line.size() != 2 || items_line[0] != "items") {
    throw std::runtime_error("checkpoint: missing items line in " + path);
  }
  const std::size_t num_items = std::stoull(items_line[1]);
  ckpt.item_ids.reserve(num_items);
  for (std::size_t i = 0; i < num_items; ++i) {
    const std::string line = reader.next_line();
    if (line.rfind("item ", 0) != 0) {
      throw std::runtime_error("checkpoint: bad item line at " + path + ":" +
                               std::to_string(reader.line_no));
    }
    ckpt.item_ids.push_back(line.substr(5));
  }
  auto users_line = reader.next_tokens();
  if (users_line.size() != 2 || users_line[0] != "users") {
    throw std::runtime_error("checkpoint: missing users line in " + path);
  }
  const std::size_t num_users = std::stoull(users_line[1]);
  ckpt.user_ids.reserve(num_users);
  for (std::size_t i = 0; i < num_users; ++i) {
    const std::string line = reader.next_line();
    if (line.rfind("user ", 0) != 0) {
      throw std::runtime_error("checkpoint: bad user line at " + path + ":" +
                               std::to_string(reader.line_no));
    }
    ckpt.user_ids.push_back(line.substr(5));
  }

  auto params_line = reader.next_tokens();
  if (params_line.size() != 2 || params_line[0] != "params") {
    throw std::runtime_error("checkpoint: missing params line in " + path);
  }
  const std::size_t declared = std::stoull(params_line[1]);

  if (baseline) {
    BaselineParams p = BaselineParams::init(hp.D, hp.n, num_items, /*seed=*/0);
    auto arrays = p.all_arrays();
    if (arrays.size() != declared) {
      throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
    }
    for (auto& [name, t] : arrays) read_array(reader, name, *t);
    ckpt.params = std::move(p);
  } else {
    ModelParams p = ModelParams::init(hp, num_items, /*seed=*/0);
    auto arrays = p.all_arrays();
    if (arrays.size() != declared) {
      throw std::runtime_error("checkpoint: parameter count mismatch in " + path);
    }
    for (auto& [name, t] : arrays) read_array(reader, name, *t);
    ckpt.params = std::move(p);
  }
  if (reader.next_line() != "end") {
    throw std::runtime_error("checkpoint: missing end marker in " + path);
  }
  return ckpt;
}

void check_vocab(const Checkpoint& ckpt, const InteractionLog& log) {
  if (ckpt.item_ids.size() != log.num_items() || ckpt.user_ids.size() != log.num_users()) {
    throw std::runtime_error(
        "checkpoint/vocab mismatch: checkpoint has " + std::to_string(ckpt.item_ids.size()) +
        " items / " + std::to_string(ckpt.user_ids.size()) + " users, dataset has " +
        std::to_string(log.num_items()) + " / " + std::to_string(log.num_users()));
  }
  for (std::size_t i = 0; i < ckpt.item_ids.size(); ++i) {
    if (ckpt.item_ids[i] != log.item_ids[i + 1]) {
      throw std::runtime_error("checkpoint/vocab mismatch: item " + std::to_string(i + 1) +
                               " is '" + log.item_ids[i + 1] + "' in the dataset but '" +
                               ckpt.item_ids[i] + "' in the checkpoint");
    }
  }
  for (std::size_t u = 0; u < ckpt.user_ids.size(); ++u) {
    if (ckpt.user_ids[u] != log.user_ids[u]) {
      throw std::runtime_error("checkpoint/vocab mismatch: user " + std::to_string(u) + " is '" +
                               log.user_ids[u] + "' in the dataset but '" + ckpt.user_ids[u] +
                               "' in the checkpoint");
    }
  }
}

}  // namespace sine
