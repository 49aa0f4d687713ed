#include "sine/cli.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "sine/checkpoint.hpp"
#include "sine/config.hpp"
#include "sine/dataset.hpp"
#include "sine/eval.hpp"
#include "sine/model.hpp"
#include "sine/retrieval.hpp"
#include "sine/train.hpp"

namespace sine::cli {

namespace {

namespace fs = std::filesystem;

struct ParsedArgs {
  RunConfig config;
  std::string split = "test";
  std::size_t retrieve_n = 10;
  std::size_t inspect_top = 8;
  long long concept_filter = -1;  // -1 = all prototypes
  std::vector<std::string> positional;
};

[[noreturn]] void usage_error(const std::string& message) {
  throw std::runtime_error(message +
                           "\nusage: sine <train|eval|retrieve|inspect-concepts|gradcheck|synth>"
                           " [--config PATH] [--out DIR] [--seed N] [--threads N]"
                           " [key=value ...]");
}

ParsedArgs parse_args(const std::vector<std::string>& args, std::size_t begin) {
  ParsedArgs parsed;
  std::vector<std::string> overrides;
  for (std::size_t i = begin; i < args.size(); ++i) {
    const std::string& a = args[i];
    auto next = [&](const char* flag) -> const std::string& {
      if (i + 1 >= args.size()) usage_error(std::string(flag) + " needs a value");
      return args[++i];
    };
    if (a == "--config") {
      parsed.config = RunConfig::from_file(next("--config"));
    } else if (a == "--out") {
      overrides.push_back("out=" + next("--out"));
    } else if (a == "--seed") {
      overrides.push_back("seed=" + next("--seed"));
    } else if (a == "--threads") {
      overrides.push_back("threads=" + next("--threads"));
    } else if (a == "--split") {
      parsed.split = next("--split");
      if (parsed.split != "test" && parsed.split != "valid") {
        usage_error("--split must be test or valid");
      }
    } else if (a == "--n") {
      parsed.retrieve_n = std::stoull(next("--n"));
    } else if (a == "--top") {
      parsed.inspect_top = std::stoull(next("--top"));
    } else if (a == "--concept") {
      parsed.concept_filter = std::stoll(next("--concept"));
    } else if (a.find('=') != std::string::npos && a[0] != '-') {
      overrides.push_back(a);
    } else if (a[0] == '-') {
      usage_error("unknown flag '" + a + "'");
    } else {
      parsed.positional.push_back(a);
    }
  }
  for (const auto& o : overrides) parsed.config.apply(o, "command line");
  return parsed;
}

void write_resolved_config(const RunConfig& cfg) {
  fs::create_directories(cfg.out);
  std::ofstream out(fs::path(cfg.out) / "config.resolved");
  if (!out) throw std::runtime_error("cannot write " + cfg.out + "/config.resolved");
  out << cfg.resolved();
}

InteractionLog load_dataset(const RunConfig& cfg) {
  if (cfg.data.empty()) throw std::runtime_error("no data file configured (key 'data')");
  if (!fs::exists(cfg.data)) throw std::runtime_error("data file not found: " + cfg.data);
  return load_interactions(cfg.data, cfg.min_user_len);
}

std::string run_header(const RunConfig& cfg) {
  std::ostringstream os;
  os << "# step epoch train_loss val_hr@" << cfg.eval_cutoff << " val_ndcg@" << cfg.eval_cutoff
     << " wall_seconds\n";
  os << "# adam beta1=0.9 beta2=0.999 eps=1e-8; epochs=" << cfg.epochs
     << " patience=" << cfg.patience << "; uniform negatives, resampled per step,"
     << " no sampled-softmax logit correction\n";
  return os.str();
}

int cmd_train(const ParsedArgs& parsed) {
  const RunConfig& cfg = parsed.config;
  write_resolved_config(cfg);

  const auto log = load_dataset(cfg);
  const auto sequences = split_leave_one_out(log);
  const TrainConfig tc = cfg.train_config();

  std::vector<TrainLogEntry> entries;
  Checkpoint ckpt;
  if (cfg.model == "baseline") {
    auto result = train_baseline(tc, sequences, log.num_items());
    entries = std::move(result.log);
    ckpt.params = std::move(result.params);
    std::cout << "trained baseline: " << result.steps << " steps, best val hr@"
              << cfg.eval_cutoff << " " << result.best_val_hr << "\n";
  } else {
    auto result = train(tc, sequences, log.num_items());
    entries = std::move(result.log);
    ckpt.params = std::move(result.params);
    std::cout << "trained sine: " << result.steps << " steps, best val hr@" << cfg.eval_cutoff
              << " " << result.best_val_hr << "\n";
  }
  ckpt.item_ids.assign(log.item_ids.begin() + 1, log.item_ids.end());
  ckpt.user_ids = log.user_ids;

  const fs::path out_dir(cfg.out);
  {
    std::ofstream train_log(out_dir / "train.log");
    if (!train_log) throw std::runtime_error("cannot write " + cfg.out + "/train.log");
    train_log << run_header(cfg);
    for (const auto& e : entries) train_log << format_log_entry(e) << "\n";
  }
  save_checkpoint(ckpt, (out_dir / "model.ckpt").string());
  std::cout << "checkpoint: " << (out_dir / "model.ckpt").string() << "\n";
  return 0;
}

Checkpoint load_checkpoint_for(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) {
    throw std::runtime_error("no checkpoint configured (key 'checkpoint')");
  }
  if (!fs::exists(cfg.checkpoint)) {
    throw std::runtime_error("checkpoint not found: " + cfg.checkpoint);
  }
  return load_checkpoint(cfg.checkpoint);
}

int cmd_eval(const ParsedArgs& parsed) {
  const RunConfig& cfg = parsed.config;
  write_resolved_config(cfg);

  const auto log = load_dataset(cfg);
  const auto ckpt = load_checkpoint_for(cfg);
  check_vocab(ckpt, log);
  const auto sequences = split_leave_one_out(log);
  const Split split = parsed.split == "valid" ? Split::valid : Split::test;

  EvalReport report;
  if (ckpt.is_baseline()) {
    const auto& params = ckpt.baseline();
    ItemIndex index(*params.H, params.num_items);
    report = evaluate(index, baseline_encoder(params), sequences, params.n, cfg.cutoffs, split,
                      cfg.threads);
  } else {
    const auto& params = ckpt.model();
    ItemIndex index(*params.H, params.num_items);
    report = evaluate(index, sine_encoder(params, parse_aggregation(cfg.aggregation)), sequences,
                      params.hp.n, cfg.cutoffs, split, cfg.threads);
    if (!cfg.labels.empty()) {
      const auto labels = load_item_labels(cfg.labels, log);
      report.nmi = prototype_label_nmi(index, *params.C, labels);
    }
  }

  const std::string text = report.format();
  std::cout << text;
  std::ofstream saved(fs::path(cfg.out) / "eval.txt");
  if (!saved) throw std::runtime_error("cannot write " + cfg.out + "/eval.txt");
  saved << text;
  return 0;
}

int cmd_retrieve(const ParsedArgs& parsed) {
  const RunConfig& cfg = parsed.config;
  const auto log = load_dataset(cfg);
  const auto ckpt = load_checkpoint_for(cfg);
  check_vocab(ckpt, log);
  if (ckpt.is_baseline()) {
    throw std::runtime_error("retrieve needs a sine checkpoint");
  }
  if (parsed.positional.empty()) {
    throw std::runtime_error("retrieve: no user ids given");
  }
  const auto& params = ckpt.model();
  ItemIndex index(*params.H, params.num_items);
  const Aggregation mode = parse_aggregation(cfg.aggregation);

  for (const auto& user_id : parsed.positional) {
    auto it = log.user_index.find(user_id);
    if (it == log.user_index.end()) {
      std::cerr << "warning: unknown user '" << user_id << "', skipped\n";
      continue;
    }
    const auto& history = log.sequences[it->second];
    const auto results = retrieve_for_user(params, index, history, parsed.retrieve_n, mode);
    for (std::size_t r = 0; r < results.size(); ++r) {
      std::cout << user_id << '\t' << (r + 1) << '\t' << log.item_ids[results[r].item] << '\t'
                << results[r].score << "\n";
    }
  }
  return 0;
}

int cmd_inspect_concepts(const ParsedArgs& parsed) {
  const RunConfig& cfg = parsed.config;
  const auto ckpt = load_checkpoint_for(cfg);
  if (ckpt.is_baseline()) {
    throw std::runtime_error("inspect-concepts needs a sine checkpoint");
  }
  const auto& params = ckpt.model();
  ItemIndex index(*params.H, params.num_items);

  std::size_t first = 0, last = params.hp.L;
  if (parsed.concept_filter >= 0) {
    first = static_cast<std::size_t>(parsed.concept_filter);
    if (first >= params.hp.L) {
      throw std::runtime_error("concept " + std::to_string(first) + " outside pool of " +
                               std::to_string(params.hp.L));
    }
    last = first + 1;
  }
  for (std::size_t c = first; c < last; ++c) {
    const auto neighbors = concept_neighbors(index, *params.C, c, parsed.inspect_top);
    std::cout << "concept " << c << "\n";
    for (std::size_t r = 0; r < neighbors.size(); ++r) {
      std::cout << "  " << (r + 1) << '\t' << ckpt.item_ids[neighbors[r].item - 1] << '\t'
                << neighbors[r].score << "\n";
    }
  }
  return 0;
}

int cmd_gradcheck(const ParsedArgs& parsed) {
  // Toy instance sized so the full finite-difference sweep stays fast while
  // touching every parameter: 4 positions (one padded), 2 of 4 prototypes,
  // 8 items, 6 dimensions. Parameters are drawn at working magnitude: the
  // top-K index set is a hard decision, and central differences are only
  // meaningful while the +-h nudges cannot flip it.
  const HyperParams hp{/*K=*/2, /*L=*/4, /*D=*/6, /*n=*/4, /*tau=*/0.1, /*lambda=*/0.5};
  const std::size_t num_items = 8;
  ModelParams params = ModelParams::init(hp, num_items, parsed.config.seed, /*init_std=*/0.5);

  TrainWindow window;
  window.inputs = {kPaddingItem, 3, 1, 5};
  window.mask = {0, 1, 1, 1};
  window.target = 2;
  const std::vector<std::size_t> negatives{4, 7};

  const auto started = std::chrono::steady_clock::now();
  auto loss_fn = [&](Tape& tape) {
    std::vector<TrainBatchItem> batch{{&window, negatives}};
    return total_loss(tape, params, batch, Aggregation::adaptive, hp.lambda);
  };
  const auto report = grad_check(loss_fn, params.trainable(), /*step=*/1e-4);
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  std::cout << "gradcheck: " << report.per_param.size() << " parameters, worst rel err "
            << report.worst_rel_err << " (" << report.worst_param << "), " << elapsed << " s\n";
  if (!report.pass(1e-4)) {
    std::cout << "gradcheck FAILED: worst rel err " << report.worst_rel_err << " >= 1e-4\n";
    return 1;
  }
  return 0;
}

int cmd_synth(const ParsedArgs& parsed) {
  const RunConfig& cfg = parsed.config;
  write_resolved_config(cfg);

  const auto corpus = generate_synthetic(cfg.synthetic_spec());
  const fs::path out_dir(cfg.out);
  write_interactions(corpus.log, (out_dir / "interactions.tsv").string());
  write_item_labels(corpus, (out_dir / "item_labels.tsv").string());
  std::cout << "synthetic corpus: " << corpus.log.num_users() << " users, "
            << corpus.log.num_items() << " items, " << corpus.log.num_interactions()
            << " interactions -> " << out_dir.string() << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  if (args.empty()) {
    std::cerr << "usage: sine <train|eval|retrieve|inspect-concepts|gradcheck|synth> ...\n";
    return 1;
  }
  try {
    const std::string& command = args[0];
    const ParsedArgs parsed = parse_args(args, 1);
    if (command == "train") return cmd_train(parsed);
    if (command == "eval") return cmd_eval(parsed);
    if (command == "retrieve") return cmd_retrieve(parsed);
    if (command == "inspect-concepts") return cmd_inspect_concepts(parsed);
    if (command == "gradcheck") return cmd_gradcheck(parsed);
    if (command == "synth") return cmd_synth(parsed);
    usage_error("unknown command '" + command + "'");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace sine::cli
