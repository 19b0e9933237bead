#pragma once

// `cocosoda` command line. dispatch() returns 0 on success, 1 on usage
// errors and 2 on runtime failures. Machine output goes to `out`, logs to
// stderr.

#include "cocosoda/config.hpp"
#include "cocosoda/index.hpp"
#include "cocosoda/service.hpp"
#include "cocosoda/synthetic.hpp"
#include "cocosoda/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace cocosoda::cli {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Relative paths that do not exist under the working directory are looked
/// up under $COCOSODA_DATA_ROOT.
inline fs::path data_path(const std::string& p) {
  fs::path path(p);
  if (path.is_absolute() || fs::exists(path)) return path;
  if (const char* root = std::getenv("COCOSODA_DATA_ROOT"); root && *root) {
    auto alt = fs::path(root) / path;
    if (fs::exists(alt)) return alt;
  }
  return path;
}

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream o;
  o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return o.str();
}

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string build = COCOSODA_BUILD_ID;
  std::string started_at = utc_now();
  std::optional<std::string> finished_at;
  nlohmann::json outputs = nlohmann::json::object();

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j = {{"v", 1},          {"command", command},       {"argv", argv},
                        {"config", config}, {"seed", seed},             {"build", build},
                        {"started_at", started_at}, {"outputs", outputs}};
    j["finished_at"] = finished_at ? nlohmann::json(*finished_at) : nlohmann::json(nullptr);
    return j;
  }

  void write(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream o(path);
    if (!o) throw DataError("cannot write " + path.string());
    o << to_json().dump(2) << '\n';
  }
};

/// A corpus JSON written by `ingest`, a JSONL file (all pairs train), or a
/// directory holding train/valid/test.jsonl.
inline corpus::Corpus load_any_corpus(const std::string& arg, const std::string& language) {
  const auto path = data_path(arg);
  if (fs::is_directory(path)) {
    std::map<corpus::Split, corpus::Corpus> parts;
    for (auto s : {corpus::Split::train, corpus::Split::valid, corpus::Split::test}) {
      const auto f = path / (std::string(corpus::split_name(s)) + ".jsonl");
      if (fs::exists(f)) parts.emplace(s, corpus::load_jsonl(f, language));
    }
    if (parts.empty()) throw DataError(path.string() + ": no train/valid/test.jsonl");
    return corpus::merge_splits(parts);
  }
  if (path.extension() == ".jsonl") {
    auto c = corpus::load_jsonl(path, language);
    c.train.resize(c.pairs.size());
    std::iota(c.train.begin(), c.train.end(), 0);
    return c;
  }
  auto c = corpus::load_corpus(path);
  c.validate();
  return c;
}

inline std::vector<std::size_t> split_indices(const corpus::Corpus& c, const std::string& split) {
  if (split == "all") {
    std::vector<std::size_t> all(c.pairs.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  if (split == "pool") return c.pool_for(corpus::Split::test);
  return c.split(corpus::split_from_name(split));
}

/// Parses "key=v1,v2,...".
inline std::pair<std::string, std::vector<double>> parse_grid(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) throw UsageError("--grid expects key=v1,v2,... (got '" + spec + "')");
  std::pair<std::string, std::vector<double>> g{spec.substr(0, eq), {}};
  std::stringstream ss(spec.substr(eq + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      g.second.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--grid: '" + item + "' is not a number");
    }
  }
  if (g.second.empty()) throw UsageError("--grid: no values for '" + g.first + "'");
  return g;
}

/// Fixed-width table of hits for terminal use.
inline void print_hits(std::ostream& out, const std::vector<index::SearchHit>& hits) {
  out << std::left << std::setw(5) << "rank" << std::setw(9) << "score" << std::setw(24) << "id" << "snippet\n";
  for (const auto& h : hits) {
    std::string head = h.entry.snippet.substr(0, h.entry.snippet.find('\n'));
    if (head.size() > 70) head = head.substr(0, 67) + "...";
    std::ostringstream score;
    score << std::fixed << std::setprecision(4) << h.score;
    out << std::left << std::setw(5) << h.rank << std::setw(9) << score.str() << std::setw(24) << h.id << head << '\n';
  }
}

/// Prompt, search, print; ":k N" changes k, ":q" or EOF quits.
inline void search_repl(const index::EmbeddingIndex& ix, const Checkpoint& ck, std::size_t k, std::istream& in,
                        std::ostream& out) {
  std::string line;
  while (true) {
    out << "query> " << std::flush;
    if (!std::getline(in, line)) break;
    const auto words = split_whitespace(line);
    if (words.empty()) continue;
    if (words[0] == ":q" || words[0] == ":quit") break;
    if (words[0] == ":k") {
      if (words.size() == 2 && std::all_of(words[1].begin(), words[1].end(), ::isdigit) && std::stoul(words[1]) >= 1)
        k = std::stoul(words[1]);
      else
        out << "usage: :k N (N >= 1)\n";
      continue;
    }
    print_hits(out, index::search(ix, ck, line, k));
  }
  out << '\n';
}

struct ConfigFlags {
  std::string preset = "toy";
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps, epochs, batch_size, queue_size, checkpoint_every, log_every, vocab_size;
  std::optional<double> lr, finetune_lr, temperature, momentum, ratio, warmup;

  void add_to(CLI::App* app, bool model_flags) {
    app->add_option("--seed", seed, "random seed");
    app->add_option("--steps", steps, "pre-training steps");
    app->add_option("--epochs", epochs, "fine-tuning epochs");
    app->add_option("--lr", lr, "pre-training learning rate");
    app->add_option("--finetune-lr", finetune_lr, "fine-tuning learning rate");
    app->add_option("--warmup", warmup, "warmup fraction");
    app->add_option("--log-every", log_every, "steps between progress logs");
    if (!model_flags) return;
    app->add_option("--preset", preset, "toy or paper")->check(CLI::IsMember({"toy", "paper"}));
    app->add_option("--config", config_path, "run config JSON");
    app->add_option("--batch-size", batch_size, "mini-batch size");
    app->add_option("--queue-size", queue_size, "negative queue size K");
    app->add_option("--temperature", temperature, "temperature tau");
    app->add_option("--momentum", momentum, "momentum coefficient m");
    app->add_option("--ratio", ratio, "augmentation ratio r");
    app->add_option("--checkpoint-every", checkpoint_every, "steps between intermediate checkpoints");
    app->add_option("--vocab-size", vocab_size, "vocabulary size");
  }

  [[nodiscard]] RunConfig base() const {
    return config_path.empty() ? preset_by_name(preset) : load_run_config(data_path(config_path));
  }

  void apply(RunConfig& c) const {
    if (seed) c.training.seed = *seed;
    if (steps) c.training.steps = *steps;
    if (epochs) c.training.epochs = *epochs;
    if (lr) c.training.lr = *lr;
    if (finetune_lr) c.training.finetune_lr = *finetune_lr;
    if (warmup) c.training.warmup_frac = *warmup;
    if (log_every) c.training.log_every = *log_every;
    if (batch_size) c.contrastive.batch_size = *batch_size;
    if (queue_size) c.contrastive.queue_size = *queue_size;
    if (temperature) c.contrastive.temperature = *temperature;
    if (momentum) c.contrastive.momentum = *momentum;
    if (ratio) c.augmentation.ratio = *ratio;
    if (checkpoint_every) c.training.checkpoint_every = *checkpoint_every;
    if (vocab_size) c.training.vocab_size = *vocab_size;
    c.validate();
  }

  [[nodiscard]] RunConfig resolve() const {
    auto c = base();
    apply(c);
    return c;
  }
};

inline int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err, std::istream& in) {
  CLI::App app{"Code search with momentum contrastive pre-training and soft data augmentation", "cocosoda"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(COCOSODA_BUILD_ID));
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "suppress progress logs");

  std::vector<std::string> args(argv, argv + argc);
  RunManifest manifest;
  manifest.argv = args;

  // ingest
  auto* ingest = app.add_subcommand("ingest", "load CodeSearchNet-style JSONL into a corpus file");
  std::vector<std::string> ingest_inputs;
  std::string ingest_train, ingest_valid, ingest_test, ingest_out, language = "python";
  double valid_frac = 0.1, test_frac = 0.1;
  std::uint64_t ingest_seed = 0;
  ingest->add_option("--input", ingest_inputs, "JSONL file(s), split at random");
  ingest->add_option("--train", ingest_train, "train split JSONL");
  ingest->add_option("--valid", ingest_valid, "valid split JSONL");
  ingest->add_option("--test", ingest_test, "test split JSONL (also the candidate pool)");
  ingest->add_option("--language", language, "language of the snippets");
  ingest->add_option("--valid-frac", valid_frac, "valid fraction for --input");
  ingest->add_option("--test-frac", test_frac, "test fraction for --input");
  ingest->add_option("--seed", ingest_seed, "seed for random splits");
  ingest->add_option("--out", ingest_out, "corpus JSON to write")->required();

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic toy corpus as JSONL splits");
  std::string synth_out;
  synthetic::Options synth_opt{.n_train = 512, .n_valid = 64, .n_test = 64};
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--train", synth_opt.n_train, "train pairs");
  synth->add_option("--valid", synth_opt.n_valid, "valid pairs");
  synth->add_option("--test", synth_opt.n_test, "test pairs");
  synth->add_option("--seed", synth_opt.seed, "seed");

  // train
  auto* train = app.add_subcommand("train", "multimodal momentum contrastive pre-training");
  ConfigFlags train_flags;
  std::string train_corpus, train_out, resume, audit_path;
  std::optional<std::uint64_t> stop_at;
  train_flags.add_to(train, true);
  train->add_option("--corpus", train_corpus, "corpus JSON, JSONL file or split directory")->required();
  train->add_option("--language", language, "language for JSONL input");
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");
  train->add_option("--stop-at", stop_at, "stop (and checkpoint) at this step");
  train->add_option("--audit", audit_path, "write augmentation audit JSONL");

  // finetune
  auto* ft = app.add_subcommand("finetune", "fine-tune with validation-MRR model selection");
  ConfigFlags ft_flags;
  std::string ft_ckpt, ft_corpus, ft_out;
  ft_flags.add_to(ft, false);
  ft->add_option("--checkpoint", ft_ckpt, "starting checkpoint")->required();
  ft->add_option("--corpus", ft_corpus, "corpus")->required();
  ft->add_option("--language", language, "language for JSONL input");
  ft->add_option("--out", ft_out, "output directory")->required();

  // eval / zero-shot
  std::string ev_ckpt, ev_corpus, ev_split = "test", ev_format = "json";
  bool ev_ranks = false;
  std::optional<std::uint64_t> ev_seed;
  auto add_eval = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", ev_ckpt, "checkpoint")->required();
    sub->add_option("--corpus", ev_corpus, "corpus")->required();
    sub->add_option("--language", language, "language for JSONL input");
    sub->add_option("--split", ev_split, "query split")->check(CLI::IsMember({"train", "valid", "test"}));
    sub->add_option("--format", ev_format, "json or csv")->check(CLI::IsMember({"json", "csv"}));
    sub->add_flag("--ranks", ev_ranks, "include per-query ranks");
    sub->add_option("--seed", ev_seed, "accepted for uniformity; evaluation is deterministic");
  };
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (MRR, R@k, align/uniform)");
  add_eval(ev);
  auto* zs = app.add_subcommand("zero-shot", "evaluate a pre-trained checkpoint without fine-tuning");
  add_eval(zs);

  // sweep
  auto* sw = app.add_subcommand("sweep", "one-at-a-time hyperparameter sweep (lr, m, r, tau)");
  ConfigFlags sw_flags;
  std::string sw_corpus, sw_out;
  std::vector<std::string> sw_grid;
  sw_flags.add_to(sw, true);
  sw->add_option("--corpus", sw_corpus, "corpus (default: synthetic toy corpus)");
  sw->add_option("--language", language, "language for JSONL input");
  sw->add_option("--grid", sw_grid, "key=v1,v2,... (repeatable)")->required();
  sw->add_option("--out", sw_out, "also write the CSV here");

  // index
  auto* ix = app.add_subcommand("index", "embed a corpus into a search index");
  std::string ix_ckpt, ix_corpus, ix_out, ix_split = "all";
  std::optional<std::uint64_t> ix_seed;
  ix->add_option("--checkpoint", ix_ckpt, "checkpoint")->required();
  ix->add_option("--corpus", ix_corpus, "corpus")->required();
  ix->add_option("--language", language, "language for JSONL input");
  ix->add_option("--split", ix_split, "all, pool, train, valid or test");
  ix->add_option("--out", ix_out, "index file")->required();
  ix->add_option("--seed", ix_seed, "accepted for uniformity; indexing is deterministic");

  // search
  auto* se = app.add_subcommand("search", "query an index");
  std::string se_index, se_ckpt, se_q;
  std::size_t se_k = 10;
  bool se_json = false, se_interactive = false;
  std::optional<std::uint64_t> se_seed;
  se->add_option("--index", se_index, "index file")->required();
  se->add_option("--checkpoint", se_ckpt, "checkpoint the index was built with")->required();
  se->add_option("--q", se_q, "query text");
  se->add_option("--k", se_k, "number of hits")->check(CLI::PositiveNumber);
  se->add_flag("--json", se_json, "print the API JSON payload");
  se->add_flag("--interactive", se_interactive, "read queries from stdin");
  se->add_option("--seed", se_seed, "accepted for uniformity; search is deterministic");

  // serve
  auto* sv = app.add_subcommand("serve", "HTTP search API and web UI");
  std::optional<std::string> sv_index, sv_ckpt, sv_bind, sv_static;
  std::optional<std::uint64_t> sv_seed;
  sv->add_option("--index", sv_index, "index file [env COCOSODA_INDEX]");
  sv->add_option("--checkpoint", sv_ckpt, "checkpoint [env COCOSODA_CHECKPOINT]");
  sv->add_option("--bind", sv_bind, "host:port [env COCOSODA_BIND, default 127.0.0.1:8080]");
  sv->add_option("--static-dir", sv_static, "web UI assets [env COCOSODA_STATIC_DIR]");
  sv->add_option("--seed", sv_seed, "accepted for uniformity; the service is deterministic");

  // export-embeddings
  auto* ex = app.add_subcommand("export-embeddings", "CSV of code/query vectors and paired distances");
  std::string ex_ckpt, ex_corpus, ex_split = "test", ex_out;
  std::optional<std::uint64_t> ex_seed;
  ex->add_option("--checkpoint", ex_ckpt, "checkpoint")->required();
  ex->add_option("--corpus", ex_corpus, "corpus")->required();
  ex->add_option("--language", language, "language for JSONL input");
  ex->add_option("--split", ex_split, "all, train, valid or test");
  ex->add_option("--out", ex_out, "CSV file (default stdout)");
  ex->add_option("--seed", ex_seed, "accepted for uniformity; export is deterministic");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    const CLI::App* failing = &app;
    for (const auto* sub : app.get_subcommands()) failing = sub;
    err << "error: " << e.what() << "\n\n" << failing->help();
    return 1;
  }
  const bool saved_quiet = quiet_logging();
  quiet_logging() = quiet || saved_quiet;
  struct Restore {
    bool v;
    ~Restore() { quiet_logging() = v; }
  } restore{saved_quiet};

  try {
    if (*ingest) {
      manifest.command = "ingest";
      corpus::Corpus c;
      const bool by_split = !ingest_train.empty() || !ingest_valid.empty() || !ingest_test.empty();
      if (by_split == !ingest_inputs.empty()) throw UsageError("ingest: give either --input or --train/--valid/--test");
      if (by_split) {
        std::map<corpus::Split, corpus::Corpus> parts;
        if (!ingest_train.empty()) parts.emplace(corpus::Split::train, corpus::load_jsonl(data_path(ingest_train), language));
        if (!ingest_valid.empty()) parts.emplace(corpus::Split::valid, corpus::load_jsonl(data_path(ingest_valid), language));
        if (!ingest_test.empty()) parts.emplace(corpus::Split::test, corpus::load_jsonl(data_path(ingest_test), language));
        c = corpus::merge_splits(parts);
      } else {
        std::vector<corpus::CodeQueryPair> pairs;
        std::size_t skipped = 0;
        for (std::size_t f = 0; f < ingest_inputs.size(); ++f) {
          auto part = corpus::load_jsonl(data_path(ingest_inputs[f]), language);
          skipped += part.skipped_lines;
          for (auto& p : part.pairs) {
            if (ingest_inputs.size() > 1) p.id = language + ":" + std::to_string(f) + ":" + p.id.substr(p.id.rfind(':') + 1);
            pairs.push_back(std::move(p));
          }
        }
        c.pairs = std::move(pairs);
        c.skipped_lines = skipped;
        corpus::assign_random_splits(c, valid_frac, test_frac, ingest_seed);
        c.validate();
      }
      corpus::save_corpus(c, ingest_out);
      out << nlohmann::json{{"v", 1},
                            {"corpus", ingest_out},
                            {"pairs", c.pairs.size()},
                            {"train", c.train.size()},
                            {"valid", c.valid.size()},
                            {"test", c.test.size()},
                            {"skipped_lines", c.skipped_lines}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*synth) {
      auto c = synthetic::generate(synth_opt);
      synthetic::write_jsonl_splits(c, synth_out);
      out << nlohmann::json{{"v", 1},
                            {"out", synth_out},
                            {"train", c.train.size()},
                            {"valid", c.valid.size()},
                            {"test", c.test.size()}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*train) {
      manifest.command = "train";
      auto c = load_any_corpus(train_corpus, language);
      Checkpoint ck;
      if (!resume.empty()) {
        ck = load_checkpoint(data_path(resume));
        train_flags.apply(ck.config);
      } else {
        auto cfg = train_flags.resolve();
        auto vocab = corpus::build_vocab(c, c.train, cfg.training.vocab_size);
        ck = initial_checkpoint(cfg, vocab);
      }
      const fs::path dir(train_out);
      manifest.config = to_json(ck.config);
      manifest.seed = ck.config.training.seed;
      manifest.outputs = {{"checkpoint", (dir / "pretrain.ckpt").string()},
                          {"metrics", (dir / "pretrain_metrics.csv").string()}};
      manifest.write(dir / "manifest.json");
      std::ofstream audit;
      if (!audit_path.empty()) {
        audit.open(audit_path, std::ios::app);
        if (!audit) throw DataError("cannot write " + audit_path);
      }
      auto trace = training::pretrain(ck, c, {dir, stop_at, audit_path.empty() ? nullptr : &audit});
      manifest.finished_at = utc_now();
      manifest.write(dir / "manifest.json");
      nlohmann::json res = {{"v", 1},
                            {"checkpoint", (dir / "pretrain.ckpt").string()},
                            {"step", ck.step},
                            {"fingerprint", ck.fingerprint()}};
      if (!trace.empty()) res["final_loss"] = trace.back().loss;
      out << res.dump() << '\n';
      return 0;
    }

    if (*ft) {
      manifest.command = "finetune";
      auto c = load_any_corpus(ft_corpus, language);
      auto ck = load_checkpoint(data_path(ft_ckpt));
      ft_flags.apply(ck.config);
      const fs::path dir(ft_out);
      manifest.config = to_json(ck.config);
      manifest.seed = ck.config.training.seed;
      manifest.outputs = {{"checkpoint", (dir / "finetune.ckpt").string()},
                          {"metrics", (dir / "finetune_metrics.csv").string()}};
      manifest.write(dir / "manifest.json");
      auto res = training::finetune(std::move(ck), c, {dir});
      manifest.finished_at = utc_now();
      manifest.write(dir / "manifest.json");
      out << nlohmann::json{{"v", 1},
                            {"checkpoint", (dir / "finetune.ckpt").string()},
                            {"best_epoch", res.best_epoch},
                            {"best_valid_mrr", res.best_mrr},
                            {"valid_mrr", res.valid_mrr},
                            {"epochs", res.epochs},
                            {"train_loss", res.train_loss}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*ev || *zs) {
      auto c = load_any_corpus(ev_corpus, language);
      auto ck = load_checkpoint(data_path(ev_ckpt));
      if (*zs && ck.stage == "finetune") log_warning("zero-shot: checkpoint was fine-tuned");
      auto report = training::zero_shot_eval(ck, c, corpus::split_from_name(ev_split));
      if (ev_format == "csv")
        out << evaluation::EvalReport::csv_header() << '\n' << report.csv_row() << '\n';
      else
        out << report.to_json(ev_ranks).dump() << '\n';
      return 0;
    }

    if (*sw) {
      manifest.command = "sweep";
      auto cfg = sw_flags.resolve();
      auto c = sw_corpus.empty() ? synthetic::generate({.n_train = 512, .n_valid = 64, .n_test = 64, .seed = cfg.training.seed})
                                 : load_any_corpus(sw_corpus, language);
      std::vector<std::pair<std::string, std::vector<double>>> grid;
      for (const auto& g : sw_grid) grid.push_back(parse_grid(g));
      for (const auto& [k, _] : grid)
        if (std::find(training::sweep_keys().begin(), training::sweep_keys().end(), k) == training::sweep_keys().end())
          throw UsageError("--grid: unknown hyperparameter '" + k + "' (expected lr, m, r or tau)");
      auto vocab = corpus::build_vocab(c, c.train, cfg.training.vocab_size);
      std::ofstream file;
      if (!sw_out.empty()) {
        manifest.config = to_json(cfg);
        manifest.seed = cfg.training.seed;
        manifest.outputs = {{"csv", sw_out}};
        manifest.write(sw_out + ".manifest.json");
        file.open(sw_out);
        if (!file) throw DataError("cannot write " + sw_out);
        file << training::sweep_csv_header() << '\n';
      }
      out << training::sweep_csv_header() << '\n';
      training::sweep(grid, cfg, c, vocab, [&](const training::SweepRow& r) {
        out << training::sweep_csv_row(r) << '\n' << std::flush;
        if (file.is_open()) file << training::sweep_csv_row(r) << '\n' << std::flush;
      });
      if (!sw_out.empty()) {
        manifest.finished_at = utc_now();
        manifest.write(sw_out + ".manifest.json");
      }
      return 0;
    }

    if (*ix) {
      manifest.command = "index";
      auto c = load_any_corpus(ix_corpus, language);
      auto ck = load_checkpoint(data_path(ix_ckpt));
      manifest.config = to_json(ck.config);
      manifest.seed = ck.config.training.seed;
      manifest.outputs = {{"index", ix_out}};
      manifest.write(ix_out + ".manifest.json");
      auto idx = split_indices(c, ix_split);
      auto built = index::build_index(ck, c, idx);
      index::save_index(built, ix_out);
      manifest.finished_at = utc_now();
      manifest.write(ix_out + ".manifest.json");
      out << nlohmann::json{{"v", 1}, {"index", ix_out}, {"count", built.size()}, {"fingerprint", built.fingerprint}}
                 .dump()
          << '\n';
      return 0;
    }

    if (*se) {
      if (se_q.empty() && !se_interactive) throw UsageError("search: give --q or --interactive");
      auto idx = index::load_index(data_path(se_index));
      auto ck = load_checkpoint(data_path(se_ckpt));
      index::require_fresh(idx, ck);
      if (!se_q.empty()) {
        auto hits = index::search(idx, ck, se_q, se_k);
        if (se_json)
          out << index::search_response(se_q, se_k, hits).dump() << '\n';
        else
          print_hits(out, hits);
      }
      if (se_interactive) search_repl(idx, ck, se_k, in, out);
      return 0;
    }

    if (*sv) {
      const auto index_path = service::resolve(sv_index, "COCOSODA_INDEX", "");
      const auto ckpt_path = service::resolve(sv_ckpt, "COCOSODA_CHECKPOINT", "");
      if (index_path.empty() || ckpt_path.empty())
        throw UsageError("serve: --index and --checkpoint (or COCOSODA_INDEX / COCOSODA_CHECKPOINT) are required");
      const auto bind = service::parse_bind(service::resolve(sv_bind, "COCOSODA_BIND", "127.0.0.1:8080"));
      const auto static_dir = service::resolve(sv_static, "COCOSODA_STATIC_DIR", "");
      service::SearchService svc(index::load_index(data_path(index_path)), load_checkpoint(data_path(ckpt_path)));
      httplib::Server server;
      svc.install(server, static_dir.empty() ? std::nullopt : std::optional<fs::path>(static_dir));
      log_info("serving " + std::to_string(svc.index().size()) + " snippets on http://" + bind.host + ":" +
               std::to_string(bind.port));
      if (!server.listen(bind.host, bind.port)) throw DataError("cannot bind " + bind.host + ":" + std::to_string(bind.port));
      return 0;
    }

    if (*ex) {
      auto c = load_any_corpus(ex_corpus, language);
      auto ck = load_checkpoint(data_path(ex_ckpt));
      auto idx = split_indices(c, ex_split);
      if (ex_out.empty()) {
        evaluation::export_embeddings(out, ck.model, c, idx, ck.vocab, ck.config.limits);
      } else {
        std::ofstream f(ex_out);
        if (!f) throw DataError("cannot write " + ex_out);
        evaluation::export_embeddings(f, ck.model, c, idx, ck.vocab, ck.config.limits);
      }
      return 0;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace cocosoda::cli
