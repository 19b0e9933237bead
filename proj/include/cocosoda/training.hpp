#pragma once

// Two-stage driver: momentum contrastive pre-training, then fine-tuning with
// validation-MRR model selection. Every random draw is derived from
// (seed, stream, step), so a checkpoint's step counter is enough to resume.

#include "cocosoda/checkpoint.hpp"
#include "cocosoda/evaluation.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <optional>

namespace cocosoda::training {

struct StepRecord {
  std::uint64_t step = 0;
  double loss = 0.0;  // inter + intra summed over the batch
  double inter = 0.0, intra = 0.0;
  double query_inter = 0.0, query_intra = 0.0, code_inter = 0.0, code_intra = 0.0;
  double grad_norm = 0.0;
  double lr = 0.0;
  bool skipped = false;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"step", step},   {"loss", loss},         {"inter", inter},           {"intra", intra},
            {"query_inter", query_inter}, {"query_intra", query_intra}, {"code_inter", code_inter},
            {"code_intra", code_intra},   {"grad_norm", grad_norm},     {"lr", lr},
            {"skipped", skipped}};
  }
};

struct PretrainOptions {
  std::optional<std::filesystem::path> out_dir;  // metrics + checkpoints; nothing is written when unset
  std::optional<std::uint64_t> stop_at;          // stop early (still checkpointed) at this step
  std::ostream* audit = nullptr;                 // augmentation audit log (JSONL)
};

/// Order of the training pairs in `epoch`.
inline std::vector<std::size_t> epoch_order(const std::vector<std::size_t>& train, std::uint64_t seed,
                                            std::uint64_t epoch, std::uint64_t stage) {
  auto order = train;
  auto rng = derive_rng(seed, stream::kShuffle, epoch, stage);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

namespace detail {

class MetricsSink {
 public:
  MetricsSink(const std::optional<std::filesystem::path>& dir, const std::string& stem, bool append,
              const std::string& csv_header) {
    if (!dir) return;
    std::filesystem::create_directories(*dir);
    const auto mode = append ? std::ios::app : std::ios::trunc;
    const auto csv_path = *dir / (stem + ".csv");
    const bool had_csv = append && std::filesystem::exists(csv_path);
    csv_.open(csv_path, std::ios::out | mode);
    jsonl_.open(*dir / (stem + ".jsonl"), std::ios::out | mode);
    if (!csv_ || !jsonl_) throw DataError("cannot write metrics under " + dir->string());
    if (!had_csv) csv_ << csv_header << '\n';
  }

  void write(const nlohmann::json& row, const std::vector<std::string>& cols) {
    if (!csv_.is_open()) return;
    jsonl_ << row.dump() << '\n';
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) csv_ << ',';
      const auto& v = row.at(cols[i]);
      if (v.is_boolean()) csv_ << (v.get<bool>() ? 1 : 0);
      else csv_ << v.dump();
    }
    csv_ << '\n';
    csv_.flush();
    jsonl_.flush();
  }

 private:
  std::ofstream csv_, jsonl_;
};

inline std::string joined(const std::vector<std::string>& cols) { return join(cols, ","); }

}  // namespace detail

/// Effective batch size: the configured size, or the whole train split when
/// it is smaller.
inline std::size_t effective_batch(const RunConfig& cfg, std::size_t n_train) {
  return std::min(cfg.contrastive.batch_size, n_train);
}

/// Runs pretrain_step from ck.step up to cfg.training.steps (or stop_at).
/// Steps whose loss or gradient is non-finite are skipped; three in a row abort.
inline std::vector<StepRecord> pretrain(Checkpoint& ck, const corpus::Corpus& corpus, const PretrainOptions& opt = {}) {
  const auto& cfg = ck.config;
  const auto& train = corpus.train;
  if (train.empty()) throw DataError("pretrain: train split is empty");
  const std::size_t bs = effective_batch(cfg, train.size());
  const std::size_t per_epoch = train.size() / bs;  // drop_last
  const std::uint64_t total = cfg.training.steps;
  const std::uint64_t end = std::min<std::uint64_t>(total, opt.stop_at.value_or(total));
  const contrastive::SequenceLimits limits = cfg.limits;

  const std::vector<std::string> cols = {"step", "loss", "inter", "intra", "query_inter", "query_intra",
                                         "code_inter", "code_intra", "grad_norm", "lr", "skipped"};
  detail::MetricsSink sink(opt.out_dir, "pretrain_metrics", ck.step > 0, detail::joined(cols));
  if (!ck.metadata.contains("loss_trace")) ck.metadata["loss_trace"] = nlohmann::json::array();
  ck.stage = "pretrain";

  std::vector<StepRecord> trace;
  std::vector<std::size_t> order;
  std::uint64_t order_epoch = std::numeric_limits<std::uint64_t>::max();
  int consecutive_bad = 0;
  const auto t0 = std::chrono::steady_clock::now();

  while (ck.step < end) {
    const std::uint64_t step = ck.step;
    const std::uint64_t epoch = step / per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(train, cfg.training.seed, epoch, 0);
      order_epoch = epoch;
    }
    const std::size_t offset = (step % per_epoch) * bs;
    std::vector<const corpus::CodeQueryPair*> batch;
    for (std::size_t i = 0; i < bs; ++i) batch.push_back(&corpus.pairs[order[offset + i]]);

    contrastive::StepSettings st;
    st.temperature = cfg.contrastive.temperature;
    st.momentum = cfg.contrastive.momentum;
    st.lr = optim::scheduled_lr(cfg.training.lr, step, total, cfg.training.warmup_frac);
    st.grad_clip = cfg.training.grad_clip;
    st.seed = cfg.training.seed;
    st.step = step;

    StepRecord rec;
    rec.step = step;
    rec.lr = st.lr;
    try {
      auto res = contrastive::pretrain_step<float>(batch, ck.model, ck.optimizer, ck.vocab, limits, cfg.augmentation,
                                                   st, opt.audit);
      rec.loss = res.loss.total;
      rec.inter = res.loss.inter;
      rec.intra = res.loss.intra;
      rec.query_inter = res.loss.query_inter;
      rec.query_intra = res.loss.query_intra;
      rec.code_inter = res.loss.code_inter;
      rec.code_intra = res.loss.code_intra;
      rec.grad_norm = res.grad_norm;
      consecutive_bad = 0;
    } catch (const NumericError& e) {
      rec.skipped = true;
      rec.loss = std::numeric_limits<double>::quiet_NaN();
      log_warning("step " + std::to_string(step) + " skipped: " + e.what());
      if (++consecutive_bad >= 3) {
        std::ostringstream diag;
        diag << "pretrain: non-finite loss on 3 consecutive steps (last step " << step << ", lr " << st.lr
             << ", batch ids";
        for (const auto* p : batch) diag << ' ' << p->id;
        diag << ")";
        throw NumericError(diag.str());
      }
    }
    ++ck.step;
    trace.push_back(rec);
    auto row = rec.to_json();
    sink.write(row, cols);
    ck.metadata["loss_trace"].push_back(rec.skipped ? nlohmann::json(nullptr) : nlohmann::json(rec.loss));

    const auto every = cfg.training.log_every;
    if (every && (ck.step % every == 0 || ck.step == end)) {
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      std::ostringstream msg;
      msg << "pretrain step " << ck.step << "/" << total << " loss " << rec.loss << " (inter " << rec.inter
          << ", intra " << rec.intra << ") lr " << rec.lr << " " << secs << "s";
      log_info(msg.str());
    }
    if (opt.out_dir && cfg.training.checkpoint_every && ck.step % cfg.training.checkpoint_every == 0 &&
        ck.step < end)
      save_checkpoint(ck, *opt.out_dir / ("pretrain-step" + std::to_string(ck.step) + ".ckpt"));
  }
  if (opt.out_dir) save_checkpoint(ck, *opt.out_dir / "pretrain.ckpt");
  return trace;
}

struct FinetuneOptions {
  std::optional<std::filesystem::path> out_dir;
};

struct FinetuneResult {
  Checkpoint best;
  std::vector<double> valid_mrr;     // one entry per evaluated epoch
  std::vector<std::size_t> epochs;   // 1-based epoch of each entry
  std::vector<double> train_loss;    // mean batch loss per epoch
  std::size_t best_epoch = 0;
  double best_mrr = 0.0;
};

/// Index of the largest value; the earliest wins ties.
inline std::size_t argmax_earliest(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("argmax of empty history");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

/// In-batch fine-tuning of the live encoder(s); the checkpoint with the best
/// validation MRR is kept.
inline FinetuneResult finetune(Checkpoint ck, const corpus::Corpus& corpus, const FinetuneOptions& opt = {}) {
  const auto& cfg = ck.config;
  if (corpus.train.empty()) throw DataError("finetune: train split is empty");
  if (corpus.valid.empty()) throw DataError("finetune: valid split is empty");
  const std::size_t bs = effective_batch(cfg, corpus.train.size());
  const std::size_t per_epoch = corpus.train.size() / bs;
  const std::size_t total = per_epoch * cfg.training.epochs;
  const auto limits = cfg.limits;
  const auto pool = corpus.pool_for(corpus::Split::valid);

  ck.optimizer = optim::AdamW<float>({.weight_decay = cfg.training.weight_decay}, ck.model.live_params_const());
  const std::vector<std::string> cols = {"epoch", "train_loss", "valid_mrr", "seconds"};
  detail::MetricsSink sink(opt.out_dir, "finetune_metrics", false, detail::joined(cols));

  FinetuneResult out;
  const std::uint64_t base_step = ck.step;
  std::size_t ft_step = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t epoch = 0; epoch < cfg.training.epochs; ++epoch) {
    const auto order = epoch_order(corpus.train, cfg.training.seed, epoch, 1);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < per_epoch; ++b, ++ft_step) {
      std::vector<corpus::EncodedSequence> code, query;
      for (std::size_t i = 0; i < bs; ++i) {
        const auto& p = corpus.pairs[order[b * bs + i]];
        code.push_back(corpus::encode_tokens(p.code_tokens, ck.vocab, limits.max_code_len));
        query.push_back(corpus::encode_tokens(p.query_tokens, ck.vocab, limits.max_query_len));
      }
      auto rng = derive_rng(cfg.training.seed, stream::kDropout, ft_step, 1);
      auto fc = ck.model.code_encoder().forward(code, true, &rng);
      auto fq = ck.model.query_encoder().forward(query, true, &rng);
      auto loss = contrastive::finetune_loss<float>(fc.reps, fq.reps, cfg.contrastive.temperature,
                                                    cfg.contrastive.symmetric_finetune);
      auto grads = ck.model.zero_grads();
      ck.model.code_encoder().backward(fc.cache, loss.d_code, grads[0]);
      ck.model.query_encoder().backward(fq.cache, loss.d_query, grads[ck.model.query_slot()]);
      std::vector<encoder::Parameters<float>*> gp;
      for (auto& g : grads) gp.push_back(&g);
      bool finite = std::isfinite(static_cast<double>(loss.loss));
      for (auto* g : gp) finite = finite && g->all_finite();
      if (!finite) throw NumericError("finetune: non-finite loss at epoch " + std::to_string(epoch + 1));
      optim::clip_global_norm(gp, cfg.training.grad_clip);
      const double lr = optim::scheduled_lr(cfg.training.finetune_lr, ft_step, total, cfg.training.warmup_frac);
      ck.optimizer.step(ck.model.live_params(), gp, lr);
      loss_sum += loss.loss;
    }
    const double mean_loss = loss_sum / static_cast<double>(per_epoch);
    out.train_loss.push_back(mean_loss);
    ck.step = base_step + ft_step;
    ck.stage = "finetune";

    const bool last = epoch + 1 == cfg.training.epochs;
    if ((epoch + 1) % cfg.training.eval_every != 0 && !last) continue;
    const auto report = evaluation::evaluate(ck.model, corpus, corpus.valid, pool, ck.vocab, limits);
    out.valid_mrr.push_back(report.mrr);
    out.epochs.push_back(epoch + 1);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    sink.write({{"epoch", epoch + 1}, {"train_loss", mean_loss}, {"valid_mrr", report.mrr}, {"seconds", secs}}, cols);
    log_info("finetune epoch " + std::to_string(epoch + 1) + " loss " + std::to_string(mean_loss) + " valid MRR " +
             std::to_string(report.mrr));
    if (out.valid_mrr.size() == 1 || report.mrr > out.best_mrr) {
      out.best_mrr = report.mrr;
      out.best_epoch = epoch + 1;
      out.best = ck;
    }
  }
  out.best.metadata["valid_mrr_history"] = out.valid_mrr;
  out.best.metadata["best_epoch"] = out.best_epoch;
  out.best.metadata["best_valid_mrr"] = out.best_mrr;
  if (opt.out_dir) save_checkpoint(out.best, *opt.out_dir / "finetune.ckpt");
  return out;
}

/// Evaluates a checkpoint without any parameter update.
inline evaluation::EvalReport zero_shot_eval(const Checkpoint& ck, const corpus::Corpus& corpus,
                                             corpus::Split split = corpus::Split::test) {
  const auto& queries = corpus.split(split);
  if (queries.empty()) throw DataError("zero-shot: split " + std::string(corpus::split_name(split)) + " is empty");
  const auto pool = corpus.pool_for(split);
  return evaluation::evaluate(ck.model, corpus, queries, pool, ck.vocab, ck.config.limits);
}

/// pretrain -> (finetune when a valid split exists) -> evaluate on test.
inline evaluation::EvalReport train_and_eval(const RunConfig& cfg, const corpus::Corpus& corpus,
                                             const corpus::Vocabulary& vocab) {
  auto ck = initial_checkpoint(cfg, vocab);
  pretrain(ck, corpus);
  if (!corpus.valid.empty() && cfg.training.epochs > 0) ck = finetune(std::move(ck), corpus).best;
  return zero_shot_eval(ck, corpus, corpus::Split::test);
}

struct SweepRow {
  std::string key;
  double value = 0.0;
  std::optional<double> mrr;
  double seconds = 0.0;
  std::string error;
};

inline const std::vector<std::string>& sweep_keys() {
  static const std::vector<std::string> keys = {"lr", "m", "r", "tau"};
  return keys;
}

inline void apply_sweep_value(RunConfig& cfg, const std::string& key, double v) {
  if (key == "lr") {
    cfg.training.lr = v;
    cfg.training.finetune_lr = v;
  } else if (key == "m") {
    cfg.contrastive.momentum = v;
  } else if (key == "r") {
    cfg.augmentation.ratio = v;
  } else if (key == "tau") {
    cfg.contrastive.temperature = v;
  } else {
    throw std::invalid_argument("sweep: unknown hyperparameter '" + key + "' (expected lr, m, r or tau)");
  }
}

/// One train+eval run per grid value, varying one hyperparameter at a time
/// from `base`. A failing point is recorded and the sweep continues.
inline std::vector<SweepRow> sweep(const std::vector<std::pair<std::string, std::vector<double>>>& grid,
                                   const RunConfig& base, const corpus::Corpus& corpus,
                                   const corpus::Vocabulary& vocab,
                                   const std::function<void(const SweepRow&)>& on_row = {}) {
  for (const auto& [k, vals] : grid) {
    if (std::find(sweep_keys().begin(), sweep_keys().end(), k) == sweep_keys().end())
      throw std::invalid_argument("sweep: unknown hyperparameter '" + k + "' (expected lr, m, r or tau)");
    if (vals.empty()) throw std::invalid_argument("sweep: no values for '" + k + "'");
  }
  std::vector<SweepRow> rows;
  for (const auto& [k, vals] : grid)
    for (double v : vals) {
      SweepRow row{k, v, std::nullopt, 0.0, ""};
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto cfg = base;
        apply_sweep_value(cfg, k, v);
        cfg.validate();
        row.mrr = train_and_eval(cfg, corpus, vocab).mrr;
      } catch (const std::exception& e) {
        row.error = e.what();
        log_warning("sweep " + k + "=" + std::to_string(v) + " failed: " + e.what());
      }
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      rows.push_back(row);
      if (on_row) on_row(row);
    }
  return rows;
}

inline std::string sweep_csv_header() { return "hyperparameter,value,mrr,seconds,error"; }

inline std::string sweep_csv_row(const SweepRow& r) {
  std::ostringstream o;
  o << std::setprecision(10) << r.key << ',' << r.value << ',';
  if (r.mrr) o << *r.mrr;
  o << ',' << r.seconds << ',';
  std::string err = r.error;
  std::replace(err.begin(), err.end(), ',', ';');
  std::replace(err.begin(), err.end(), '\n', ' ');
  o << err;
  return o.str();
}

}  // namespace cocosoda::training
