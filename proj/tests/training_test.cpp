#include "cocosoda/synthetic.hpp"
#include "cocosoda/training.hpp"
#include "support.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace cocosoda;
using testing_support::TempDir;
using testing_support::tiny_run_config;

namespace {

struct TrainSetup {
  corpus::Corpus data;
  corpus::Vocabulary vocab;
  RunConfig cfg;

  explicit TrainSetup(std::size_t steps = 10, std::size_t n_valid = 8) : cfg(tiny_run_config(steps)) {
    data = synthetic::generate({.n_train = 32, .n_valid = n_valid, .n_test = 8, .seed = 3});
    vocab = corpus::build_vocab(data, data.train, cfg.training.vocab_size);
  }
};

double max_param_diff(const Checkpoint& a, const Checkpoint& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.model.live.size(); ++i) {
    auto pa = a.model.live[i].params().const_ptrs();
    auto pb = b.model.live[i].params().const_ptrs();
    for (std::size_t t = 0; t < pa.size(); ++t)
      worst = std::max(worst, double((*pa[t] - *pb[t]).cwiseAbs().maxCoeff()));
  }
  return worst;
}

std::size_t count_lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  return n;
}

}  // namespace

TEST(Schedule, WarmupThenLinearDecay) {
  EXPECT_DOUBLE_EQ(optim::scheduled_lr(1.0, 0, 100, 0.1), 0.1);
  EXPECT_DOUBLE_EQ(optim::scheduled_lr(1.0, 9, 100, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(optim::scheduled_lr(1.0, 10, 100, 0.1), 1.0);
  EXPECT_DOUBLE_EQ(optim::scheduled_lr(1.0, 55, 100, 0.1), 0.5);
  EXPECT_DOUBLE_EQ(optim::scheduled_lr(1.0, 100, 100, 0.1), 0.0);
  EXPECT_DOUBLE_EQ(optim::scheduled_lr(2.0, 3, 10, 0.0), 2.0 * 7 / 10);
}

TEST(Clip, GlobalNormIsBounded) {
  Rng rng(1);
  auto cfg = tiny_run_config().encoder;
  cfg.vocab_size = 30;
  auto p = encoder::init_parameters<double>(cfg, rng);
  auto q = p;
  const double before = optim::clip_global_norm<double>({&p, &q}, 1.0);
  double sq = 0;
  for (auto* g : {&p, &q})
    for (auto* m : g->const_ptrs()) sq += m->squaredNorm();
  EXPECT_GT(before, 1.0);
  EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-9);
  EXPECT_NEAR(optim::clip_global_norm<double>({&p, &q}, 5.0), 1.0, 1e-9);
}

TEST(AdamW, FirstStepMovesBySignTimesLr) {
  Rng rng(2);
  auto cfg = tiny_run_config().encoder;
  cfg.vocab_size = 10;
  auto p = encoder::init_parameters<double>(cfg, rng);
  const auto before = p;
  auto g = p.zeros_like();
  g.token_embedding.setConstant(3.0);
  optim::AdamW<double> opt({.weight_decay = 0.0}, {&p});
  opt.step({&p}, {&g}, 0.01);
  Matrix<double> moved = before.token_embedding - p.token_embedding;
  EXPECT_NEAR(moved.minCoeff(), 0.01, 1e-8);
  EXPECT_NEAR(moved.maxCoeff(), 0.01, 1e-8);
  EXPECT_EQ(p.position_embedding, before.position_embedding);
}

TEST(EpochOrder, PermutationSeededPerEpochAndStage) {
  std::vector<std::size_t> train(20);
  std::iota(train.begin(), train.end(), 0);
  auto a = training::epoch_order(train, 1, 0, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  EXPECT_EQ(sorted, train);
  EXPECT_EQ(a, training::epoch_order(train, 1, 0, 0));
  EXPECT_NE(a, training::epoch_order(train, 1, 1, 0));
  EXPECT_NE(a, training::epoch_order(train, 1, 0, 1));
}

TEST(Pretrain, ZeroStepsLeavesInitialWeights) {
  TrainSetup s(0);
  auto ck = initial_checkpoint(s.cfg, s.vocab);
  const auto fp = ck.fingerprint();
  auto trace = training::pretrain(ck, s.data);
  EXPECT_TRUE(trace.empty());
  EXPECT_EQ(ck.fingerprint(), fp);
  EXPECT_EQ(ck.step, 0u);
}

TEST(Pretrain, DeterministicUnderFixedSeed) {
  TrainSetup s(6);
  auto a = initial_checkpoint(s.cfg, s.vocab);
  auto b = initial_checkpoint(s.cfg, s.vocab);
  auto ta = training::pretrain(a, s.data);
  auto tb = training::pretrain(b, s.data);
  ASSERT_EQ(ta.size(), 6u);
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_EQ(ta[i].loss, tb[i].loss);
  EXPECT_EQ(a.fingerprint(), b.fingerprint());

  auto other = s.cfg;
  other.training.seed = 99;
  auto c = initial_checkpoint(other, s.vocab);
  training::pretrain(c, s.data);
  EXPECT_NE(a.fingerprint(), c.fingerprint());
}

TEST(Pretrain, ResumeMatchesUninterruptedRun) {
  TrainSetup s(12);
  TempDir dir("resume");
  auto full = initial_checkpoint(s.cfg, s.vocab);
  training::pretrain(full, s.data);

  auto first = initial_checkpoint(s.cfg, s.vocab);
  training::pretrain(first, s.data, {.out_dir = dir.path(), .stop_at = 5, .audit = nullptr});
  EXPECT_EQ(first.step, 5u);
  auto resumed = load_checkpoint(dir / "pretrain.ckpt");
  EXPECT_EQ(resumed.step, 5u);
  training::pretrain(resumed, s.data, {.out_dir = dir.path(), .stop_at = std::nullopt, .audit = nullptr});
  EXPECT_EQ(resumed.step, 12u);
  EXPECT_LT(max_param_diff(full, resumed), 1e-5);
  EXPECT_EQ(full.fingerprint(), resumed.fingerprint());
  EXPECT_EQ(full.model.code_queue.entries(), resumed.model.code_queue.entries());
  EXPECT_EQ(resumed.metadata["loss_trace"].size(), 12u);
  // header plus one row per step across both invocations
  EXPECT_EQ(count_lines(dir / "pretrain_metrics.csv"), 13u);
  EXPECT_EQ(count_lines(dir / "pretrain_metrics.jsonl"), 12u);
}

TEST(Pretrain, PeriodicCheckpoints) {
  TrainSetup s(6);
  s.cfg.training.checkpoint_every = 2;
  TempDir dir("periodic");
  auto ck = initial_checkpoint(s.cfg, s.vocab);
  training::pretrain(ck, s.data, {.out_dir = dir.path(), .stop_at = std::nullopt, .audit = nullptr});
  EXPECT_TRUE(std::filesystem::exists(dir / "pretrain-step2.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "pretrain-step4.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "pretrain.ckpt"));
  EXPECT_EQ(load_checkpoint(dir / "pretrain-step4.ckpt").step, 4u);
}

TEST(Pretrain, LossTrendsDownward) {
  TrainSetup s(60);
  auto ck = initial_checkpoint(s.cfg, s.vocab);
  auto trace = training::pretrain(ck, s.data);
  // least-squares slope of loss against step
  double n = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& r : trace) {
    ASSERT_FALSE(r.skipped);
    n += 1;
    sx += double(r.step);
    sy += r.loss;
    sxx += double(r.step) * double(r.step);
    sxy += double(r.step) * r.loss;
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  EXPECT_LT(slope, 0.0);
}

TEST(Pretrain, ThreeNonFiniteStepsAbort) {
  TrainSetup s(10);
  auto ck = initial_checkpoint(s.cfg, s.vocab);
  ck.model.live[0].params().final_ln_gamma(0, 0) = std::nanf("");
  try {
    training::pretrain(ck, s.data);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("3 consecutive"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("synth:"), std::string::npos);
  }
}

TEST(Pretrain, EmptyTrainSplitIsAnError) {
  TrainSetup s(2);
  s.data.train.clear();
  auto ck = initial_checkpoint(s.cfg, s.vocab);
  EXPECT_THROW(training::pretrain(ck, s.data), DataError);
}

TEST(Pretrain, AuditLogHasTwoRecordsPerSample) {
  TrainSetup s(2);
  auto ck = initial_checkpoint(s.cfg, s.vocab);
  std::ostringstream audit;
  training::pretrain(ck, s.data, {.out_dir = std::nullopt, .stop_at = std::nullopt, .audit = &audit});
  std::istringstream in(audit.str());
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::json::parse(line);
    EXPECT_TRUE(j["modality"] == "code" || j["modality"] == "query");
    ++n;
  }
  EXPECT_EQ(n, 2u * 2u * 4u);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  TrainSetup s(3);
  auto ck = initial_checkpoint(s.cfg, s.vocab);
  training::pretrain(ck, s.data);
  TempDir dir("ckpt");
  save_checkpoint(ck, dir / "a.ckpt");
  auto back = load_checkpoint(dir / "a.ckpt");
  EXPECT_EQ(back.fingerprint(), ck.fingerprint());
  EXPECT_EQ(back.stage, "pretrain");
  EXPECT_EQ(back.step, 3u);
  EXPECT_EQ(back.vocab, ck.vocab);
  EXPECT_EQ(back.optimizer.steps_taken(), 3u);
  EXPECT_EQ(back.model.query_queue.write_head(), ck.model.query_queue.write_head());
  EXPECT_EQ(back.model.momentum[0].params().token_embedding, ck.model.momentum[0].params().token_embedding);
  EXPECT_EQ(back.optimizer.second_moments()[0].token_embedding, ck.optimizer.second_moments()[0].token_embedding);
}

TEST(Checkpoint, CorruptionIsDetected) {
  TrainSetup s(0);
  auto ck = initial_checkpoint(s.cfg, s.vocab);
  TempDir dir("ckpt");
  save_checkpoint(ck, dir / "a.ckpt");
  const auto size = std::filesystem::file_size(dir / "a.ckpt");
  std::filesystem::copy_file(dir / "a.ckpt", dir / "b.ckpt");
  std::filesystem::resize_file(dir / "b.ckpt", size / 2);
  EXPECT_THROW(load_checkpoint(dir / "b.ckpt"), DataError);
  {
    std::fstream f(dir / "a.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(static_cast<std::streamoff>(size / 2));
    f.put('\x7f');
  }
  EXPECT_THROW(load_checkpoint(dir / "a.ckpt"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
}

TEST(Finetune, SelectsEarliestBestEpoch) {
  EXPECT_EQ(training::argmax_earliest(std::vector<double>{0.3, 0.5, 0.4}), 1u);
  EXPECT_EQ(training::argmax_earliest(std::vector<double>{0.5, 0.5, 0.2}), 0u);
  EXPECT_EQ(training::argmax_earliest(std::vector<double>{0.7}), 0u);
  EXPECT_THROW(training::argmax_earliest(std::vector<double>{}), std::invalid_argument);
}

TEST(Finetune, HistoryAndSelection) {
  TrainSetup s(4);
  s.cfg.training.epochs = 3;
  auto ck = initial_checkpoint(s.cfg, s.vocab);
  training::pretrain(ck, s.data);
  TempDir dir("ft");
  auto res = training::finetune(ck, s.data, {.out_dir = dir.path()});
  ASSERT_EQ(res.valid_mrr.size(), 3u);
  EXPECT_EQ(res.epochs, (std::vector<std::size_t>{1, 2, 3}));
  EXPECT_EQ(res.best_epoch, training::argmax_earliest(res.valid_mrr) + 1);
  EXPECT_DOUBLE_EQ(res.best_mrr, res.valid_mrr[res.best_epoch - 1]);
  EXPECT_EQ(res.best.stage, "finetune");
  EXPECT_EQ(res.best.metadata["best_epoch"], res.best_epoch);
  // the selected weights reproduce the recorded validation MRR
  auto again = training::zero_shot_eval(res.best, s.data, corpus::Split::valid);
  EXPECT_NEAR(again.mrr, res.best_mrr, 1e-12);
  auto loaded = load_checkpoint(dir / "finetune.ckpt");
  EXPECT_EQ(loaded.fingerprint(), res.best.fingerprint());
  EXPECT_EQ(count_lines(dir / "finetune_metrics.csv"), 4u);
}

TEST(Finetune, EvalEveryAlwaysIncludesLastEpoch) {
  TrainSetup s(0);
  s.cfg.training.epochs = 3;
  s.cfg.training.eval_every = 2;
  auto res = training::finetune(initial_checkpoint(s.cfg, s.vocab), s.data);
  EXPECT_EQ(res.epochs, (std::vector<std::size_t>{2, 3}));
}

TEST(Finetune, SingleEpochIsSelected) {
  TrainSetup s(0);
  s.cfg.training.epochs = 1;
  auto res = training::finetune(initial_checkpoint(s.cfg, s.vocab), s.data);
  EXPECT_EQ(res.best_epoch, 1u);
}

TEST(Finetune, RequiresValidSplit) {
  TrainSetup s(0, 0);
  EXPECT_THROW(training::finetune(initial_checkpoint(s.cfg, s.vocab), s.data), DataError);
}

TEST(ZeroShot, DoesNotChangeWeights) {
  TrainSetup s(0);
  auto ck = initial_checkpoint(s.cfg, s.vocab);
  const auto fp = ck.fingerprint();
  auto r = training::zero_shot_eval(ck, s.data);
  EXPECT_EQ(ck.fingerprint(), fp);
  EXPECT_EQ(r.pool_size, 8u);
  EXPECT_EQ(r.query_count, 8u);
}

TEST(Sweep, OneRowPerValueAndFailuresAreRecorded) {
  TrainSetup s(3);
  s.cfg.training.epochs = 1;
  std::vector<training::SweepRow> seen;
  auto rows = training::sweep({{"m", {0.91, 0.999}}, {"tau", {-1.0}}}, s.cfg, s.data, s.vocab,
                              [&](const training::SweepRow& r) { seen.push_back(r); });
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(seen.size(), 3u);
  EXPECT_TRUE(rows[0].mrr.has_value());
  EXPECT_TRUE(rows[1].mrr.has_value());
  EXPECT_FALSE(rows[2].mrr.has_value());
  EXPECT_FALSE(rows[2].error.empty());
  EXPECT_EQ(training::sweep_csv_header(), "hyperparameter,value,mrr,seconds,error");
  const auto line = training::sweep_csv_row(rows[0]);
  EXPECT_EQ(line.rfind("m,0.91,", 0), 0u);
  EXPECT_THROW(training::sweep({{"depth", {1}}}, s.cfg, s.data, s.vocab), std::invalid_argument);
}

TEST(Sweep, ApplyValue) {
  auto cfg = tiny_run_config();
  training::apply_sweep_value(cfg, "lr", 0.5);
  EXPECT_EQ(cfg.training.lr, 0.5);
  EXPECT_EQ(cfg.training.finetune_lr, 0.5);
  training::apply_sweep_value(cfg, "r", 0.3);
  EXPECT_EQ(cfg.augmentation.ratio, 0.3);
  training::apply_sweep_value(cfg, "tau", 0.2);
  EXPECT_EQ(cfg.contrastive.temperature, 0.2);
}
