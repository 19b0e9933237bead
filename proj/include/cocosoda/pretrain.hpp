#pragma once

// Multimodal momentum contrastive pre-training step.
//
// Live encoder(s) embed the original code/query, momentum encoder(s) embed
// the augmented copies. Each anchor gets an inter-modal term (positive: the
// augmented sample of the other modality, negatives: that modality's queue)
// and an intra-modal term (positive: its own augmented sample, negatives: its
// own modality's queue).

#include "cocosoda/contrastive.hpp"
#include "cocosoda/corpus.hpp"
#include "cocosoda/encoder.hpp"
#include "cocosoda/optim.hpp"
#include "cocosoda/soda.hpp"

#include <ostream>
#include <vector>

namespace cocosoda::contrastive {

using corpus::CodeQueryPair;
using corpus::EncodedSequence;
using encoder::Encoder;
using encoder::MomentumEncoder;
using encoder::Parameters;

struct SequenceLimits {
  std::size_t max_code_len = 128;
  std::size_t max_query_len = 256;
};

/// Live encoders, their momentum copies, and one negative queue per modality.
/// With share_code_query the single encoder (and momentum encoder) serves both.
template <typename S>
class BiEncoderModel {
 public:
  encoder::EncoderConfig config;
  std::vector<Encoder<S>> live;
  std::vector<MomentumEncoder<S>> momentum;
  NegativeQueue<S> code_queue;
  NegativeQueue<S> query_queue;

  static BiEncoderModel create(const encoder::EncoderConfig& cfg, std::size_t queue_size, std::uint64_t seed) {
    cfg.validate();
    BiEncoderModel m;
    m.config = cfg;
    auto init_rng = derive_rng(seed, stream::kInit);
    const std::size_t n = cfg.share_code_query ? 1 : 2;
    for (std::size_t i = 0; i < n; ++i) {
      m.live.push_back(Encoder<S>::random(cfg, init_rng));
      m.momentum.push_back(encoder::init_momentum(m.live.back()));
    }
    auto queue_rng = derive_rng(seed, stream::kQueue);
    m.code_queue = NegativeQueue<S>(queue_size, cfg.hidden_dim, queue_rng);
    m.query_queue = NegativeQueue<S>(queue_size, cfg.hidden_dim, queue_rng);
    return m;
  }

  [[nodiscard]] bool shared() const { return live.size() == 1; }
  [[nodiscard]] std::size_t query_slot() const { return shared() ? 0 : 1; }

  Encoder<S>& code_encoder() { return live[0]; }
  Encoder<S>& query_encoder() { return live[query_slot()]; }
  [[nodiscard]] const Encoder<S>& code_encoder() const { return live[0]; }
  [[nodiscard]] const Encoder<S>& query_encoder() const { return live[query_slot()]; }
  [[nodiscard]] const MomentumEncoder<S>& momentum_code() const { return momentum[0]; }
  [[nodiscard]] const MomentumEncoder<S>& momentum_query() const { return momentum[query_slot()]; }

  std::vector<Parameters<S>*> live_params() {
    std::vector<Parameters<S>*> out;
    for (auto& e : live) out.push_back(&e.params());
    return out;
  }

  [[nodiscard]] std::vector<const Parameters<S>*> live_params_const() const {
    std::vector<const Parameters<S>*> out;
    for (const auto& e : live) out.push_back(&e.params());
    return out;
  }

  [[nodiscard]] std::vector<Parameters<S>> zero_grads() const {
    std::vector<Parameters<S>> out;
    for (const auto& e : live) out.push_back(e.params().zeros_like());
    return out;
  }
};

/// Encoded originals and augmented copies for one mini-batch.
struct PretrainInputs {
  std::vector<EncodedSequence> code, query, code_aug, query_aug;
  std::vector<soda::Augmented> code_trace, query_trace;
  std::vector<std::string> ids;
};

/// Augments every sample with its own stream derived from (seed, step, i).
inline PretrainInputs prepare_pretrain_inputs(std::span<const CodeQueryPair* const> batch,
                                              const corpus::Vocabulary& vocab, const SequenceLimits& limits,
                                              const soda::AugmentationConfig& aug, std::uint64_t seed,
                                              std::uint64_t step) {
  if (batch.empty()) throw std::invalid_argument("pretrain: empty batch");
  PretrainInputs in;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& pair = *batch[i];
    auto rng = derive_rng(seed, stream::kAugment, step, i);
    auto code_aug = soda::augment_code_traced(pair, aug, rng);
    auto query_aug = soda::augment_query_traced(pair.query_tokens, aug, rng);
    in.code.push_back(corpus::encode_tokens(pair.code_tokens, vocab, limits.max_code_len));
    in.query.push_back(corpus::encode_tokens(pair.query_tokens, vocab, limits.max_query_len));
    in.code_aug.push_back(corpus::encode_tokens(code_aug.tokens, vocab, limits.max_code_len));
    in.query_aug.push_back(corpus::encode_tokens(query_aug.tokens, vocab, limits.max_query_len));
    in.code_trace.push_back(std::move(code_aug));
    in.query_trace.push_back(std::move(query_aug));
    in.ids.push_back(pair.id);
  }
  return in;
}

template <typename S>
struct PretrainLoss {
  S total = 0;  // inter + intra, summed over the batch
  S inter = 0;
  S intra = 0;
  // Batch means of the four per-anchor terms.
  S query_inter = 0, query_intra = 0, code_inter = 0, code_intra = 0;
  Matrix<S> query_keys, code_keys;  // unit momentum representations of the augmented samples
};

/// Loss of one batch against the current queues. When `grads` is given the
/// gradient w.r.t. the live encoder(s) is accumulated into it; momentum
/// outputs and queue entries are constants.
template <typename S>
PretrainLoss<S> pretrain_loss(const BiEncoderModel<S>& model, const PretrainInputs& in, double temperature,
                              Rng* dropout_rng, std::vector<Parameters<S>>* grads) {
  const bool train = dropout_rng != nullptr;
  auto fq = model.query_encoder().forward(in.query, train, dropout_rng);
  auto fc = model.code_encoder().forward(in.code, train, dropout_rng);

  PretrainLoss<S> out;
  out.query_keys = normalize_rows<S>(model.momentum_query().encode(in.query_aug));
  out.code_keys = normalize_rows<S>(model.momentum_code().encode(in.code_aug));

  const auto& code_negs = model.code_queue.entries();
  const auto& query_negs = model.query_queue.entries();
  auto q_inter = info_nce_rows<S>(fq.reps, out.code_keys, code_negs, temperature);
  auto q_intra = info_nce_rows<S>(fq.reps, out.query_keys, query_negs, temperature);
  auto c_inter = info_nce_rows<S>(fc.reps, out.query_keys, query_negs, temperature);
  auto c_intra = info_nce_rows<S>(fc.reps, out.code_keys, code_negs, temperature);

  out.inter = q_inter.losses.sum() + c_inter.losses.sum();
  out.intra = q_intra.losses.sum() + c_intra.losses.sum();
  out.total = out.inter + out.intra;
  const S n = S(in.code.size());
  out.query_inter = q_inter.losses.sum() / n;
  out.query_intra = q_intra.losses.sum() / n;
  out.code_inter = c_inter.losses.sum() / n;
  out.code_intra = c_intra.losses.sum() / n;
  if (!std::isfinite(static_cast<double>(out.total))) throw NumericError("pretrain: non-finite loss");

  if (grads) {
    Matrix<S> d_query = q_inter.d_anchors + q_intra.d_anchors;
    Matrix<S> d_code = c_inter.d_anchors + c_intra.d_anchors;
    model.query_encoder().backward(fq.cache, d_query, (*grads)[model.query_slot()]);
    model.code_encoder().backward(fc.cache, d_code, (*grads)[0]);
  }
  return out;
}

struct StepSettings {
  double temperature = 0.07;
  double momentum = 0.999;
  double lr = 2e-5;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

template <typename S>
struct StepResult {
  PretrainLoss<S> loss;
  double grad_norm = 0.0;
  PretrainInputs inputs;
};

/// Augment, encode, loss, backprop, AdamW, EMA update, enqueue, in that
/// order. Throws NumericError (leaving all state untouched) when the loss or
/// gradient is non-finite.
template <typename S>
StepResult<S> pretrain_step(std::span<const CodeQueryPair* const> batch, BiEncoderModel<S>& model,
                            optim::AdamW<S>& optimizer, const corpus::Vocabulary& vocab,
                            const SequenceLimits& limits, const soda::AugmentationConfig& aug,
                            const StepSettings& settings, std::ostream* audit = nullptr) {
  StepResult<S> res;
  res.inputs = prepare_pretrain_inputs(batch, vocab, limits, aug, settings.seed, settings.step);
  auto grads = model.zero_grads();
  auto dropout_rng = derive_rng(settings.seed, stream::kDropout, settings.step);
  res.loss = pretrain_loss(model, res.inputs, settings.temperature, &dropout_rng, &grads);

  std::vector<Parameters<S>*> grad_ptrs;
  for (auto& g : grads) grad_ptrs.push_back(&g);
  for (auto* g : grad_ptrs)
    if (!g->all_finite()) throw NumericError("pretrain: non-finite gradient");
  res.grad_norm = optim::clip_global_norm(grad_ptrs, settings.grad_clip);
  optimizer.step(model.live_params(), grad_ptrs, settings.lr);

  for (std::size_t i = 0; i < model.live.size(); ++i)
    encoder::momentum_update(model.live[i], model.momentum[i], settings.momentum);
  model.code_queue.enqueue(res.loss.code_keys);
  model.query_queue.enqueue(res.loss.query_keys);

  if (audit) {
    for (std::size_t i = 0; i < res.inputs.ids.size(); ++i) {
      soda::write_audit(*audit, settings.step, res.inputs.ids[i], "code", res.inputs.code_trace[i]);
      soda::write_audit(*audit, settings.step, res.inputs.ids[i], "query", res.inputs.query_trace[i]);
    }
  }
  return res;
}

}  // namespace cocosoda::contrastive
