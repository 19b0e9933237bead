#pragma once

// Resolved run configuration and the named presets.

#include "cocosoda/contrastive.hpp"
#include "cocosoda/encoder.hpp"
#include "cocosoda/pretrain.hpp"
#include "cocosoda/soda.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>

namespace cocosoda {

struct TrainingConfig {
  std::size_t steps = 500;   // pre-training steps
  std::size_t epochs = 5;    // fine-tuning epochs
  double lr = 2e-5;
  double finetune_lr = 2e-5;
  double warmup_frac = 0.1;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // steps; 0 writes only the final checkpoint
  std::size_t eval_every = 1;        // fine-tuning epochs between validations
  std::size_t vocab_size = 8192;
  std::size_t log_every = 50;

  void validate() const {
    if (!(lr > 0.0) || !(finetune_lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) throw std::invalid_argument("warmup_frac must be in [0,1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight_decay must be non-negative");
    if (eval_every == 0) throw std::invalid_argument("eval_every must be positive");
  }
};

struct RunConfig {
  std::string preset = "toy";
  encoder::EncoderConfig encoder;
  contrastive::ContrastiveConfig contrastive;
  soda::AugmentationConfig augmentation;
  contrastive::SequenceLimits limits;
  TrainingConfig training;

  void validate() const {
    contrastive.validate();
    augmentation.validate();
    training.validate();
    if (std::max(limits.max_code_len, limits.max_query_len) > encoder.max_len)
      throw std::invalid_argument("sequence limits exceed the encoder's max_len");
    if (limits.max_code_len < 2 || limits.max_query_len < 2)
      throw std::invalid_argument("sequence limits must be at least 2");
  }
};

/// CPU-sized defaults used by tests and demos. Learning rates are raised
/// from 2e-5 because these encoders start from random weights.
inline RunConfig toy_preset() {
  RunConfig c;
  c.preset = "toy";
  c.encoder = encoder::EncoderConfig::toy();
  c.contrastive = contrastive::ContrastiveConfig::toy();
  c.limits = {128, 256};
  c.training.steps = 500;
  c.training.epochs = 5;
  c.training.lr = 1e-3;
  c.training.finetune_lr = 5e-4;
  c.training.vocab_size = 8192;
  return c;
}

/// Published hyperparameters: 12x768x12 encoder, K=4096, bs=128,
/// 100K pre-training steps, 5 fine-tuning epochs, AdamW lr 2e-5,
/// tau 0.07, m 0.999, 51,451-token vocabulary.
inline RunConfig paper_preset() {
  RunConfig c;
  c.preset = "paper";
  c.encoder = encoder::EncoderConfig::paper();
  c.contrastive = contrastive::ContrastiveConfig::paper();
  c.limits = {128, 256};
  c.training.steps = 100000;
  c.training.epochs = 5;
  c.training.lr = 2e-5;
  c.training.finetune_lr = 2e-5;
  c.training.vocab_size = 51451;
  return c;
}

inline RunConfig preset_by_name(std::string_view name) {
  if (name == "toy") return toy_preset();
  if (name == "paper") return paper_preset();
  throw std::invalid_argument("unknown preset '" + std::string(name) + "' (expected toy or paper)");
}

inline nlohmann::json to_json(const soda::AugmentationConfig& a) {
  nlohmann::json methods = nlohmann::json::array(), kinds = nlohmann::json::array();
  for (auto m : a.methods) methods.push_back(soda::method_name(m));
  for (auto k : a.specified_type_candidates) kinds.push_back(lexing::kind_name(k));
  return {{"ratio", a.ratio}, {"methods", methods}, {"specified_type_candidates", kinds}};
}

inline soda::AugmentationConfig augmentation_from_json(const nlohmann::json& j, soda::AugmentationConfig a = {}) {
  a.ratio = j.value("ratio", a.ratio);
  if (j.contains("methods")) {
    a.methods.clear();
    for (const auto& m : j.at("methods")) a.methods.push_back(soda::method_from_name(m.get<std::string>()));
  }
  if (j.contains("specified_type_candidates")) {
    a.specified_type_candidates.clear();
    for (const auto& k : j.at("specified_type_candidates")) {
      auto kind = lexing::kind_from_name(k.get<std::string>());
      if (!kind) throw std::invalid_argument("unknown token kind '" + k.get<std::string>() + "'");
      a.specified_type_candidates.push_back(*kind);
    }
  }
  return a;
}

inline nlohmann::json to_json(const TrainingConfig& t) {
  return {{"steps", t.steps},
          {"epochs", t.epochs},
          {"lr", t.lr},
          {"finetune_lr", t.finetune_lr},
          {"warmup_frac", t.warmup_frac},
          {"weight_decay", t.weight_decay},
          {"grad_clip", t.grad_clip},
          {"seed", t.seed},
          {"checkpoint_every", t.checkpoint_every},
          {"eval_every", t.eval_every},
          {"vocab_size", t.vocab_size},
          {"log_every", t.log_every}};
}

inline TrainingConfig training_from_json(const nlohmann::json& j, TrainingConfig t = {}) {
  t.steps = j.value("steps", t.steps);
  t.epochs = j.value("epochs", t.epochs);
  t.lr = j.value("lr", t.lr);
  t.finetune_lr = j.value("finetune_lr", t.finetune_lr);
  t.warmup_frac = j.value("warmup_frac", t.warmup_frac);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.grad_clip = j.value("grad_clip", t.grad_clip);
  t.seed = j.value("seed", t.seed);
  t.checkpoint_every = j.value("checkpoint_every", t.checkpoint_every);
  t.eval_every = j.value("eval_every", t.eval_every);
  t.vocab_size = j.value("vocab_size", t.vocab_size);
  t.log_every = j.value("log_every", t.log_every);
  return t;
}

inline nlohmann::json to_json(const RunConfig& c) {
  return {{"version", 1},
          {"preset", c.preset},
          {"encoder", encoder::to_json(c.encoder)},
          {"contrastive", contrastive::to_json(c.contrastive)},
          {"augmentation", to_json(c.augmentation)},
          {"limits", {{"max_code_len", c.limits.max_code_len}, {"max_query_len", c.limits.max_query_len}}},
          {"training", to_json(c.training)}};
}

/// Fields absent from `j` keep the values of the named preset.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  if (j.value("version", 1) != 1) throw DataError("unsupported config version");
  RunConfig c = preset_by_name(j.value("preset", std::string("toy")));
  if (j.contains("encoder")) c.encoder = encoder::encoder_config_from_json(j.at("encoder"), c.encoder);
  if (j.contains("contrastive"))
    c.contrastive = contrastive::contrastive_config_from_json(j.at("contrastive"), c.contrastive);
  if (j.contains("augmentation")) c.augmentation = augmentation_from_json(j.at("augmentation"), c.augmentation);
  if (j.contains("limits")) {
    c.limits.max_code_len = j.at("limits").value("max_code_len", c.limits.max_code_len);
    c.limits.max_query_len = j.at("limits").value("max_query_len", c.limits.max_query_len);
  }
  if (j.contains("training")) c.training = training_from_json(j.at("training"), c.training);
  return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw DataError(path.string() + ": invalid JSON");
  return run_config_from_json(j);
}

}  // namespace cocosoda
