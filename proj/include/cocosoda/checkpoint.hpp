#pragma once

// Checkpoint container.
//
//   "CCSDCKPT"  magic (8 bytes)
//   u32         format version
//   u8          endianness (1 = little; all numbers below are little-endian)
//   str         header JSON: stage, step, seed, run config, vocabulary and its
//               hash, rng state, queue write heads, optimizer step, metadata,
//               and the tensor directory [{name, rows, cols}] in blob order
//   u64 + f32[] tensor blob, row-major
//   u32         CRC-32 of all preceding bytes

#include "cocosoda/binary_io.hpp"
#include "cocosoda/config.hpp"
#include "cocosoda/corpus.hpp"
#include "cocosoda/optim.hpp"
#include "cocosoda/pretrain.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>

namespace cocosoda {

inline constexpr char kCheckpointMagic[8] = {'C', 'C', 'S', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using Model = contrastive::BiEncoderModel<float>;

struct Checkpoint {
  std::string stage = "init";  // init | pretrain | finetune
  std::uint64_t step = 0;
  RunConfig config;
  corpus::Vocabulary vocab;
  Model model;
  optim::AdamW<float> optimizer;
  std::string rng_state;
  nlohmann::json metadata = nlohmann::json::object();

  /// Hash of the live encoder weights and the vocabulary.
  [[nodiscard]] std::string fingerprint() const {
    Fnv1a h;
    h.update(vocab.hash());
    for (const auto& enc : model.live)
      for (const auto* m : enc.params().const_ptrs())
        h.update(m->data(), static_cast<std::size_t>(m->size()) * sizeof(float));
    return h.hex();
  }
};

/// Fresh checkpoint: random encoder(s), momentum copies, random unit queues.
inline Checkpoint initial_checkpoint(const RunConfig& cfg, const corpus::Vocabulary& vocab) {
  Checkpoint ck;
  ck.config = cfg;
  ck.config.encoder.vocab_size = vocab.size();
  ck.config.encoder.max_len = std::max({ck.config.encoder.max_len, cfg.limits.max_code_len, cfg.limits.max_query_len});
  ck.config.validate();
  ck.vocab = vocab;
  ck.model = Model::create(ck.config.encoder, ck.config.contrastive.queue_size, cfg.training.seed);
  ck.optimizer = optim::AdamW<float>({.weight_decay = cfg.training.weight_decay}, ck.model.live_params_const());
  ck.rng_state = rng_state(derive_rng(cfg.training.seed, 0));
  return ck;
}

namespace detail {

struct TensorSink {
  nlohmann::json directory = nlohmann::json::array();
  std::vector<const Matrix<float>*> order;

  void add(const std::string& name, const Matrix<float>& m) {
    directory.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}});
    order.push_back(&m);
  }

  void add_params(const std::string& prefix, encoder::Parameters<float>& p) {
    for (auto& t : p.tensors()) add(prefix + t.name, *t.value);
  }
};

}  // namespace detail

inline void save_checkpoint(const Checkpoint& ck_in, const std::filesystem::path& path) {
  auto& ck = const_cast<Checkpoint&>(ck_in);  // tensors() is non-const; nothing is modified
  detail::TensorSink sink;
  for (std::size_t i = 0; i < ck.model.live.size(); ++i) {
    sink.add_params("live." + std::to_string(i) + ".", ck.model.live[i].params());
    auto mom = const_cast<encoder::Parameters<float>*>(&ck.model.momentum[i].params());
    sink.add_params("momentum." + std::to_string(i) + ".", *mom);
  }
  auto& m1 = ck.optimizer.first_moments();
  auto& m2 = ck.optimizer.second_moments();
  for (std::size_t i = 0; i < m1.size(); ++i) {
    sink.add_params("adam_m." + std::to_string(i) + ".", m1[i]);
    sink.add_params("adam_v." + std::to_string(i) + ".", m2[i]);
  }
  sink.add("queue.code", ck.model.code_queue.entries());
  sink.add("queue.query", ck.model.query_queue.entries());

  nlohmann::json header = {
      {"stage", ck.stage},
      {"step", ck.step},
      {"config", to_json(ck.config)},
      {"vocab", ck.vocab.to_json()},
      {"vocab_hash", ck.vocab.hash()},
      {"rng_state", ck.rng_state},
      {"queue_heads", {ck.model.code_queue.write_head(), ck.model.query_queue.write_head()}},
      {"encoders", ck.model.live.size()},
      {"optimizer_groups", m1.size()},
      {"optimizer_steps", ck.optimizer.steps_taken()},
      {"fingerprint", ck.fingerprint()},
      {"metadata", ck.metadata},
      {"tensors", sink.directory},
  };

  io::ByteWriter w;
  w.bytes(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint8_t>(io::kLittleEndian);
  w.str(header.dump());
  std::uint64_t total = 0;
  for (const auto* m : sink.order) total += static_cast<std::uint64_t>(m->size());
  w.put<std::uint64_t>(total);
  for (const auto* m : sink.order) w.floats(m->data(), static_cast<std::size_t>(m->size()));
  w.seal();
  w.write_file(path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto r = io::ByteReader::from_file(path);
  r.verify_seal(path.string());
  char magic[8];
  r.bytes(magic, sizeof(magic));
  if (std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) throw DataError(path.string() + ": not a checkpoint");
  if (auto v = r.get<std::uint32_t>(); v != kCheckpointVersion)
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(v));
  if (r.get<std::uint8_t>() != io::kLittleEndian) throw DataError(path.string() + ": unsupported endianness");
  auto header = nlohmann::json::parse(r.str(), nullptr, false);
  if (header.is_discarded()) throw DataError(path.string() + ": corrupt header");

  std::map<std::string, Matrix<float>> tensors;
  const auto total = r.get<std::uint64_t>();
  std::uint64_t consumed = 0;
  for (const auto& t : header.at("tensors")) {
    const auto rows = t.at("rows").get<Eigen::Index>();
    const auto cols = t.at("cols").get<Eigen::Index>();
    Matrix<float> m(rows, cols);
    r.floats(m.data(), static_cast<std::size_t>(m.size()));
    consumed += static_cast<std::uint64_t>(m.size());
    tensors.emplace(t.at("name").get<std::string>(), std::move(m));
  }
  if (consumed != total || r.remaining() != 0) throw DataError(path.string() + ": tensor blob size mismatch");

  Checkpoint ck;
  ck.stage = header.at("stage").get<std::string>();
  ck.step = header.at("step").get<std::uint64_t>();
  ck.config = run_config_from_json(header.at("config"));
  ck.vocab = corpus::Vocabulary::from_json(header.at("vocab"));
  if (ck.vocab.hash() != header.at("vocab_hash").get<std::string>()) throw DataError("vocabulary hash mismatch");
  ck.rng_state = header.at("rng_state").get<std::string>();
  ck.metadata = header.value("metadata", nlohmann::json::object());

  auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw DataError(path.string() + ": missing tensor " + name);
    return std::move(it->second);
  };
  const auto& cfg = ck.config.encoder;
  auto template_params = [&] {
    auto rng = derive_rng(0, 0);
    return encoder::init_parameters<float>(cfg, rng).zeros_like();
  }();
  auto load_params = [&](const std::string& prefix) {
    auto p = template_params;
    for (auto& t : p.tensors()) {
      auto m = take(prefix + t.name);
      if (m.rows() != t.value->rows() || m.cols() != t.value->cols())
        throw DataError(path.string() + ": shape mismatch for " + prefix + t.name);
      *t.value = std::move(m);
    }
    return p;
  };

  const auto n_enc = header.at("encoders").get<std::size_t>();
  ck.model.config = cfg;
  for (std::size_t i = 0; i < n_enc; ++i) {
    ck.model.live.emplace_back(cfg, load_params("live." + std::to_string(i) + "."));
    ck.model.momentum.push_back(
        encoder::MomentumEncoder<float>::restore(cfg, load_params("momentum." + std::to_string(i) + ".")));
  }
  const auto heads = header.at("queue_heads").get<std::vector<std::size_t>>();
  ck.model.code_queue = contrastive::NegativeQueue<float>::restore(take("queue.code"), heads.at(0));
  ck.model.query_queue = contrastive::NegativeQueue<float>::restore(take("queue.query"), heads.at(1));

  ck.optimizer = optim::AdamW<float>({.weight_decay = ck.config.training.weight_decay}, ck.model.live_params_const());
  const auto groups = header.at("optimizer_groups").get<std::size_t>();
  for (std::size_t i = 0; i < groups; ++i) {
    ck.optimizer.first_moments()[i] = load_params("adam_m." + std::to_string(i) + ".");
    ck.optimizer.second_moments()[i] = load_params("adam_v." + std::to_string(i) + ".");
  }
  ck.optimizer.set_steps_taken(header.at("optimizer_steps").get<std::size_t>());
  if (header.contains("fingerprint") && header.at("fingerprint").get<std::string>() != ck.fingerprint())
    throw DataError(path.string() + ": fingerprint mismatch");
  return ck;
}

}  // namespace cocosoda
