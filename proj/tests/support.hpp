#pragma once

#include "cocosoda/config.hpp"
#include "cocosoda/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace testing_support {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("cocosoda-" + tag + "-" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

inline cocosoda::corpus::CodeQueryPair make_pair(std::string id, std::vector<std::string> code,
                                                 std::vector<std::string> query, std::string lang = "python") {
  cocosoda::corpus::CodeQueryPair p;
  p.id = std::move(id);
  p.language = std::move(lang);
  p.code_tokens = std::move(code);
  p.query_tokens = std::move(query);
  return p;
}

// Small enough that a few dozen steps take well under a second.
inline cocosoda::RunConfig tiny_run_config(std::size_t steps = 10) {
  auto c = cocosoda::toy_preset();
  c.encoder.layers = 1;
  c.encoder.hidden_dim = 16;
  c.encoder.heads = 2;
  c.encoder.ffn_dim = 32;
  c.encoder.max_len = 32;
  c.contrastive.batch_size = 4;
  c.contrastive.queue_size = 16;
  c.limits = {32, 32};
  c.training.steps = steps;
  c.training.epochs = 2;
  c.training.log_every = 0;
  c.training.vocab_size = 600;
  return c;
}

}  // namespace testing_support
