#pragma once

// Read-only HTTP facade: /api/search, /api/health, /api/stats, static UI at /.

#include "cocosoda/index.hpp"

#include <httplib.h>
#include <json.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

namespace cocosoda::service {

inline constexpr std::size_t kMaxK = 100;
inline constexpr std::size_t kDefaultK = 10;

struct Bind {
  std::string host = "127.0.0.1";
  int port = 8080;
};

inline Bind parse_bind(std::string_view s) {
  Bind b;
  const auto colon = s.rfind(':');
  std::string_view port_part = s;
  if (colon != std::string_view::npos) {
    if (colon > 0) b.host = std::string(s.substr(0, colon));
    port_part = s.substr(colon + 1);
  }
  int port = 0;
  auto [p, ec] = std::from_chars(port_part.data(), port_part.data() + port_part.size(), port);
  if (ec != std::errc() || p != port_part.data() + port_part.size() || port < 0 || port > 65535)
    throw std::invalid_argument("invalid bind address '" + std::string(s) + "' (expected host:port)");
  b.port = port;
  return b;
}

/// flag > environment > default.
inline std::string resolve(const std::optional<std::string>& flag, const char* env, std::string fallback) {
  if (flag && !flag->empty()) return *flag;
  if (const char* v = std::getenv(env); v && *v) return v;
  return fallback;
}

struct Response {
  int status = 200;
  nlohmann::json body;
};

class SearchService {
 public:
  /// Throws index::StaleIndexError when the index was built from other weights.
  SearchService(index::EmbeddingIndex ix, Checkpoint ck) : ix_(std::move(ix)), ck_(std::move(ck)) {
    index::require_fresh(ix_, ck_);
    fingerprint_ = ck_.fingerprint();
  }

  [[nodiscard]] const index::EmbeddingIndex& index() const { return ix_; }

  [[nodiscard]] Response search(const std::optional<std::string>& q, const std::optional<std::string>& k_text) const {
    if (!q || split_whitespace(*q).empty()) return error(400, "missing or empty query parameter 'q'");
    std::size_t k = kDefaultK;
    if (k_text) {
      long long v = 0;
      const auto& s = *k_text;
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size() || v < 1 || v > static_cast<long long>(kMaxK))
        return error(400, "k must be an integer in [1, " + std::to_string(kMaxK) + "]");
      k = static_cast<std::size_t>(v);
    }
    return {200, index::search_response(*q, k, index::search(ix_, ck_, *q, k))};
  }

  [[nodiscard]] Response health() const {
    return {200, {{"v", 1}, {"status", "ok"}, {"fingerprint", fingerprint_}, {"pool_size", ix_.size()}}};
  }

  [[nodiscard]] Response stats() const {
    std::map<std::string, std::size_t> langs;
    for (const auto& e : ix_.entries) ++langs[e.language];
    return {200,
            {{"v", 1},
             {"fingerprint", ix_.fingerprint},
             {"count", ix_.size()},
             {"dim", ix_.dim()},
             {"languages", langs},
             {"info", ix_.info},
             {"checkpoint", {{"stage", ck_.stage}, {"step", ck_.step}, {"preset", ck_.config.preset}}}}};
  }

  /// Registers the API routes and the static site on `server`.
  void install(httplib::Server& server, const std::optional<std::filesystem::path>& static_dir) const {
    auto send = [](httplib::Response& res, const Response& r) {
      res.status = r.status;
      res.set_content(r.body.dump(), "application/json");
    };
    auto param = [](const httplib::Request& req, const char* name) -> std::optional<std::string> {
      if (!req.has_param(name)) return std::nullopt;
      return req.get_param_value(name);
    };
    server.Get("/api/search", [this, send, param](const httplib::Request& req, httplib::Response& res) {
      try {
        send(res, search(param(req, "q"), param(req, "k")));
      } catch (const std::exception& e) {
        send(res, error(500, e.what()));
      }
    });
    server.Get("/api/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    server.Get("/api/stats", [this, send](const httplib::Request&, httplib::Response& res) { send(res, stats()); });
    if (static_dir && std::filesystem::is_directory(*static_dir)) {
      server.set_mount_point("/", static_dir->string());
    } else {
      server.Get("/", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(kFallbackPage, "text/html; charset=utf-8");
      });
    }
  }

 private:
  static Response error(int status, const std::string& msg) { return {status, {{"v", 1}, {"error", msg}}}; }

  // Served when no web UI build is configured.
  static constexpr const char* kFallbackPage = R"(<!doctype html>
<html><head><meta charset="utf-8"><title>cocosoda</title></head>
<body>
<form id="f"><input id="q" size="60" placeholder="describe the code you want"> <input id="k" type="number" value="10" min="1" max="100"> <button>search</button></form>
<ol id="hits"></ol>
<script>
document.getElementById('f').onsubmit = async (e) => {
  e.preventDefault();
  const q = document.getElementById('q').value, k = document.getElementById('k').value;
  const r = await fetch('/api/search?q=' + encodeURIComponent(q) + '&k=' + k);
  const body = await r.json();
  const ol = document.getElementById('hits');
  ol.innerHTML = '';
  if (!r.ok) { ol.textContent = body.error; return; }
  for (const h of body.hits) {
    const li = document.createElement('li');
    const pre = document.createElement('pre');
    pre.textContent = h.snippet;
    li.textContent = h.score.toFixed(3) + '  ' + h.id + '  ' + h.source;
    li.appendChild(pre);
    ol.appendChild(li);
  }
};
</script>
</body></html>
)";

  index::EmbeddingIndex ix_;
  Checkpoint ck_;
  std::string fingerprint_;
};

}  // namespace cocosoda::service
