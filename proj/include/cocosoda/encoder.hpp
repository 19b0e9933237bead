#pragma once

// Bidirectional Transformer encoder (pre-LN), mean-pooled sequence
// representation, and the momentum copy updated by EMA.
//
// A batch is packed into one (total_tokens x hidden) matrix: only mask-on
// positions are materialized, each keeping its original position index, so
// pad positions are excluded from attention and pooling by construction.
// Attention runs per sequence; all dense layers run on the packed matrix.

#include "cocosoda/common.hpp"
#include "cocosoda/corpus.hpp"

#include <json.hpp>

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace cocosoda::encoder {

struct EncoderConfig {
  std::size_t layers = 2;
  std::size_t hidden_dim = 128;
  std::size_t heads = 4;
  std::size_t ffn_dim = 512;
  double dropout = 0.1;
  std::size_t max_len = 256;
  std::size_t vocab_size = 0;
  bool share_code_query = true;

  void validate() const {
    if (layers == 0 || hidden_dim == 0 || heads == 0 || ffn_dim == 0 || max_len == 0)
      throw std::invalid_argument("encoder dimensions must be positive");
    if (hidden_dim % heads != 0) throw std::invalid_argument("hidden_dim must be divisible by heads");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must be in [0,1)");
    if (vocab_size == 0) throw std::invalid_argument("vocab_size must be positive");
  }

  /// 12 layers, 768 hidden, 12 heads (the UniXcoder-sized backbone).
  static EncoderConfig paper() {
    EncoderConfig c;
    c.layers = 12;
    c.hidden_dim = 768;
    c.heads = 12;
    c.ffn_dim = 3072;
    c.dropout = 0.1;
    c.max_len = 256;
    return c;
  }

  static EncoderConfig toy() { return EncoderConfig{}; }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"layers", c.layers},   {"hidden_dim", c.hidden_dim}, {"heads", c.heads},
          {"ffn_dim", c.ffn_dim}, {"dropout", c.dropout},       {"max_len", c.max_len},
          {"vocab_size", c.vocab_size}, {"share_code_query", c.share_code_query}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j, EncoderConfig c = {}) {
  c.layers = j.value("layers", c.layers);
  c.hidden_dim = j.value("hidden_dim", c.hidden_dim);
  c.heads = j.value("heads", c.heads);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.dropout = j.value("dropout", c.dropout);
  c.max_len = j.value("max_len", c.max_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.share_code_query = j.value("share_code_query", c.share_code_query);
  return c;
}

template <typename S>
struct LayerParams {
  Matrix<S> ln1_gamma, ln1_beta;
  Matrix<S> w_qkv, b_qkv;
  Matrix<S> w_out, b_out;
  Matrix<S> ln2_gamma, ln2_beta;
  Matrix<S> w_ff1, b_ff1;
  Matrix<S> w_ff2, b_ff2;
};

template <typename S>
struct NamedTensor {
  std::string name;
  Matrix<S>* value;
};

template <typename S>
struct Parameters {
  Matrix<S> token_embedding;     // vocab x hidden
  Matrix<S> position_embedding;  // max_len x hidden
  std::vector<LayerParams<S>> layers;
  Matrix<S> final_ln_gamma, final_ln_beta;

  /// Stable order; names are the checkpoint keys.
  std::vector<NamedTensor<S>> tensors() {
    std::vector<NamedTensor<S>> out;
    out.push_back({"token_embedding", &token_embedding});
    out.push_back({"position_embedding", &position_embedding});
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& l = layers[i];
      const std::string p = "layers." + std::to_string(i) + ".";
      out.push_back({p + "ln1.gamma", &l.ln1_gamma});
      out.push_back({p + "ln1.beta", &l.ln1_beta});
      out.push_back({p + "attn.w_qkv", &l.w_qkv});
      out.push_back({p + "attn.b_qkv", &l.b_qkv});
      out.push_back({p + "attn.w_out", &l.w_out});
      out.push_back({p + "attn.b_out", &l.b_out});
      out.push_back({p + "ln2.gamma", &l.ln2_gamma});
      out.push_back({p + "ln2.beta", &l.ln2_beta});
      out.push_back({p + "ffn.w1", &l.w_ff1});
      out.push_back({p + "ffn.b1", &l.b_ff1});
      out.push_back({p + "ffn.w2", &l.w_ff2});
      out.push_back({p + "ffn.b2", &l.b_ff2});
    }
    out.push_back({"final_ln.gamma", &final_ln_gamma});
    out.push_back({"final_ln.beta", &final_ln_beta});
    return out;
  }

  [[nodiscard]] std::size_t count() const {
    std::size_t n = 0;
    for (auto* m : const_ptrs()) n += static_cast<std::size_t>(m->size());
    return n;
  }

  /// Same shapes, all zeros.
  [[nodiscard]] Parameters zeros_like() const {
    Parameters z = *this;
    for (auto& t : z.tensors()) t.value->setZero();
    return z;
  }

  void set_zero() {
    for (auto& t : tensors()) t.value->setZero();
  }

  [[nodiscard]] bool congruent(const Parameters& other) const {
    auto a = const_ptrs();
    auto b = other.const_ptrs();
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (a[i]->rows() != b[i]->rows() || a[i]->cols() != b[i]->cols()) return false;
    return true;
  }

  [[nodiscard]] bool all_finite() const {
    for (auto* m : const_ptrs())
      if (!m->allFinite()) return false;
    return true;
  }

  template <typename T>
  [[nodiscard]] Parameters<T> cast() const {
    Parameters<T> out;
    out.token_embedding = token_embedding.template cast<T>();
    out.position_embedding = position_embedding.template cast<T>();
    for (const auto& l : layers) {
      LayerParams<T> c;
      c.ln1_gamma = l.ln1_gamma.template cast<T>();
      c.ln1_beta = l.ln1_beta.template cast<T>();
      c.w_qkv = l.w_qkv.template cast<T>();
      c.b_qkv = l.b_qkv.template cast<T>();
      c.w_out = l.w_out.template cast<T>();
      c.b_out = l.b_out.template cast<T>();
      c.ln2_gamma = l.ln2_gamma.template cast<T>();
      c.ln2_beta = l.ln2_beta.template cast<T>();
      c.w_ff1 = l.w_ff1.template cast<T>();
      c.b_ff1 = l.b_ff1.template cast<T>();
      c.w_ff2 = l.w_ff2.template cast<T>();
      c.b_ff2 = l.b_ff2.template cast<T>();
      out.layers.push_back(std::move(c));
    }
    out.final_ln_gamma = final_ln_gamma.template cast<T>();
    out.final_ln_beta = final_ln_beta.template cast<T>();
    return out;
  }

  [[nodiscard]] std::vector<const Matrix<S>*> const_ptrs() const {
    std::vector<const Matrix<S>*> out;
    for (auto& t : const_cast<Parameters*>(this)->tensors()) out.push_back(t.value);
    return out;
  }
};

/// Calls fn(name, a_i, b_i) for every tensor pair; shapes must agree.
template <typename S, typename Fn>
void zip_tensors(Parameters<S>& a, const Parameters<S>& b, Fn&& fn) {
  if (!a.congruent(b)) throw std::invalid_argument("parameter sets are not shape-congruent");
  auto ta = a.tensors();
  auto tb = b.const_ptrs();
  for (std::size_t i = 0; i < ta.size(); ++i) fn(ta[i].name, *ta[i].value, *tb[i]);
}

namespace detail {

template <typename S>
Matrix<S> truncated_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Matrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    double v;
    do {
      v = dist(rng);
    } while (std::abs(v) > 2.0);
    m.data()[i] = static_cast<S>(v * stddev);
  }
  return m;
}

template <typename S>
Matrix<S> constant(std::size_t rows, std::size_t cols, S value) {
  return Matrix<S>::Constant(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols), value);
}

}  // namespace detail

/// Truncated-normal (sigma 0.02) weights, zero biases, unit LayerNorm gains.
template <typename S>
Parameters<S> init_parameters(const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  constexpr double kStd = 0.02;
  const auto d = cfg.hidden_dim;
  const auto f = cfg.ffn_dim;
  Parameters<S> p;
  p.token_embedding = detail::truncated_normal<S>(cfg.vocab_size, d, kStd, rng);
  p.position_embedding = detail::truncated_normal<S>(cfg.max_len, d, kStd, rng);
  for (std::size_t i = 0; i < cfg.layers; ++i) {
    LayerParams<S> l;
    l.ln1_gamma = detail::constant<S>(1, d, S(1));
    l.ln1_beta = detail::constant<S>(1, d, S(0));
    l.w_qkv = detail::truncated_normal<S>(d, 3 * d, kStd, rng);
    l.b_qkv = detail::constant<S>(1, 3 * d, S(0));
    l.w_out = detail::truncated_normal<S>(d, d, kStd, rng);
    l.b_out = detail::constant<S>(1, d, S(0));
    l.ln2_gamma = detail::constant<S>(1, d, S(1));
    l.ln2_beta = detail::constant<S>(1, d, S(0));
    l.w_ff1 = detail::truncated_normal<S>(d, f, kStd, rng);
    l.b_ff1 = detail::constant<S>(1, f, S(0));
    l.w_ff2 = detail::truncated_normal<S>(f, d, kStd, rng);
    l.b_ff2 = detail::constant<S>(1, d, S(0));
    p.layers.push_back(std::move(l));
  }
  p.final_ln_gamma = detail::constant<S>(1, d, S(1));
  p.final_ln_beta = detail::constant<S>(1, d, S(0));
  return p;
}

/// Mask-on tokens of a batch, concatenated row after row.
struct PackedBatch {
  std::vector<std::int32_t> ids;
  std::vector<std::int32_t> positions;
  std::vector<std::size_t> offsets{0};

  [[nodiscard]] std::size_t rows() const { return offsets.size() - 1; }
  [[nodiscard]] std::size_t tokens() const { return ids.size(); }
  [[nodiscard]] std::size_t length(std::size_t row) const { return offsets[row + 1] - offsets[row]; }

  static PackedBatch pack(std::span<const corpus::EncodedSequence> batch) {
    if (batch.empty()) throw std::invalid_argument("encode: empty batch");
    PackedBatch p;
    for (std::size_t r = 0; r < batch.size(); ++r) {
      const auto& seq = batch[r];
      if (seq.ids.size() != seq.mask.size()) throw std::invalid_argument("encode: ids/mask length mismatch");
      const auto before = p.ids.size();
      for (std::size_t t = 0; t < seq.ids.size(); ++t) {
        if (!seq.mask[t]) continue;
        p.ids.push_back(seq.ids[t]);
        p.positions.push_back(static_cast<std::int32_t>(t));
      }
      if (p.ids.size() == before)
        throw std::invalid_argument("encode: row " + std::to_string(r) + " has no mask-on position");
      p.offsets.push_back(p.ids.size());
    }
    return p;
  }
};

template <typename S>
struct LayerCache {
  Matrix<S> x_in;
  Matrix<S> ln1_xhat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> ln1_rstd;
  Matrix<S> attn_in;
  Matrix<S> qkv;
  std::vector<Matrix<S>> probs;  // [row * heads + head], each L x L
  Matrix<S> context;
  Matrix<S> drop_attn;  // empty when dropout is off
  Matrix<S> x_mid;
  Matrix<S> ln2_xhat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> ln2_rstd;
  Matrix<S> ffn_in;
  Matrix<S> ffn_pre;
  Matrix<S> ffn_act;
  Matrix<S> drop_ffn;
};

template <typename S>
struct ForwardCache {
  PackedBatch batch;
  Matrix<S> drop_embed;
  std::vector<LayerCache<S>> layers;
  Matrix<S> final_xhat;
  Eigen::Matrix<S, Eigen::Dynamic, 1> final_rstd;
};

template <typename S>
struct ForwardResult {
  Matrix<S> reps;  // rows x hidden, not normalized
  ForwardCache<S> cache;
};

namespace detail {

template <typename S>
using ColVec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

inline constexpr double kLnEps = 1e-5;

template <typename S>
Matrix<S> layer_norm(const Matrix<S>& x, const Matrix<S>& gamma, const Matrix<S>& beta, Matrix<S>& xhat,
                     ColVec<S>& rstd) {
  const auto n = x.cols();
  ColVec<S> mean = x.rowwise().mean();
  xhat = x.colwise() - mean;
  ColVec<S> var = xhat.array().square().rowwise().sum() / S(n);
  rstd = (var.array() + S(kLnEps)).rsqrt();
  xhat.array().colwise() *= rstd.array();
  Matrix<S> y = xhat.array().rowwise() * gamma.row(0).array();
  y.rowwise() += beta.row(0);
  return y;
}

template <typename S>
Matrix<S> layer_norm_backward(const Matrix<S>& dy, const Matrix<S>& xhat, const ColVec<S>& rstd,
                              const Matrix<S>& gamma, Matrix<S>& dgamma, Matrix<S>& dbeta) {
  dgamma.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dy.colwise().sum();
  Matrix<S> dxhat = dy.array().rowwise() * gamma.row(0).array();
  ColVec<S> m1 = dxhat.rowwise().mean();
  ColVec<S> m2 = (dxhat.array() * xhat.array()).rowwise().mean();
  Matrix<S> dx = dxhat.colwise() - m1;
  dx -= (xhat.array().colwise() * m2.array()).matrix();
  dx.array().colwise() *= rstd.array();
  return dx;
}

template <typename S>
S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / std::sqrt(S(2))));
}

template <typename S>
S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / std::sqrt(S(2))));
  const S pdf = std::exp(S(-0.5) * x * x) / std::sqrt(S(2) * S(3.14159265358979323846));
  return cdf + x * pdf;
}

// Inverted dropout mask (entries 0 or 1/(1-p)); empty when inactive.
template <typename S>
Matrix<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, Rng* rng) {
  if (p <= 0.0 || rng == nullptr) return {};
  std::bernoulli_distribution keep(1.0 - p);
  const S scale = S(1.0 / (1.0 - p));
  Matrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = keep(*rng) ? scale : S(0);
  return m;
}

template <typename S>
void apply_mask(Matrix<S>& x, const Matrix<S>& mask) {
  if (mask.size() != 0) x.array() *= mask.array();
}

}  // namespace detail

template <typename S>
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderConfig cfg, Parameters<S> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
    cfg_.validate();
  }

  static Encoder random(const EncoderConfig& cfg, Rng& rng) { return Encoder(cfg, init_parameters<S>(cfg, rng)); }

  [[nodiscard]] const EncoderConfig& config() const { return cfg_; }
  [[nodiscard]] const Parameters<S>& params() const { return params_; }
  Parameters<S>& params() { return params_; }

  /// Mean of last-layer hidden states over mask-on positions, one row per
  /// input row. Dropout is active only when `rng` is given and train_mode.
  [[nodiscard]] ForwardResult<S> forward(std::span<const corpus::EncodedSequence> batch, bool train_mode,
                                         Rng* rng = nullptr) const {
    ForwardResult<S> res;
    res.cache.batch = PackedBatch::pack(batch);
    run_forward(res, train_mode ? rng : nullptr);
    return res;
  }

  [[nodiscard]] Matrix<S> encode(std::span<const corpus::EncodedSequence> batch, bool train_mode = false,
                                 Rng* rng = nullptr) const {
    return forward(batch, train_mode, rng).reps;
  }

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(reps).
  void backward(const ForwardCache<S>& cache, const Matrix<S>& d_reps, Parameters<S>& grads) const;

 private:
  void run_forward(ForwardResult<S>& res, Rng* rng) const;

  EncoderConfig cfg_;
  Parameters<S> params_;
};

template <typename S>
void Encoder<S>::run_forward(ForwardResult<S>& res, Rng* rng) const {
  using detail::ColVec;
  auto& cache = res.cache;
  const auto& batch = cache.batch;
  const auto T = static_cast<Eigen::Index>(batch.tokens());
  const auto d = static_cast<Eigen::Index>(cfg_.hidden_dim);
  const auto heads = static_cast<Eigen::Index>(cfg_.heads);
  const auto dh = d / heads;
  const S scale = S(1) / std::sqrt(S(dh));
  const double p = cfg_.dropout;

  Matrix<S> x(T, d);
  for (Eigen::Index t = 0; t < T; ++t) {
    const auto id = batch.ids[static_cast<std::size_t>(t)];
    const auto pos = batch.positions[static_cast<std::size_t>(t)];
    if (id < 0 || id >= params_.token_embedding.rows()) throw std::out_of_range("token id outside vocabulary");
    if (pos >= params_.position_embedding.rows()) throw std::out_of_range("position beyond max_len");
    x.row(t) = params_.token_embedding.row(id) + params_.position_embedding.row(pos);
  }
  cache.drop_embed = detail::dropout_mask<S>(T, d, p, rng);
  detail::apply_mask(x, cache.drop_embed);

  cache.layers.resize(params_.layers.size());
  for (std::size_t li = 0; li < params_.layers.size(); ++li) {
    const auto& w = params_.layers[li];
    auto& c = cache.layers[li];
    c.x_in = x;
    c.attn_in = detail::layer_norm(x, w.ln1_gamma, w.ln1_beta, c.ln1_xhat, c.ln1_rstd);
    c.qkv = c.attn_in * w.w_qkv;
    c.qkv.rowwise() += w.b_qkv.row(0);
    c.context.resize(T, d);
    c.probs.resize(batch.rows() * static_cast<std::size_t>(heads));
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      const auto off = static_cast<Eigen::Index>(batch.offsets[r]);
      const auto L = static_cast<Eigen::Index>(batch.length(r));
      for (Eigen::Index h = 0; h < heads; ++h) {
        auto q = c.qkv.block(off, h * dh, L, dh);
        auto k = c.qkv.block(off, d + h * dh, L, dh);
        auto v = c.qkv.block(off, 2 * d + h * dh, L, dh);
        Matrix<S> scores = (q * k.transpose()) * scale;
        ColVec<S> mx = scores.rowwise().maxCoeff();
        scores = (scores.colwise() - mx).array().exp();
        ColVec<S> sum = scores.rowwise().sum();
        scores.array().colwise() /= sum.array();
        c.context.block(off, h * dh, L, dh).noalias() = scores * v;
        c.probs[r * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)] = std::move(scores);
      }
    }
    Matrix<S> proj = c.context * w.w_out;
    proj.rowwise() += w.b_out.row(0);
    c.drop_attn = detail::dropout_mask<S>(T, d, p, rng);
    detail::apply_mask(proj, c.drop_attn);
    c.x_mid = x + proj;

    c.ffn_in = detail::layer_norm(c.x_mid, w.ln2_gamma, w.ln2_beta, c.ln2_xhat, c.ln2_rstd);
    c.ffn_pre = c.ffn_in * w.w_ff1;
    c.ffn_pre.rowwise() += w.b_ff1.row(0);
    c.ffn_act = c.ffn_pre.unaryExpr([](S v) { return detail::gelu(v); });
    Matrix<S> out = c.ffn_act * w.w_ff2;
    out.rowwise() += w.b_ff2.row(0);
    c.drop_ffn = detail::dropout_mask<S>(T, d, p, rng);
    detail::apply_mask(out, c.drop_ffn);
    x = c.x_mid + out;
  }

  Matrix<S> y = detail::layer_norm(x, params_.final_ln_gamma, params_.final_ln_beta, cache.final_xhat,
                                   cache.final_rstd);
  res.reps.resize(static_cast<Eigen::Index>(batch.rows()), d);
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const auto off = static_cast<Eigen::Index>(batch.offsets[r]);
    const auto L = static_cast<Eigen::Index>(batch.length(r));
    res.reps.row(static_cast<Eigen::Index>(r)) = y.middleRows(off, L).colwise().sum() / S(L);
  }
}

template <typename S>
void Encoder<S>::backward(const ForwardCache<S>& cache, const Matrix<S>& d_reps, Parameters<S>& grads) const {
  const auto& batch = cache.batch;
  const auto T = static_cast<Eigen::Index>(batch.tokens());
  const auto d = static_cast<Eigen::Index>(cfg_.hidden_dim);
  const auto heads = static_cast<Eigen::Index>(cfg_.heads);
  const auto dh = d / heads;
  const S scale = S(1) / std::sqrt(S(dh));
  if (d_reps.rows() != static_cast<Eigen::Index>(batch.rows()) || d_reps.cols() != d)
    throw std::invalid_argument("backward: gradient shape does not match batch");

  Matrix<S> dy(T, d);
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const auto off = static_cast<Eigen::Index>(batch.offsets[r]);
    const auto L = static_cast<Eigen::Index>(batch.length(r));
    dy.middleRows(off, L).rowwise() = d_reps.row(static_cast<Eigen::Index>(r)) / S(L);
  }
  Matrix<S> dx = detail::layer_norm_backward(dy, cache.final_xhat, cache.final_rstd, params_.final_ln_gamma,
                                             grads.final_ln_gamma, grads.final_ln_beta);

  for (std::size_t li = params_.layers.size(); li-- > 0;) {
    const auto& w = params_.layers[li];
    auto& g = grads.layers[li];
    const auto& c = cache.layers[li];

    // x = x_mid + drop(ffn(ln2(x_mid)))
    Matrix<S> d_out = dx;
    detail::apply_mask(d_out, c.drop_ffn);
    g.w_ff2.noalias() += c.ffn_act.transpose() * d_out;
    g.b_ff2.row(0) += d_out.colwise().sum();
    Matrix<S> d_pre = d_out * w.w_ff2.transpose();
    d_pre.array() *= c.ffn_pre.unaryExpr([](S v) { return detail::gelu_grad(v); }).array();
    g.w_ff1.noalias() += c.ffn_in.transpose() * d_pre;
    g.b_ff1.row(0) += d_pre.colwise().sum();
    Matrix<S> d_ffn_in = d_pre * w.w_ff1.transpose();
    Matrix<S> d_mid =
        dx + detail::layer_norm_backward(d_ffn_in, c.ln2_xhat, c.ln2_rstd, w.ln2_gamma, g.ln2_gamma, g.ln2_beta);

    // x_mid = x_in + drop(attn(ln1(x_in)))
    Matrix<S> d_proj = d_mid;
    detail::apply_mask(d_proj, c.drop_attn);
    g.w_out.noalias() += c.context.transpose() * d_proj;
    g.b_out.row(0) += d_proj.colwise().sum();
    Matrix<S> d_ctx = d_proj * w.w_out.transpose();

    Matrix<S> d_qkv = Matrix<S>::Zero(T, 3 * d);
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      const auto off = static_cast<Eigen::Index>(batch.offsets[r]);
      const auto L = static_cast<Eigen::Index>(batch.length(r));
      for (Eigen::Index h = 0; h < heads; ++h) {
        const auto& P = c.probs[r * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h)];
        auto q = c.qkv.block(off, h * dh, L, dh);
        auto k = c.qkv.block(off, d + h * dh, L, dh);
        auto v = c.qkv.block(off, 2 * d + h * dh, L, dh);
        auto dctx = d_ctx.block(off, h * dh, L, dh);
        Matrix<S> dP = dctx * v.transpose();
        d_qkv.block(off, 2 * d + h * dh, L, dh).noalias() = P.transpose() * dctx;
        detail::ColVec<S> rowdot = (dP.array() * P.array()).rowwise().sum();
        Matrix<S> dS = P.array() * (dP.colwise() - rowdot).array();
        dS *= scale;
        d_qkv.block(off, h * dh, L, dh).noalias() = dS * k;
        d_qkv.block(off, d + h * dh, L, dh).noalias() = dS.transpose() * q;
      }
    }
    g.w_qkv.noalias() += c.attn_in.transpose() * d_qkv;
    g.b_qkv.row(0) += d_qkv.colwise().sum();
    Matrix<S> d_attn_in = d_qkv * w.w_qkv.transpose();
    dx = d_mid +
         detail::layer_norm_backward(d_attn_in, c.ln1_xhat, c.ln1_rstd, w.ln1_gamma, g.ln1_gamma, g.ln1_beta);
  }

  detail::apply_mask(dx, cache.drop_embed);
  for (Eigen::Index t = 0; t < T; ++t) {
    grads.token_embedding.row(batch.ids[static_cast<std::size_t>(t)]) += dx.row(t);
    grads.position_embedding.row(batch.positions[static_cast<std::size_t>(t)]) += dx.row(t);
  }
}

/// Key encoder: shape-identical to its source, never touched by the
/// optimizer, changed only through momentum_update.
template <typename S>
class MomentumEncoder {
 public:
  MomentumEncoder() = default;

  [[nodiscard]] const Encoder<S>& encoder() const { return enc_; }
  [[nodiscard]] const Parameters<S>& params() const { return enc_.params(); }

  /// Eval-mode encoding of augmented samples (no dropout, no gradient).
  [[nodiscard]] Matrix<S> encode(std::span<const corpus::EncodedSequence> batch) const {
    return enc_.encode(batch, false);
  }

  /// Reconstructs a persisted momentum encoder.
  static MomentumEncoder restore(const EncoderConfig& cfg, Parameters<S> params) {
    MomentumEncoder m;
    m.enc_ = Encoder<S>(cfg, std::move(params));
    return m;
  }

 private:
  template <typename T>
  friend MomentumEncoder<T> init_momentum(const Encoder<T>& enc);
  template <typename T>
  friend void momentum_update(const Encoder<T>& enc, MomentumEncoder<T>& menc, double m);

  Encoder<S> enc_;
};

/// Deep copy of the live encoder.
template <typename S>
MomentumEncoder<S> init_momentum(const Encoder<S>& enc) {
  MomentumEncoder<S> m;
  m.enc_ = enc;
  return m;
}

/// p_m <- m * p_m + (1 - m) * p_e for every parameter.
template <typename S>
void momentum_update(const Encoder<S>& enc, MomentumEncoder<S>& menc, double m) {
  if (!(m >= 0.0 && m < 1.0)) throw std::invalid_argument("momentum coefficient must be in [0,1)");
  const S keep = static_cast<S>(m);
  const S take = static_cast<S>(1.0 - m);
  zip_tensors(menc.enc_.params(), enc.params(), [&](const std::string&, Matrix<S>& pm, const Matrix<S>& pe) {
    pm = keep * pm + take * pe;
  });
}

}  // namespace cocosoda::encoder
