#pragma once

// Cosine similarity, InfoNCE over a negative queue, the in-batch fine-tuning
// loss, and the FIFO queue of momentum keys.

#include "cocosoda/common.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

namespace cocosoda::contrastive {

struct ContrastiveConfig {
  double temperature = 0.07;
  double momentum = 0.999;
  std::size_t queue_size = 4096;
  std::size_t batch_size = 128;
  bool symmetric_finetune = false;  // adds the query-anchored term to the fine-tuning loss

  void validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0,1)");
    if (batch_size == 0 || queue_size == 0) throw std::invalid_argument("queue and batch sizes must be positive");
    if (queue_size % batch_size != 0) throw std::invalid_argument("queue_size must be a multiple of batch_size");
  }

  static ContrastiveConfig paper() { return {}; }
  static ContrastiveConfig toy() {
    ContrastiveConfig c;
    c.queue_size = 512;
    c.batch_size = 16;
    return c;
  }
};

inline nlohmann::json to_json(const ContrastiveConfig& c) {
  return {{"temperature", c.temperature}, {"momentum", c.momentum},     {"queue_size", c.queue_size},
          {"batch_size", c.batch_size},   {"symmetric_finetune", c.symmetric_finetune}};
}

inline ContrastiveConfig contrastive_config_from_json(const nlohmann::json& j, ContrastiveConfig c = {}) {
  c.temperature = j.value("temperature", c.temperature);
  c.momentum = j.value("momentum", c.momentum);
  c.queue_size = j.value("queue_size", c.queue_size);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.symmetric_finetune = j.value("symmetric_finetune", c.symmetric_finetune);
  return c;
}

template <typename S>
S cosine_sim(std::span<const S> x, std::span<const S> y) {
  if (x.size() != y.size()) throw std::invalid_argument("cosine_sim: dimension mismatch");
  S dot = 0, nx = 0, ny = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (!(nx > 0) || !(ny > 0)) throw std::invalid_argument("cosine_sim: zero vector");
  return std::clamp<S>(dot / (std::sqrt(nx) * std::sqrt(ny)), S(-1), S(1));
}

/// Row-wise L2 normalization; keeps the norms for the backward pass.
template <typename S>
struct Normalized {
  Matrix<S> unit;
  Eigen::Matrix<S, Eigen::Dynamic, 1> norms;

  explicit Normalized(const Matrix<S>& x) : norms(x.rowwise().norm()) {
    if ((norms.array() <= S(0)).any() || !norms.allFinite())
      throw NumericError("cannot normalize a zero or non-finite representation");
    unit = x.array().colwise() / norms.array();
  }

  /// d(loss)/d(x) from d(loss)/d(unit).
  [[nodiscard]] Matrix<S> backward(const Matrix<S>& d_unit) const {
    Eigen::Matrix<S, Eigen::Dynamic, 1> dots = (unit.array() * d_unit.array()).rowwise().sum();
    Matrix<S> dx = d_unit - (unit.array().colwise() * dots.array()).matrix();
    dx.array().colwise() /= norms.array();
    return dx;
  }
};

template <typename S>
Matrix<S> normalize_rows(const Matrix<S>& x) {
  return Normalized<S>(x).unit;
}

template <typename S>
struct InfoNceResult {
  Eigen::Matrix<S, Eigen::Dynamic, 1> losses;  // per anchor
  Matrix<S> d_anchors;                          // gradient w.r.t. raw anchors
};

/// Per-anchor InfoNCE with one positive each and a shared negative set:
///   -log( e^{s(a,p)/t} / (e^{s(a,p)/t} + sum_k e^{s(a,n_k)/t}) ).
/// Positives and negatives are unit rows and treated as constants; the
/// gradient flows into the anchors only.
template <typename S>
InfoNceResult<S> info_nce_rows(const Matrix<S>& anchors, const Matrix<S>& positives, const Matrix<S>& negatives,
                               double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("info_nce: temperature must be positive");
  if (negatives.rows() == 0) throw std::invalid_argument("info_nce: no negatives");
  if (anchors.rows() != positives.rows() || anchors.cols() != positives.cols() ||
      anchors.cols() != negatives.cols())
    throw std::invalid_argument("info_nce: shape mismatch");
  const S inv_t = S(1.0 / temperature);
  Normalized<S> a(anchors);
  const auto n = anchors.rows();
  const auto K = negatives.rows();

  Matrix<S> logits(n, K + 1);
  logits.col(0) = (a.unit.array() * positives.array()).rowwise().sum().matrix() * inv_t;
  logits.rightCols(K).noalias() = a.unit * negatives.transpose() * inv_t;
  if (!logits.allFinite()) throw NumericError("info_nce: non-finite similarity");

  Eigen::Matrix<S, Eigen::Dynamic, 1> mx = logits.rowwise().maxCoeff();
  Matrix<S> probs = (logits.colwise() - mx).array().exp();
  Eigen::Matrix<S, Eigen::Dynamic, 1> z = probs.rowwise().sum();
  probs.array().colwise() /= z.array();

  InfoNceResult<S> out;
  out.losses = (mx.array() + z.array().log()).matrix() - logits.col(0);

  // d loss / d logits = probs - onehot(0); logits = unit . key / t
  Matrix<S> d_logits = probs;
  d_logits.col(0).array() -= S(1);
  Matrix<S> d_unit = (d_logits.col(0).asDiagonal() * positives) * inv_t;
  d_unit.noalias() += d_logits.rightCols(K) * negatives * inv_t;
  out.d_anchors = a.backward(d_unit);
  return out;
}

/// Single-anchor convenience form.
template <typename S>
S info_nce(std::span<const S> anchor, std::span<const S> positive, const Matrix<S>& negatives,
           double temperature) {
  const auto d = static_cast<Eigen::Index>(anchor.size());
  Matrix<S> a = Eigen::Map<const Matrix<S>>(anchor.data(), 1, d);
  Matrix<S> p = contrastive::normalize_rows<S>(Eigen::Map<const Matrix<S>>(positive.data(), 1, d));
  Matrix<S> negs = normalize_rows<S>(negatives);
  return info_nce_rows<S>(a, p, negs, temperature).losses(0);
}

template <typename S>
struct FinetuneLossResult {
  S loss = 0;
  Matrix<S> d_code;
  Matrix<S> d_query;
};

/// In-batch loss anchored on code:
///   -sum_i log( e^{s(c_i,q_i)/t} / sum_j e^{s(c_i,q_j)/t} ).
/// With `symmetric`, the query-anchored counterpart is added.
template <typename S>
FinetuneLossResult<S> finetune_loss(const Matrix<S>& code_reps, const Matrix<S>& query_reps, double temperature,
                                    bool symmetric = false) {
  if (code_reps.rows() != query_reps.rows() || code_reps.cols() != query_reps.cols())
    throw std::invalid_argument("finetune_loss: code and query batches differ in shape");
  if (code_reps.rows() == 0) throw std::invalid_argument("finetune_loss: empty batch");
  if (!(temperature > 0.0)) throw std::invalid_argument("finetune_loss: temperature must be positive");
  const S inv_t = S(1.0 / temperature);
  Normalized<S> c(code_reps), q(query_reps);
  Matrix<S> logits = c.unit * q.unit.transpose() * inv_t;
  if (!logits.allFinite()) throw NumericError("finetune_loss: non-finite similarity");

  auto softmax_ce = [](const Matrix<S>& lg, S& loss) {
    Eigen::Matrix<S, Eigen::Dynamic, 1> mx = lg.rowwise().maxCoeff();
    Matrix<S> p = (lg.colwise() - mx).array().exp();
    Eigen::Matrix<S, Eigen::Dynamic, 1> z = p.rowwise().sum();
    p.array().colwise() /= z.array();
    for (Eigen::Index i = 0; i < lg.rows(); ++i) loss += mx(i) + std::log(z(i)) - lg(i, i);
    p.diagonal().array() -= S(1);
    return p;  // d loss / d logits
  };

  FinetuneLossResult<S> out;
  Matrix<S> d_logits = softmax_ce(logits, out.loss);
  if (symmetric) d_logits += softmax_ce(Matrix<S>(logits.transpose()), out.loss).transpose();
  Matrix<S> d_cu = d_logits * q.unit * inv_t;
  Matrix<S> d_qu = d_logits.transpose() * c.unit * inv_t;
  out.d_code = c.backward(d_cu);
  out.d_query = q.backward(d_qu);
  return out;
}

/// Fixed-capacity FIFO of unit-length keys. Always holds exactly K rows.
template <typename S>
class NegativeQueue {
 public:
  NegativeQueue() = default;

  /// K random unit vectors.
  NegativeQueue(std::size_t capacity, std::size_t dim, Rng& rng)
      : entries_(static_cast<Eigen::Index>(capacity), static_cast<Eigen::Index>(dim)) {
    if (capacity == 0 || dim == 0) throw std::invalid_argument("queue capacity and dim must be positive");
    std::normal_distribution<double> g(0.0, 1.0);
    for (Eigen::Index r = 0; r < entries_.rows(); ++r) {
      Eigen::Matrix<double, 1, Eigen::Dynamic> v(entries_.cols());
      for (Eigen::Index c = 0; c < v.size(); ++c) v(c) = g(rng);
      entries_.row(r) = (v / v.norm()).template cast<S>();
    }
  }

  static NegativeQueue restore(Matrix<S> entries, std::size_t write_head) {
    NegativeQueue q;
    if (write_head >= static_cast<std::size_t>(entries.rows())) throw DataError("queue write head out of range");
    q.entries_ = std::move(entries);
    q.head_ = write_head;
    return q;
  }

  [[nodiscard]] std::size_t capacity() const { return static_cast<std::size_t>(entries_.rows()); }
  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(entries_.cols()); }
  [[nodiscard]] std::size_t write_head() const { return head_; }
  [[nodiscard]] const Matrix<S>& entries() const { return entries_; }

  /// Writes keys at the head, overwriting the oldest rows and wrapping.
  void enqueue(const Matrix<S>& keys) {
    if (keys.cols() != entries_.cols()) throw std::invalid_argument("enqueue: key dimension mismatch");
    for (Eigen::Index r = 0; r < keys.rows(); ++r) {
      const double norm = static_cast<double>(keys.row(r).norm());
      if (!(std::abs(norm - 1.0) <= 1e-4))
        throw std::invalid_argument("enqueue: key " + std::to_string(r) + " is not unit length");
    }
    for (Eigen::Index r = 0; r < keys.rows(); ++r) {
      entries_.row(static_cast<Eigen::Index>(head_)) = keys.row(r);
      head_ = (head_ + 1) % capacity();
    }
  }

 private:
  Matrix<S> entries_;
  std::size_t head_ = 0;
};

}  // namespace cocosoda::contrastive
