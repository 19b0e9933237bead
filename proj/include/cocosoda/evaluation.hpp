#pragma once

// Retrieval metrics, alignment/uniformity diagnostics, and the batch
// evaluator used by fine-tuning, zero-shot runs and the CLI.

#include "cocosoda/contrastive.hpp"
#include "cocosoda/corpus.hpp"
#include "cocosoda/pretrain.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

namespace cocosoda::evaluation {

/// 1-based rank of `scores[gold]`; equal scores at smaller indices rank ahead.
inline std::size_t rank_of_gold_scores(std::span<const double> scores, std::size_t gold) {
  if (scores.empty()) throw std::invalid_argument("rank_of_gold: empty candidate pool");
  if (gold >= scores.size()) throw std::out_of_range("rank_of_gold: gold index out of range");
  const double g = scores[gold];
  std::size_t rank = 1;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (scores[i] > g || (scores[i] == g && i < gold)) ++rank;
  return rank;
}

/// Cosine scores of `query` against every row of `candidates`, then rank.
template <typename S>
std::size_t rank_of_gold(std::span<const S> query, const Matrix<S>& candidates, std::size_t gold) {
  if (candidates.rows() == 0) throw std::invalid_argument("rank_of_gold: empty candidate pool");
  std::vector<double> scores(static_cast<std::size_t>(candidates.rows()));
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
    std::span<const S> row(candidates.row(i).data(), static_cast<std::size_t>(candidates.cols()));
    scores[static_cast<std::size_t>(i)] = static_cast<double>(contrastive::cosine_sim<S>(query, row));
  }
  return rank_of_gold_scores(scores, gold);
}

inline double mrr(std::span<const std::size_t> ranks) {
  if (ranks.empty()) throw std::invalid_argument("mrr: no ranks");
  double s = 0.0;
  for (auto r : ranks) {
    if (r < 1) throw std::invalid_argument("mrr: ranks are 1-based");
    s += 1.0 / static_cast<double>(r);
  }
  return s / static_cast<double>(ranks.size());
}

inline double recall_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) throw std::invalid_argument("recall_at_k: no ranks");
  if (k < 1) throw std::invalid_argument("recall_at_k: k must be >= 1");
  std::size_t hit = 0;
  for (auto r : ranks) hit += r <= k ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(ranks.size());
}

/// Mean squared distance between row-paired vectors, each row normalized first.
template <typename S>
double align_metric(const Matrix<S>& x, const Matrix<S>& y) {
  if (x.rows() == 0 || x.rows() != y.rows() || x.cols() != y.cols())
    throw std::invalid_argument("align_metric: need equally shaped, non-empty pair sets");
  const Matrix<double> a = contrastive::normalize_rows<double>(x.template cast<double>());
  const Matrix<double> b = contrastive::normalize_rows<double>(y.template cast<double>());
  return (a - b).rowwise().squaredNorm().mean();
}

/// log of the mean of exp(-2 |x - y|^2) over unordered distinct pairs.
template <typename S>
double uniform_metric(const Matrix<S>& x) {
  if (x.rows() < 2) throw std::invalid_argument("uniform_metric: need at least 2 vectors");
  const Matrix<double> a = contrastive::normalize_rows<double>(x.template cast<double>());
  const Matrix<double> gram = a * a.transpose();
  const Eigen::Index n = a.rows();
  // log-mean-exp with a running max; exponents are -2 d^2 = 4 cos - 4.
  std::vector<double> e;
  e.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double d2 = std::max(0.0, a.row(i).squaredNorm() + a.row(j).squaredNorm() - 2.0 * gram(i, j));
      e.push_back(-2.0 * d2);
    }
  const double mx = *std::max_element(e.begin(), e.end());
  double s = 0.0;
  for (double v : e) s += std::exp(v - mx);
  const double out = mx + std::log(s / static_cast<double>(e.size()));
  return out > 0.0 ? 0.0 : out;  // rounding can leave +1e-17 in the degenerate case
}

struct EvalReport {
  double mrr = 0.0;
  double recall_1 = 0.0, recall_5 = 0.0, recall_10 = 0.0;
  double align = 0.0;
  double uniform_code = 0.0, uniform_query = 0.0, uniform = 0.0;
  std::size_t pool_size = 0;
  std::size_t query_count = 0;
  std::vector<std::string> query_ids;
  std::vector<std::size_t> ranks;

  [[nodiscard]] nlohmann::json to_json(bool with_ranks = false) const {
    nlohmann::json j = {{"v", 1},
                        {"mrr", mrr},
                        {"recall_at_1", recall_1},
                        {"recall_at_5", recall_5},
                        {"recall_at_10", recall_10},
                        {"align", align},
                        {"uniform", uniform},
                        {"uniform_code", uniform_code},
                        {"uniform_query", uniform_query},
                        {"pool_size", pool_size},
                        {"query_count", query_count}};
    if (with_ranks) {
      auto rows = nlohmann::json::array();
      for (std::size_t i = 0; i < ranks.size(); ++i) rows.push_back({{"id", query_ids[i]}, {"rank", ranks[i]}});
      j["ranks"] = rows;
    }
    return j;
  }

  static std::string csv_header() {
    return "mrr,recall_at_1,recall_at_5,recall_at_10,align,uniform,uniform_code,uniform_query,pool_size,query_count";
  }

  [[nodiscard]] std::string csv_row() const {
    std::ostringstream o;
    o << std::setprecision(10) << mrr << ',' << recall_1 << ',' << recall_5 << ',' << recall_10 << ',' << align << ','
      << uniform << ',' << uniform_code << ',' << uniform_query << ',' << pool_size << ',' << query_count;
    return o.str();
  }
};

/// Eval-mode representations of many sequences, encoded in chunks.
template <typename S>
Matrix<S> encode_all(const encoder::Encoder<S>& enc, std::span<const corpus::EncodedSequence> seqs,
                     std::size_t chunk = 64) {
  Matrix<S> out(static_cast<Eigen::Index>(seqs.size()), enc.config().hidden_dim);
  for (std::size_t start = 0; start < seqs.size(); start += chunk) {
    const auto n = std::min(chunk, seqs.size() - start);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(n)) = enc.encode(seqs.subspan(start, n));
  }
  return out;
}

template <typename S>
Matrix<S> encode_code(const contrastive::BiEncoderModel<S>& model, const corpus::Corpus& c,
                      std::span<const std::size_t> idx, const corpus::Vocabulary& vocab, std::size_t max_len) {
  std::vector<corpus::EncodedSequence> seqs;
  seqs.reserve(idx.size());
  for (auto i : idx) seqs.push_back(corpus::encode_tokens(c.pairs.at(i).code_tokens, vocab, max_len));
  return encode_all(model.code_encoder(), seqs);
}

template <typename S>
Matrix<S> encode_queries(const contrastive::BiEncoderModel<S>& model, const corpus::Corpus& c,
                         std::span<const std::size_t> idx, const corpus::Vocabulary& vocab, std::size_t max_len) {
  std::vector<corpus::EncodedSequence> seqs;
  seqs.reserve(idx.size());
  for (auto i : idx) seqs.push_back(corpus::encode_tokens(c.pairs.at(i).query_tokens, vocab, max_len));
  return encode_all(model.query_encoder(), seqs);
}

/// Ranks each query's own code among `pool` (indices into c.pairs).
template <typename S>
EvalReport evaluate(const contrastive::BiEncoderModel<S>& model, const corpus::Corpus& c,
                    std::span<const std::size_t> queries, std::span<const std::size_t> pool,
                    const corpus::Vocabulary& vocab, const contrastive::SequenceLimits& limits) {
  if (queries.empty()) throw std::invalid_argument("evaluate: no queries");
  if (pool.empty()) throw std::invalid_argument("evaluate: empty candidate pool");
  std::unordered_map<std::size_t, std::size_t> where;
  for (std::size_t i = 0; i < pool.size(); ++i) where.emplace(pool[i], i);
  std::vector<std::size_t> gold(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    auto it = where.find(queries[i]);
    if (it == where.end())
      throw DataError("evaluate: gold code of query " + c.pairs.at(queries[i]).id + " is not in the candidate pool");
    gold[i] = it->second;
  }

  const Matrix<double> code =
      contrastive::normalize_rows<double>(encode_code(model, c, pool, vocab, limits.max_code_len).template cast<double>());
  const Matrix<double> query = contrastive::normalize_rows<double>(
      encode_queries(model, c, queries, vocab, limits.max_query_len).template cast<double>());
  const Matrix<double> scores = query * code.transpose();

  EvalReport r;
  r.pool_size = pool.size();
  r.query_count = queries.size();
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::span<const double> row(scores.row(static_cast<Eigen::Index>(i)).data(), pool.size());
    r.ranks.push_back(rank_of_gold_scores(row, gold[i]));
    r.query_ids.push_back(c.pairs.at(queries[i]).id);
  }
  r.mrr = mrr(r.ranks);
  r.recall_1 = recall_at_k(r.ranks, 1);
  r.recall_5 = recall_at_k(r.ranks, 5);
  r.recall_10 = recall_at_k(r.ranks, 10);

  Matrix<double> paired(static_cast<Eigen::Index>(queries.size()), code.cols());
  for (std::size_t i = 0; i < queries.size(); ++i)
    paired.row(static_cast<Eigen::Index>(i)) = code.row(static_cast<Eigen::Index>(gold[i]));
  r.align = align_metric<double>(query, paired);
  if (code.rows() >= 2) r.uniform_code = uniform_metric<double>(code);
  if (query.rows() >= 2) r.uniform_query = uniform_metric<double>(query);
  Matrix<double> both(code.rows() + query.rows(), code.cols());
  both << code, query;
  r.uniform = uniform_metric<double>(both);
  return r;
}

/// Rows: (id, code, vector), (id, query, vector), (id, distance, |c - q|) per
/// pair; vectors are unit-normalized so distance^2 is the pair's align term.
template <typename S>
void export_embeddings(std::ostream& out, const contrastive::BiEncoderModel<S>& model, const corpus::Corpus& c,
                       std::span<const std::size_t> idx, const corpus::Vocabulary& vocab,
                       const contrastive::SequenceLimits& limits) {
  if (idx.empty()) throw std::invalid_argument("export_embeddings: no pairs");
  const Matrix<double> code =
      contrastive::normalize_rows<double>(encode_code(model, c, idx, vocab, limits.max_code_len).template cast<double>());
  const Matrix<double> query = contrastive::normalize_rows<double>(
      encode_queries(model, c, idx, vocab, limits.max_query_len).template cast<double>());
  const auto d = code.cols();
  out << "id,modality,distance";
  for (Eigen::Index k = 0; k < d; ++k) out << ",v" << k;
  out << '\n' << std::setprecision(9);
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    return q + "\"";
  };
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const auto id = quote(c.pairs.at(idx[i]).id);
    const auto r = static_cast<Eigen::Index>(i);
    for (const auto* m : {&code, &query}) {
      out << id << ',' << (m == &code ? "code" : "query") << ',';
      for (Eigen::Index k = 0; k < d; ++k) out << ',' << (*m)(r, k);
      out << '\n';
    }
    out << id << ",distance," << (code.row(r) - query.row(r)).norm();
    for (Eigen::Index k = 0; k < d; ++k) out << ',';
    out << '\n';
  }
}

/// Expected MRR when the gold rank is uniform over a pool of n: H_n / n.
inline double random_mrr(std::size_t n) {
  double h = 0.0;
  for (std::size_t i = 1; i <= n; ++i) h += 1.0 / static_cast<double>(i);
  return h / static_cast<double>(n);
}

}  // namespace cocosoda::evaluation
