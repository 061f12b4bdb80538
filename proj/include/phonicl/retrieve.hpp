#pragma once

// In-context example selection over a pool.
//
// Every strategy reduces to per-channel score vectors plus a selection rule.
// Rankings order by descending score, ties by ascending document ordinal.
//
//   random[:seed]              seeded sampling without replacement
//   script | ipa | roman       top-k of one BM25 channel
//   mixed[:c1+c2+...]          top-k of the per-document arithmetic mean
//   all                        mixed over script, ipa and roman
//   harmonic                   top-k of 2ab/(a+b) over script/ipa (0 when a+b = 0)
//   split-half:<order>[:seed]  top-k/2 from each of script and ipa; order is
//                              script-first, ipa-first or shuffle. A doc the
//                              first half already holds is skipped in the
//                              second channel's ranking.
//   divide-conquer             union of both top-k lists, max score per doc,
//                              re-ranked by raw score
//   append                     both top-k lists concatenated with raw scores,
//                              top-k without de-duplication
//   dense:<vectors.jsonl>      top-k cosine similarity on precomputed vectors
//
// Random and shuffle draw from derive_seed(seed, "<kind>/<query id>") so each
// query gets its own reproducible stream.

#include <Eigen/Core>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "phonicl/bm25.hpp"
#include "phonicl/corpus.hpp"
#include "phonicl/tokenize.hpp"

namespace phonicl {

enum class SplitOrder { ScriptFirst, IpaFirst, Shuffle };

struct StrategyId {
  enum class Kind { Random, Script, Ipa, Roman, Mixed, All, Harmonic, SplitHalf, DivideConquer, Append, Dense };

  Kind kind = Kind::Script;
  std::uint64_t seed = 0;
  std::vector<Channel> channels;
  SplitOrder order = SplitOrder::ScriptFirst;
  std::string vectors_path;

  static StrategyId random(std::uint64_t seed) { return {Kind::Random, seed, {}, {}, {}}; }
  static StrategyId single(Channel c);
  static StrategyId mixed(std::vector<Channel> channels) { return {Kind::Mixed, 0, std::move(channels), {}, {}}; }
  static StrategyId all() { return {Kind::All, 0, {}, {}, {}}; }
  static StrategyId harmonic() { return {Kind::Harmonic, 0, {}, {}, {}}; }
  static StrategyId split_half(SplitOrder order, std::uint64_t seed = 0) {
    return {Kind::SplitHalf, seed, {}, order, {}};
  }
  static StrategyId divide_conquer() { return {Kind::DivideConquer, 0, {}, {}, {}}; }
  static StrategyId append() { return {Kind::Append, 0, {}, {}, {}}; }
  static StrategyId dense(std::string path) { return {Kind::Dense, 0, {}, {}, std::move(path)}; }

  /// Parses the names listed at the top of this header. `default_seed` fills
  /// in a missing seed for random and split-half:shuffle.
  static StrategyId parse(std::string_view text, std::uint64_t default_seed = 0);

  /// Canonical spelling; parse(to_string()) round-trips.
  std::string to_string() const;

  /// Channels whose BM25 scores the strategy consumes.
  std::vector<Channel> required_channels() const;

  void validate(std::size_t k) const;

  friend bool operator==(const StrategyId&, const StrategyId&) = default;
};

struct Selected {
  std::size_t doc = 0;
  double score = 0.0;
  friend bool operator==(const Selected&, const Selected&) = default;
};

struct RetrievalResult {
  std::string query_id;
  StrategyId strategy;
  /// Selection in prompt order.
  std::vector<Selected> selected;
  /// Top-m of each channel consulted, for diagnostics.
  std::map<Channel, std::vector<Selected>> per_channel;
};

/// Per-query scores handed to the selection rules.
struct ChannelScores {
  std::size_t n_docs = 0;
  std::map<Channel, ScoreVector> sparse;
  std::optional<ScoreVector> dense;
};

struct RetrieveOptions {
  /// Min-max normalise each channel before mixing (off by default).
  bool normalize = false;
  /// How many entries per channel to keep in RetrievalResult::per_channel.
  std::size_t per_channel_keep = 10;
};

// ---------------------------------------------------------------------------
// Score algebra. Free functions over Eigen expressions.

/// Top-k by descending score, ascending ordinal on ties.
template <typename Derived>
std::vector<Selected> top_k(const Eigen::MatrixBase<Derived>& scores, std::size_t k);

/// Per-document arithmetic mean of equally sized score vectors.
ScoreVector mean_scores(const std::vector<const ScoreVector*>& channels);

/// Per-document 2ab/(a+b), 0 where a+b = 0.
template <typename A, typename B>
ScoreVectorT<typename A::Scalar> harmonic_scores(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  using Scalar = typename A::Scalar;
  const Eigen::Array<Scalar, Eigen::Dynamic, 1> sum = (a + b).array();
  return (sum > Scalar(0)).select(Scalar(2) * a.array() * b.array() / sum, Scalar(0)).matrix();
}

/// (s - min) / (max - min); all zeros when the vector is constant.
ScoreVector min_max_normalize(const ScoreVector& scores);

/// Cosine similarity, 0 when either vector has zero norm.
template <typename A, typename B>
typename A::Scalar cosine(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
  using Scalar = typename A::Scalar;
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (na == Scalar(0) || nb == Scalar(0)) return Scalar(0);
  return a.dot(b) / (na * nb);
}

/// Applies a strategy's selection rule to precomputed scores.
std::vector<Selected> select(const StrategyId& strategy, std::size_t k, const ChannelScores& scores,
                             std::string_view query_id, const RetrieveOptions& options = {});

// ---------------------------------------------------------------------------
// Dense vectors

/// Row-per-id embedding table loaded from a JSONL sidecar of
/// {"id": "...", "vector": [x, ...]} records of one common dimension.
template <typename Scalar>
class DenseStoreT {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

  DenseStoreT() = default;
  DenseStoreT(std::vector<std::string> ids, Matrix rows);

  static DenseStoreT load(const std::filesystem::path& path);
  static DenseStoreT parse(std::string_view jsonl);

  Eigen::Index dim() const noexcept { return rows_.cols(); }
  std::size_t size() const noexcept { return ids_.size(); }
  bool contains(const std::string& id) const { return row_of_.contains(id); }
  auto row(const std::string& id) const { return rows_.row(row_of_.at(id)); }

  /// Cosine of the query's vector against each pool id, in pool order.
  /// Throws Error(MissingVectors) if any id lacks a vector.
  ScoreVectorT<Scalar> cosine_scores(const std::string& query_id,
                                     const std::vector<std::string>& pool_ids) const;

 private:
  std::vector<std::string> ids_;
  Matrix rows_;
  std::unordered_map<std::string, Eigen::Index> row_of_;
};

using DenseStore = DenseStoreT<double>;

// ---------------------------------------------------------------------------
// Retriever: indexes + tokenizer + params bound together.

class Retriever {
 public:
  Retriever(std::vector<std::string> pool_ids, std::map<Channel, Bm25Index> indexes, Tokenizer tokenizer,
            Bm25Params params, const DenseStore* dense = nullptr, RetrieveOptions options = {});

  /// Scores on every channel the strategy needs.
  ChannelScores score(const Example& query, const StrategyId& strategy) const;

  RetrievalResult retrieve(const Example& query, const StrategyId& strategy, std::size_t k) const;

  /// Order-preserving; queries fan out over at most `parallelism` threads.
  std::vector<RetrievalResult> retrieve_batch(const std::vector<Example>& queries,
                                              const StrategyId& strategy, std::size_t k,
                                              std::size_t parallelism = 1) const;

  std::size_t pool_size() const noexcept { return pool_ids_.size(); }
  const std::vector<std::string>& pool_ids() const noexcept { return pool_ids_; }
  const Bm25Params& params() const noexcept { return params_; }
  const Tokenizer& tokenizer() const noexcept { return tokenizer_; }

 private:
  std::vector<std::string> pool_ids_;
  std::map<Channel, Bm25Index> indexes_;
  Tokenizer tokenizer_;
  Bm25Params params_;
  const DenseStore* dense_;
  RetrieveOptions options_;
};

// ---------------------------------------------------------------------------

template <typename Derived>
std::vector<Selected> top_k(const Eigen::MatrixBase<Derived>& expr, std::size_t k) {
  const ScoreVectorT<typename Derived::Scalar> scores = expr;
  const auto n = static_cast<std::size_t>(scores.size());
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  const std::size_t take = std::min(k, n);
  auto better = [&](std::size_t a, std::size_t b) {
    const double sa = static_cast<double>(scores(static_cast<Eigen::Index>(a)));
    const double sb = static_cast<double>(scores(static_cast<Eigen::Index>(b)));
    if (sa != sb) return sa > sb;
    return a < b;
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(), better);
  std::vector<Selected> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.push_back({order[i], static_cast<double>(scores(static_cast<Eigen::Index>(order[i])))});
  }
  return out;
}

}  // namespace phonicl
