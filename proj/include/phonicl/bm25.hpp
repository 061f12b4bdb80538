#pragma once

// Okapi BM25 over one text channel of a retrieval pool.
//
//   score(d, q) = sum over query tokens t (with repetition) of
//                 idf(t) * tf(t,d) * (k1 + 1) / (tf(t,d) + k1 * (1 - b + b * |d| / avg_len))
//   idf(t)      = max(idf_floor, ln((N - df(t) + 0.5) / (df(t) + 0.5) + 1))
//
// Snapshot files are JSON:
//   {"format": "phonicl-bm25-index", "version": 1, "channel": "script",
//    "tokenizer_id": "...", "n_docs": N, "avg_len": x, "doc_ids": [...],
//    "doc_len": [...], "postings": {"term": [[doc, tf], ...], ...}}

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "phonicl/corpus.hpp"
#include "phonicl/tokenize.hpp"

namespace phonicl {

enum class Channel { Script, Ipa, Roman };

const char* to_string(Channel channel);
Channel parse_channel(std::string_view text);

/// Text of `example` on the given channel (empty when absent).
const std::string& channel_text(const Example& example, Channel channel);

template <typename Scalar>
using ScoreVectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
/// Dense per-document scores over a pool, indexed by document ordinal.
using ScoreVector = ScoreVectorT<double>;

struct Bm25Params {
  double k1 = 1.5;
  double b = 0.75;
  double idf_floor = 0.0;

  void validate() const;
  friend bool operator==(const Bm25Params&, const Bm25Params&) = default;
};

struct Posting {
  std::uint32_t doc = 0;
  std::uint32_t tf = 0;
  friend bool operator==(const Posting&, const Posting&) = default;
};

struct Bm25Index {
  Channel channel = Channel::Script;
  std::string tokenizer_id;
  std::vector<std::string> doc_ids;
  std::vector<std::uint32_t> doc_len;
  std::map<std::string, std::vector<Posting>, std::less<>> postings;
  double avg_len = 0.0;
  std::size_t n_docs = 0;

  friend bool operator==(const Bm25Index&, const Bm25Index&) = default;
};

/// Throws Error(EmptyPool) when the pool is empty or no document has text
/// on this channel.
Bm25Index build_index(const std::vector<Example>& pool, Channel channel, const Tokenizer& tokenizer);

/// Same, from pre-tokenized documents.
Bm25Index build_index(const std::vector<std::vector<std::string>>& docs, Channel channel,
                      std::string tokenizer_id, std::vector<std::string> doc_ids = {});

/// Throws Error(TokenizerMismatch) when the query stream carries a tokenizer
/// id different from the index's.
ScoreVector bm25_score(const Bm25Index& index, const TokenStream& query, const Bm25Params& params);

double bm25_idf(const Bm25Index& index, std::size_t df, const Bm25Params& params);

std::string snapshot_json(const Bm25Index& index);
Bm25Index parse_snapshot(std::string_view text);
void save_index(const std::filesystem::path& path, const Bm25Index& index);
Bm25Index load_index(const std::filesystem::path& path);

inline constexpr int kSnapshotVersion = 1;

}  // namespace phonicl
