#include "phonicl/retrieve.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "phonicl/error.hpp"
#include "phonicl/parallel.hpp"
#include "phonicl/rng.hpp"

namespace phonicl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// StrategyId

StrategyId StrategyId::single(Channel c) {
  switch (c) {
    case Channel::Script: return {Kind::Script, 0, {}, {}, {}};
    case Channel::Ipa: return {Kind::Ipa, 0, {}, {}, {}};
    case Channel::Roman: return {Kind::Roman, 0, {}, {}, {}};
  }
  return {};
}

namespace {

std::vector<std::string_view> split(std::string_view s, char sep, std::size_t max_parts = 0) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    if (max_parts && parts.size() + 1 == max_parts) {
      parts.push_back(s.substr(start));
      break;
    }
    const auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      parts.push_back(s.substr(start));
      break;
    }
    parts.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
  return parts;
}

std::uint64_t parse_seed(std::string_view text) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(std::string(text), &used, 10);
    if (used != text.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, "bad seed '" + std::string(text) + "'");
  }
}

}  // namespace

StrategyId StrategyId::parse(std::string_view text, std::uint64_t default_seed) {
  const auto head_end = text.find(':');
  const std::string_view head = text.substr(0, head_end);
  const std::string_view rest = head_end == std::string_view::npos ? std::string_view{} : text.substr(head_end + 1);
  const bool has_rest = head_end != std::string_view::npos;

  auto no_args = [&](StrategyId s) {
    if (has_rest) throw Error(ErrorCode::InvalidArgument, "strategy '" + std::string(head) + "' takes no arguments");
    return s;
  };

  if (head == "random") return random(has_rest ? parse_seed(rest) : default_seed);
  if (head == "script") return no_args(single(Channel::Script));
  if (head == "ipa") return no_args(single(Channel::Ipa));
  if (head == "roman") return no_args(single(Channel::Roman));
  if (head == "all") return no_args(all());
  if (head == "harmonic") return no_args(harmonic());
  if (head == "divide-conquer") return no_args(divide_conquer());
  if (head == "append") return no_args(append());
  if (head == "mixed") {
    if (!has_rest) return mixed({Channel::Script, Channel::Ipa});
    std::vector<Channel> channels;
    for (auto part : split(rest, '+')) channels.push_back(parse_channel(part));
    return mixed(std::move(channels));
  }
  if (head == "split-half") {
    if (!has_rest) return split_half(SplitOrder::ScriptFirst);
    const auto parts = split(rest, ':');
    if (parts[0] == "script-first" && parts.size() == 1) return split_half(SplitOrder::ScriptFirst);
    if (parts[0] == "ipa-first" && parts.size() == 1) return split_half(SplitOrder::IpaFirst);
    if (parts[0] == "shuffle" && parts.size() <= 2) {
      return split_half(SplitOrder::Shuffle, parts.size() == 2 ? parse_seed(parts[1]) : default_seed);
    }
    throw Error(ErrorCode::InvalidArgument, "bad split-half order '" + std::string(rest) + "'");
  }
  if (head == "dense") {
    if (rest.empty()) throw Error(ErrorCode::InvalidArgument, "dense needs a vectors path");
    return dense(std::string(rest));
  }
  throw Error(ErrorCode::InvalidArgument, "unknown strategy '" + std::string(text) + "'");
}

std::string StrategyId::to_string() const {
  switch (kind) {
    case Kind::Random: return "random:" + std::to_string(seed);
    case Kind::Script: return "script";
    case Kind::Ipa: return "ipa";
    case Kind::Roman: return "roman";
    case Kind::Mixed: {
      std::string s = "mixed:";
      for (std::size_t i = 0; i < channels.size(); ++i) {
        if (i) s += '+';
        s += phonicl::to_string(channels[i]);
      }
      return s;
    }
    case Kind::All: return "all";
    case Kind::Harmonic: return "harmonic";
    case Kind::SplitHalf:
      switch (order) {
        case SplitOrder::ScriptFirst: return "split-half:script-first";
        case SplitOrder::IpaFirst: return "split-half:ipa-first";
        case SplitOrder::Shuffle: return "split-half:shuffle:" + std::to_string(seed);
      }
      break;
    case Kind::DivideConquer: return "divide-conquer";
    case Kind::Append: return "append";
    case Kind::Dense: return "dense:" + vectors_path;
  }
  return "?";
}

std::vector<Channel> StrategyId::required_channels() const {
  switch (kind) {
    case Kind::Random:
    case Kind::Dense: return {};
    case Kind::Script: return {Channel::Script};
    case Kind::Ipa: return {Channel::Ipa};
    case Kind::Roman: return {Channel::Roman};
    case Kind::Mixed: return channels;
    case Kind::All: return {Channel::Script, Channel::Ipa, Channel::Roman};
    case Kind::Harmonic:
    case Kind::SplitHalf:
    case Kind::DivideConquer:
    case Kind::Append: return {Channel::Script, Channel::Ipa};
  }
  return {};
}

void StrategyId::validate(std::size_t k) const {
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  if (kind == Kind::Mixed) {
    const std::set<Channel> distinct(channels.begin(), channels.end());
    if (distinct.size() != channels.size()) {
      throw Error(ErrorCode::InvalidArgument, "mixed lists a channel twice");
    }
    if (distinct.size() < 2) throw Error(ErrorCode::InvalidArgument, "mixed needs at least two channels");
  }
  if (kind == Kind::SplitHalf && k % 2 != 0) {
    throw Error(ErrorCode::OddKForSplitHalf, "split-half needs an even k, got " + std::to_string(k));
  }
  if (kind == Kind::Dense && vectors_path.empty()) {
    throw Error(ErrorCode::MissingVectors, "dense strategy without a vectors path");
  }
}

// ---------------------------------------------------------------------------
// Score algebra

ScoreVector mean_scores(const std::vector<const ScoreVector*>& channels) {
  if (channels.empty()) throw Error(ErrorCode::InvalidArgument, "mean of zero channels");
  ScoreVector sum = *channels.front();
  for (std::size_t i = 1; i < channels.size(); ++i) {
    if (channels[i]->size() != sum.size()) throw Error(ErrorCode::InvalidArgument, "channel sizes differ");
    sum += *channels[i];
  }
  return sum / static_cast<double>(channels.size());
}

ScoreVector min_max_normalize(const ScoreVector& scores) {
  if (scores.size() == 0) return scores;
  const double lo = scores.minCoeff();
  const double hi = scores.maxCoeff();
  if (hi == lo) return ScoreVector::Zero(scores.size());
  return ((scores.array() - lo) / (hi - lo)).matrix();
}

namespace {

const ScoreVector& channel_scores(const ChannelScores& scores, Channel c) {
  auto it = scores.sparse.find(c);
  if (it == scores.sparse.end()) {
    throw Error(ErrorCode::MissingChannel, std::string("no scores for channel ") + to_string(c));
  }
  if (static_cast<std::size_t>(it->second.size()) != scores.n_docs) {
    throw Error(ErrorCode::InvalidArgument, "score vector size differs from pool size");
  }
  return it->second;
}

ScoreVector maybe_normalized(const ChannelScores& scores, Channel c, const RetrieveOptions& options) {
  const auto& s = channel_scores(scores, c);
  return options.normalize ? min_max_normalize(s) : s;
}

std::vector<Selected> mixed_select(const std::vector<Channel>& channels, std::size_t k,
                                   const ChannelScores& scores, const RetrieveOptions& options) {
  std::vector<ScoreVector> owned;
  owned.reserve(channels.size());
  for (auto c : channels) owned.push_back(maybe_normalized(scores, c, options));
  std::vector<const ScoreVector*> ptrs;
  for (const auto& v : owned) ptrs.push_back(&v);
  return top_k(mean_scores(ptrs), k);
}

bool ranks_before(const Selected& a, const Selected& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc < b.doc;
}

std::vector<Selected> split_half_select(const StrategyId& s, std::size_t k, const ChannelScores& scores,
                                        std::string_view query_id) {
  const std::size_t half = k / 2;
  const Channel first = s.order == SplitOrder::IpaFirst ? Channel::Ipa : Channel::Script;
  const Channel second = first == Channel::Script ? Channel::Ipa : Channel::Script;
  std::vector<Selected> out = top_k(channel_scores(scores, first), half);
  std::set<std::size_t> seen;
  for (const auto& sel : out) seen.insert(sel.doc);
  std::size_t added = 0;
  for (const auto& sel : top_k(channel_scores(scores, second), scores.n_docs)) {
    if (added == half) break;
    if (seen.contains(sel.doc)) continue;
    out.push_back(sel);
    ++added;
  }
  if (s.order == SplitOrder::Shuffle) {
    Xoshiro256 rng(derive_seed(s.seed, "shuffle/" + std::string(query_id)));
    shuffle_in_place(out, rng);
  }
  return out;
}

}  // namespace

std::vector<Selected> select(const StrategyId& strategy, std::size_t k, const ChannelScores& scores,
                             std::string_view query_id, const RetrieveOptions& options) {
  using Kind = StrategyId::Kind;
  if (k < 1) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
  switch (strategy.kind) {
    case Kind::Random: {
      Xoshiro256 rng(derive_seed(strategy.seed, "random/" + std::string(query_id)));
      std::vector<Selected> out;
      for (auto doc : sample_without_replacement(scores.n_docs, k, rng)) out.push_back({doc, 0.0});
      return out;
    }
    case Kind::Script: return top_k(channel_scores(scores, Channel::Script), k);
    case Kind::Ipa: return top_k(channel_scores(scores, Channel::Ipa), k);
    case Kind::Roman: return top_k(channel_scores(scores, Channel::Roman), k);
    case Kind::Mixed:
    case Kind::All: return mixed_select(strategy.required_channels(), k, scores, options);
    case Kind::Harmonic: {
      const ScoreVector a = maybe_normalized(scores, Channel::Script, options);
      const ScoreVector b = maybe_normalized(scores, Channel::Ipa, options);
      return top_k(harmonic_scores(a, b), k);
    }
    case Kind::SplitHalf:
      if (k % 2 != 0) throw Error(ErrorCode::OddKForSplitHalf, "split-half needs an even k");
      return split_half_select(strategy, k, scores, query_id);
    case Kind::DivideConquer: {
      std::map<std::size_t, double> best;
      for (auto c : {Channel::Script, Channel::Ipa}) {
        for (const auto& sel : top_k(maybe_normalized(scores, c, options), k)) {
          auto [it, inserted] = best.emplace(sel.doc, sel.score);
          if (!inserted) it->second = std::max(it->second, sel.score);
        }
      }
      std::vector<Selected> merged;
      for (const auto& [doc, score] : best) merged.push_back({doc, score});
      std::sort(merged.begin(), merged.end(), ranks_before);
      if (merged.size() > k) merged.resize(k);
      return merged;
    }
    case Kind::Append: {
      std::vector<Selected> all = top_k(maybe_normalized(scores, Channel::Script, options), k);
      for (const auto& sel : top_k(maybe_normalized(scores, Channel::Ipa, options), k)) all.push_back(sel);
      std::stable_sort(all.begin(), all.end(), ranks_before);
      if (all.size() > k) all.resize(k);
      return all;
    }
    case Kind::Dense:
      if (!scores.dense) throw Error(ErrorCode::MissingVectors, "no dense scores for this query");
      return top_k(*scores.dense, k);
  }
  return {};
}

// ---------------------------------------------------------------------------
// DenseStoreT

template <typename Scalar>
DenseStoreT<Scalar>::DenseStoreT(std::vector<std::string> ids, Matrix rows)
    : ids_(std::move(ids)), rows_(std::move(rows)) {
  if (static_cast<Eigen::Index>(ids_.size()) != rows_.rows()) {
    throw Error(ErrorCode::InvalidArgument, "vector id count differs from row count");
  }
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (!row_of_.emplace(ids_[i], static_cast<Eigen::Index>(i)).second) {
      throw Error(ErrorCode::DuplicateId, "duplicate vector id '" + ids_[i] + "'");
    }
  }
}

template <typename Scalar>
DenseStoreT<Scalar> DenseStoreT<Scalar>::parse(std::string_view jsonl) {
  std::vector<std::string> ids;
  std::vector<std::vector<Scalar>> vecs;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < jsonl.size()) {
    std::size_t end = jsonl.find('\n', start);
    if (end == std::string_view::npos) end = jsonl.size();
    const auto line = jsonl.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      const json j = json::parse(line);
      ids.push_back(j.at("id").get<std::string>());
      vecs.push_back(j.at("vector").get<std::vector<Scalar>>());
    } catch (const json::exception& e) {
      throw MalformedRecord(line_no, e.what());
    }
    if (vecs.back().size() != vecs.front().size()) {
      throw MalformedRecord(line_no, "vector dimension differs from the first record");
    }
  }
  const Eigen::Index dim = vecs.empty() ? 0 : static_cast<Eigen::Index>(vecs.front().size());
  Matrix rows(static_cast<Eigen::Index>(vecs.size()), dim);
  for (std::size_t i = 0; i < vecs.size(); ++i) {
    rows.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(vecs[i].data(), dim);
  }
  return DenseStoreT(std::move(ids), std::move(rows));
}

template <typename Scalar>
DenseStoreT<Scalar> DenseStoreT<Scalar>::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingVectors, "cannot open vectors file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

template <typename Scalar>
ScoreVectorT<Scalar> DenseStoreT<Scalar>::cosine_scores(const std::string& query_id,
                                                        const std::vector<std::string>& pool_ids) const {
  auto q = row_of_.find(query_id);
  if (q == row_of_.end()) throw Error(ErrorCode::MissingVectors, "no vector for query '" + query_id + "'");
  ScoreVectorT<Scalar> out(static_cast<Eigen::Index>(pool_ids.size()));
  for (std::size_t i = 0; i < pool_ids.size(); ++i) {
    auto it = row_of_.find(pool_ids[i]);
    if (it == row_of_.end()) throw Error(ErrorCode::MissingVectors, "no vector for pool id '" + pool_ids[i] + "'");
    out[static_cast<Eigen::Index>(i)] = cosine(rows_.row(q->second), rows_.row(it->second));
  }
  return out;
}

template class DenseStoreT<double>;
template class DenseStoreT<float>;

// ---------------------------------------------------------------------------
// Retriever

Retriever::Retriever(std::vector<std::string> pool_ids, std::map<Channel, Bm25Index> indexes,
                     Tokenizer tokenizer, Bm25Params params, const DenseStore* dense,
                     RetrieveOptions options)
    : pool_ids_(std::move(pool_ids)),
      indexes_(std::move(indexes)),
      tokenizer_(std::move(tokenizer)),
      params_(params),
      dense_(dense),
      options_(options) {
  params_.validate();
  for (const auto& [channel, index] : indexes_) {
    if (index.n_docs != pool_ids_.size()) {
      throw Error(ErrorCode::InvalidArgument, std::string("index for ") + to_string(channel) +
                                                  " covers " + std::to_string(index.n_docs) +
                                                  " docs, pool has " + std::to_string(pool_ids_.size()));
    }
  }
}

ChannelScores Retriever::score(const Example& query, const StrategyId& strategy) const {
  ChannelScores scores;
  scores.n_docs = pool_ids_.size();
  for (auto channel : strategy.required_channels()) {
    auto it = indexes_.find(channel);
    if (it == indexes_.end()) {
      throw Error(ErrorCode::MissingChannel, std::string("no index for channel ") + to_string(channel));
    }
    const TokenStream q = tokenizer_.tokenize(channel_text(query, channel));
    scores.sparse.emplace(channel, bm25_score(it->second, q, params_));
  }
  if (strategy.kind == StrategyId::Kind::Dense) {
    if (!dense_) throw Error(ErrorCode::MissingVectors, "dense strategy without a vector store");
    scores.dense = dense_->cosine_scores(query.id, pool_ids_);
  }
  return scores;
}

RetrievalResult Retriever::retrieve(const Example& query, const StrategyId& strategy, std::size_t k) const {
  strategy.validate(k);
  if (pool_ids_.empty()) throw Error(ErrorCode::EmptyPool, "retrieval over an empty pool");
  const ChannelScores scores = score(query, strategy);
  RetrievalResult result;
  result.query_id = query.id;
  result.strategy = strategy;
  result.selected = select(strategy, k, scores, query.id, options_);
  for (const auto& [channel, vec] : scores.sparse) {
    result.per_channel.emplace(channel, top_k(vec, options_.per_channel_keep));
  }
  return result;
}

std::vector<RetrievalResult> Retriever::retrieve_batch(const std::vector<Example>& queries,
                                                       const StrategyId& strategy, std::size_t k,
                                                       std::size_t parallelism) const {
  std::vector<RetrievalResult> out(queries.size());
  parallel_for(queries.size(), parallelism, [&](std::size_t i) { out[i] = retrieve(queries[i], strategy, k); });
  return out;
}

}  // namespace phonicl
