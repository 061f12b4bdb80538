#include "phonicl/bm25.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"
#include "phonicl/error.hpp"

namespace phonicl {

using ordered_json = nlohmann::ordered_json;

const char* to_string(Channel channel) {
  switch (channel) {
    case Channel::Script: return "script";
    case Channel::Ipa: return "ipa";
    case Channel::Roman: return "roman";
  }
  return "?";
}

Channel parse_channel(std::string_view text) {
  if (text == "script") return Channel::Script;
  if (text == "ipa") return Channel::Ipa;
  if (text == "roman") return Channel::Roman;
  throw Error(ErrorCode::InvalidArgument, "unknown channel '" + std::string(text) + "'");
}

const std::string& channel_text(const Example& example, Channel channel) {
  static const std::string kEmpty;
  switch (channel) {
    case Channel::Script: return example.script_text;
    case Channel::Ipa: return example.ipa_text;
    case Channel::Roman: return example.roman_text ? *example.roman_text : kEmpty;
  }
  return kEmpty;
}

void Bm25Params::validate() const {
  if (!(k1 >= 0.0)) throw Error(ErrorCode::InvalidArgument, "k1 must be >= 0");
  if (!(b >= 0.0 && b <= 1.0)) throw Error(ErrorCode::InvalidArgument, "b must lie in [0, 1]");
  if (!(idf_floor >= 0.0)) throw Error(ErrorCode::InvalidArgument, "idf_floor must be >= 0");
}

Bm25Index build_index(const std::vector<std::vector<std::string>>& docs, Channel channel,
                      std::string tokenizer_id, std::vector<std::string> doc_ids) {
  if (docs.empty()) throw Error(ErrorCode::EmptyPool, "cannot index an empty pool");
  if (!doc_ids.empty() && doc_ids.size() != docs.size()) {
    throw Error(ErrorCode::InvalidArgument, "doc_ids size differs from document count");
  }
  Bm25Index index;
  index.channel = channel;
  index.tokenizer_id = std::move(tokenizer_id);
  index.n_docs = docs.size();
  index.doc_len.reserve(docs.size());
  if (doc_ids.empty()) {
    for (std::size_t d = 0; d < docs.size(); ++d) doc_ids.push_back(std::to_string(d));
  }
  index.doc_ids = std::move(doc_ids);

  std::uint64_t total = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    std::map<std::string_view, std::uint32_t> tf;
    for (const auto& tok : docs[d]) ++tf[tok];
    for (const auto& [term, count] : tf) {
      index.postings[std::string(term)].push_back({static_cast<std::uint32_t>(d), count});
    }
    index.doc_len.push_back(static_cast<std::uint32_t>(docs[d].size()));
    total += docs[d].size();
  }
  if (total == 0) {
    throw Error(ErrorCode::EmptyPool,
                std::string("no document has text on channel ") + to_string(channel));
  }
  index.avg_len = static_cast<double>(total) / static_cast<double>(docs.size());
  return index;
}

Bm25Index build_index(const std::vector<Example>& pool, Channel channel, const Tokenizer& tokenizer) {
  if (pool.empty()) throw Error(ErrorCode::EmptyPool, "cannot index an empty pool");
  std::vector<std::vector<std::string>> docs;
  std::vector<std::string> ids;
  docs.reserve(pool.size());
  ids.reserve(pool.size());
  for (const auto& ex : pool) {
    docs.push_back(tokenizer.tokenize(channel_text(ex, channel)).tokens);
    ids.push_back(ex.id);
  }
  return build_index(docs, channel, tokenizer.id(), std::move(ids));
}

double bm25_idf(const Bm25Index& index, std::size_t df, const Bm25Params& params) {
  const double n = static_cast<double>(index.n_docs);
  const double d = static_cast<double>(df);
  return std::max(params.idf_floor, std::log((n - d + 0.5) / (d + 0.5) + 1.0));
}

ScoreVector bm25_score(const Bm25Index& index, const TokenStream& query, const Bm25Params& params) {
  params.validate();
  if (!query.tokenizer_id.empty() && query.tokenizer_id != index.tokenizer_id) {
    throw Error(ErrorCode::TokenizerMismatch, "query tokenized with '" + query.tokenizer_id +
                                                  "' but index built with '" + index.tokenizer_id + "'");
  }
  ScoreVector scores = ScoreVector::Zero(static_cast<Eigen::Index>(index.n_docs));
  // Per-document length normalisation is shared by every query term.
  const Eigen::ArrayXd len = Eigen::Map<const Eigen::Array<std::uint32_t, Eigen::Dynamic, 1>>(
                                 index.doc_len.data(), static_cast<Eigen::Index>(index.doc_len.size()))
                                 .cast<double>();
  const Eigen::ArrayXd norm = params.k1 * (1.0 - params.b + params.b * len / index.avg_len);

  for (const auto& term : query.tokens) {
    auto it = index.postings.find(term);
    if (it == index.postings.end()) continue;
    const double idf = bm25_idf(index, it->second.size(), params);
    for (const auto& p : it->second) {
      const double tf = p.tf;
      scores[p.doc] += idf * tf * (params.k1 + 1.0) / (tf + norm[p.doc]);
    }
  }
  return scores;
}

std::string snapshot_json(const Bm25Index& index) {
  ordered_json j;
  j["format"] = "phonicl-bm25-index";
  j["version"] = kSnapshotVersion;
  j["channel"] = to_string(index.channel);
  j["tokenizer_id"] = index.tokenizer_id;
  j["n_docs"] = index.n_docs;
  j["avg_len"] = index.avg_len;
  j["doc_ids"] = index.doc_ids;
  j["doc_len"] = index.doc_len;
  ordered_json postings = ordered_json::object();
  for (const auto& [term, list] : index.postings) {
    ordered_json arr = ordered_json::array();
    for (const auto& p : list) arr.push_back({p.doc, p.tf});
    postings[term] = std::move(arr);
  }
  j["postings"] = std::move(postings);
  return j.dump() + "\n";
}

Bm25Index parse_snapshot(std::string_view text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::SnapshotParseError, std::string("index snapshot: ") + e.what());
  }
  if (!j.is_object() || !j.contains("format") || j["format"] != "phonicl-bm25-index") {
    throw Error(ErrorCode::SnapshotParseError, "not a phonicl index snapshot");
  }
  if (!j.contains("version") || j["version"] != kSnapshotVersion) {
    throw Error(ErrorCode::SnapshotVersionMismatch,
                "snapshot version " + j.value("version", ordered_json(-1)).dump() + ", expected " +
                    std::to_string(kSnapshotVersion));
  }
  try {
    Bm25Index index;
    index.channel = parse_channel(j.at("channel").get<std::string>());
    index.tokenizer_id = j.at("tokenizer_id").get<std::string>();
    index.n_docs = j.at("n_docs").get<std::size_t>();
    index.avg_len = j.at("avg_len").get<double>();
    index.doc_ids = j.at("doc_ids").get<std::vector<std::string>>();
    index.doc_len = j.at("doc_len").get<std::vector<std::uint32_t>>();
    for (const auto& [term, arr] : j.at("postings").items()) {
      auto& list = index.postings[term];
      for (const auto& p : arr) {
        const Posting posting{p.at(0).get<std::uint32_t>(), p.at(1).get<std::uint32_t>()};
        if (posting.doc >= index.n_docs) throw Error(ErrorCode::SnapshotParseError, "posting out of range");
        list.push_back(posting);
      }
    }
    if (index.doc_len.size() != index.n_docs || index.doc_ids.size() != index.n_docs) {
      throw Error(ErrorCode::SnapshotParseError, "document tables disagree with n_docs");
    }
    return index;
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::SnapshotParseError, std::string("index snapshot: ") + e.what());
  }
}

void save_index(const std::filesystem::path& path, const Bm25Index& index) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << snapshot_json(index);
}

Bm25Index load_index(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_snapshot(ss.str());
}

}  // namespace phonicl
