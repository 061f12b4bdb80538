#include "phonicl/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_set>

#include "json.hpp"
#include "phonicl/error.hpp"
#include "phonicl/rng.hpp"
#include "phonicl/unicode.hpp"

namespace phonicl {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

Task Task::parse(std::string_view text) {
  std::string key;
  for (char c : text) {
    if (c == '-' || c == '_' || c == ' ') continue;
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (key == "ayawiki") return {TaskKind::AyaWiki, "aya-wiki"};
  if (key == "flores") return {TaskKind::Flores, "flores"};
  if (key == "ayamlqa") return {TaskKind::AyaMlqa, "aya-mlqa"};
  return {TaskKind::Other, std::string(text)};
}

DatasetFormat format_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".tsv") return DatasetFormat::Tsv;
  if (ext == ".jsonl" || ext == ".json") return DatasetFormat::Jsonl;
  throw Error(ErrorCode::InvalidArgument, "cannot infer dataset format from " + path.string());
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string_view> split_lines(std::string_view content) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  return lines;
}

void check_record(Example& ex, std::size_t line_no, const std::set<std::string>& langs,
                  std::unordered_set<std::string>& seen) {
  if (ex.id.empty()) throw MalformedRecord(line_no, "empty id");
  if (!langs.empty() && !langs.contains(ex.lang)) {
    throw MalformedRecord(line_no, "undeclared language '" + ex.lang + "'");
  }
  if (!seen.insert(ex.id).second) {
    throw Error(ErrorCode::DuplicateId, "duplicate id '" + ex.id + "' at line " +
                                            std::to_string(line_no));
  }
}

constexpr std::string_view kRequired[] = {"id", "lang", "task", "script_text", "target_text"};

}  // namespace

std::vector<Example> parse_jsonl(std::string_view content, const std::set<std::string>& langs) {
  std::vector<Example> out;
  std::unordered_set<std::string> seen;
  const auto lines = split_lines(content);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    const auto line = lines[i];
    if (line.find_first_not_of(" \t") == std::string_view::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw MalformedRecord(line_no, e.what());
    }
    if (!obj.is_object()) throw MalformedRecord(line_no, "not a JSON object");
    auto get = [&](std::string_view key, bool required) -> std::optional<std::string> {
      auto it = obj.find(key);
      if (it == obj.end() || it->is_null()) {
        if (required) throw MalformedRecord(line_no, "missing field '" + std::string(key) + "'");
        return std::nullopt;
      }
      if (!it->is_string()) {
        throw MalformedRecord(line_no, "field '" + std::string(key) + "' is not a string");
      }
      return it->get<std::string>();
    };
    Example ex;
    ex.id = *get(kRequired[0], true);
    ex.lang = *get(kRequired[1], true);
    ex.task = Task::parse(*get(kRequired[2], true));
    ex.script_text = *get(kRequired[3], true);
    ex.target_text = *get(kRequired[4], true);
    ex.ipa_text = get("ipa_text", false).value_or("");
    ex.roman_text = get("roman_text", false);
    check_record(ex, line_no, langs, seen);
    out.push_back(std::move(ex));
  }
  return out;
}

std::string tsv_escape(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (char c : field) {
    switch (c) {
      case '\t': out += "\\t"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\\': out += "\\\\"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::string tsv_unescape(std::string_view field) {
  std::string out;
  out.reserve(field.size());
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (field[i] != '\\' || i + 1 == field.size()) {
      out.push_back(field[i]);
      continue;
    }
    const char n = field[++i];
    switch (n) {
      case 't': out.push_back('\t'); break;
      case 'n': out.push_back('\n'); break;
      case 'r': out.push_back('\r'); break;
      case '\\': out.push_back('\\'); break;
      default:
        out.push_back('\\');
        out.push_back(n);
    }
  }
  return out;
}

std::vector<Example> parse_tsv(std::string_view content, const std::set<std::string>& langs) {
  std::vector<Example> out;
  const auto lines = split_lines(content);
  if (lines.empty()) return out;

  auto split_tabs = [](std::string_view line) {
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string_view::npos ? line.npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    return cols;
  };

  std::map<std::string, std::size_t, std::less<>> column;
  const auto header = split_tabs(lines[0]);
  for (std::size_t c = 0; c < header.size(); ++c) column.emplace(std::string(header[c]), c);
  for (auto key : kRequired) {
    if (!column.contains(key)) throw MalformedRecord(1, "header lacks column '" + std::string(key) + "'");
  }

  std::unordered_set<std::string> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (lines[i].empty()) continue;
    const auto cols = split_tabs(lines[i]);
    auto get = [&](std::string_view key, bool required) -> std::optional<std::string> {
      auto it = column.find(key);
      if (it == column.end() || it->second >= cols.size()) {
        if (required) throw MalformedRecord(line_no, "missing field '" + std::string(key) + "'");
        return std::nullopt;
      }
      return tsv_unescape(cols[it->second]);
    };
    Example ex;
    ex.id = *get("id", true);
    ex.lang = *get("lang", true);
    ex.task = Task::parse(*get("task", true));
    ex.script_text = *get("script_text", true);
    ex.target_text = *get("target_text", true);
    ex.ipa_text = get("ipa_text", false).value_or("");
    auto roman = get("roman_text", false);
    if (roman && !roman->empty()) ex.roman_text = std::move(roman);
    check_record(ex, line_no, langs, seen);
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<Example> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                  const std::set<std::string>& declared_langs) {
  const std::string content = read_file(path);
  return format == DatasetFormat::Jsonl ? parse_jsonl(content, declared_langs)
                                        : parse_tsv(content, declared_langs);
}

std::string to_jsonl(const std::vector<Example>& examples) {
  std::string out;
  for (const auto& ex : examples) {
    ordered_json obj;
    obj["id"] = ex.id;
    obj["lang"] = ex.lang;
    obj["task"] = ex.task.name;
    obj["script_text"] = ex.script_text;
    obj["ipa_text"] = ex.ipa_text;
    if (ex.roman_text) obj["roman_text"] = *ex.roman_text;
    obj["target_text"] = ex.target_text;
    out += obj.dump();
    out.push_back('\n');
  }
  return out;
}

std::string to_tsv(const std::vector<Example>& examples) {
  std::string out = "id\tlang\ttask\tscript_text\tipa_text\troman_text\ttarget_text\n";
  for (const auto& ex : examples) {
    out += tsv_escape(ex.id) + '\t' + tsv_escape(ex.lang) + '\t' + tsv_escape(ex.task.name) + '\t' +
           tsv_escape(ex.script_text) + '\t' + tsv_escape(ex.ipa_text) + '\t' +
           tsv_escape(ex.roman_text.value_or("")) + '\t' + tsv_escape(ex.target_text) + '\n';
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, DatasetFormat format,
                  const std::vector<Example>& examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << (format == DatasetFormat::Jsonl ? to_jsonl(examples) : to_tsv(examples));
}

void QualityFilterConfig::validate() const {
  if (min_chars < 1) throw Error(ErrorCode::InvalidArgument, "min_chars must be >= 1");
  if (min_chars > max_chars) throw Error(ErrorCode::InvalidArgument, "min_chars > max_chars");
}

bool passes_filter(const Example& ex, const QualityFilterConfig& filter) {
  for (const auto& bad : filter.reject_substrings) {
    if (bad.empty()) continue;
    if (ex.script_text.find(bad) != std::string::npos || ex.ipa_text.find(bad) != std::string::npos ||
        ex.target_text.find(bad) != std::string::npos ||
        (ex.roman_text && ex.roman_text->find(bad) != std::string::npos)) {
      return false;
    }
  }
  const std::size_t len = unicode::count_scalars(ex.script_text);
  return len >= filter.min_chars && len <= filter.max_chars;
}

std::vector<Example> apply_filter(const std::vector<Example>& examples,
                                  const QualityFilterConfig& filter) {
  filter.validate();
  std::vector<Example> out;
  std::copy_if(examples.begin(), examples.end(), std::back_inserter(out),
               [&](const Example& ex) { return passes_filter(ex, filter); });
  return out;
}

CorpusSplit make_split(const std::vector<Example>& examples, std::size_t test_size,
                       std::size_t pool_size, std::uint64_t seed,
                       const QualityFilterConfig& filter) {
  const auto clean = apply_filter(examples, filter);
  if (clean.size() < test_size + 1) {
    throw Error(ErrorCode::InsufficientData,
                std::to_string(clean.size()) + " records after filtering; need at least " +
                    std::to_string(test_size + 1));
  }
  const std::size_t pool_count = std::min(pool_size, clean.size() - test_size);

  Xoshiro256 rng(seed);
  auto drawn = sample_without_replacement(clean.size(), test_size + pool_count, rng);
  std::vector<std::size_t> test_idx(drawn.begin(), drawn.begin() + static_cast<std::ptrdiff_t>(test_size));
  std::vector<std::size_t> pool_idx(drawn.begin() + static_cast<std::ptrdiff_t>(test_size), drawn.end());
  std::sort(test_idx.begin(), test_idx.end());
  std::sort(pool_idx.begin(), pool_idx.end());

  CorpusSplit split;
  split.seed = seed;
  split.requested_test_size = test_size;
  split.requested_pool_size = pool_size;
  split.filter = filter;
  split.test.reserve(test_idx.size());
  split.pool.reserve(pool_idx.size());
  for (auto i : test_idx) split.test.push_back(clean[i]);
  for (auto i : pool_idx) split.pool.push_back(clean[i]);
  return split;
}

std::string split_manifest_json(const CorpusSplit& split) {
  ordered_json j;
  j["seed"] = split.seed;
  j["test_size"] = split.requested_test_size;
  j["pool_size"] = split.requested_pool_size;
  j["filter"] = {{"reject_substrings", split.filter.reject_substrings},
                 {"min_chars", split.filter.min_chars},
                 {"max_chars", split.filter.max_chars}};
  j["rng"] = "xoshiro256** seeded by splitmix64; partial Fisher-Yates";
  std::vector<std::string> test_ids, pool_ids;
  for (const auto& ex : split.test) test_ids.push_back(ex.id);
  for (const auto& ex : split.pool) pool_ids.push_back(ex.id);
  j["test_ids"] = test_ids;
  j["pool_ids"] = pool_ids;
  return j.dump(2) + "\n";
}

}  // namespace phonicl
