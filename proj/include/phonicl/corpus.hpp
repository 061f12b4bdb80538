#pragma once

// Aligned multilingual examples, dataset IO, quality filtering and
// seeded pool/test splitting.
//
// Dataset files
//   JSONL: one object per line with keys id, lang, task, script_text,
//          ipa_text, roman_text, target_text. ipa_text and roman_text may be
//          absent. Blank lines are skipped.
//   TSV:   a header row naming the same columns in any order, then one row
//          per record. Inside a field, "\t", "\n", "\r" and "\\" stand for
//          tab, newline, carriage return and backslash.
//
// Line numbers in MalformedRecord are 1-based physical lines of the file.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace phonicl {

enum class TaskKind { AyaWiki, Flores, AyaMlqa, Other };

/// Task tag. `name` is the canonical spelling ("aya-wiki", "flores",
/// "aya-mlqa") or the free-form name for Other.
struct Task {
  TaskKind kind = TaskKind::Other;
  std::string name;

  static Task parse(std::string_view text);
  friend bool operator==(const Task&, const Task&) = default;
  friend auto operator<=>(const Task&, const Task&) = default;
};

struct Example {
  std::string id;
  std::string lang;
  Task task;
  std::string script_text;
  std::string ipa_text;
  std::optional<std::string> roman_text;
  std::string target_text;

  friend bool operator==(const Example&, const Example&) = default;
};

enum class DatasetFormat { Tsv, Jsonl };

DatasetFormat format_from_path(const std::filesystem::path& path);

/// Reads every record in file order. When `declared_langs` is non-empty,
/// records in other languages are rejected as malformed.
std::vector<Example> load_dataset(const std::filesystem::path& path, DatasetFormat format,
                                  const std::set<std::string>& declared_langs = {});

std::vector<Example> parse_jsonl(std::string_view content,
                                 const std::set<std::string>& declared_langs = {});
std::vector<Example> parse_tsv(std::string_view content,
                               const std::set<std::string>& declared_langs = {});

std::string to_jsonl(const std::vector<Example>& examples);
std::string to_tsv(const std::vector<Example>& examples);
void save_dataset(const std::filesystem::path& path, DatasetFormat format,
                  const std::vector<Example>& examples);

std::string tsv_escape(std::string_view field);
std::string tsv_unescape(std::string_view field);

struct QualityFilterConfig {
  std::vector<std::string> reject_substrings{"<unk>"};
  std::size_t min_chars = 1;
  std::size_t max_chars = 100000;

  void validate() const;
  friend bool operator==(const QualityFilterConfig&, const QualityFilterConfig&) = default;
};

/// True when the record passes: no text field contains a reject substring and
/// the script text length (in scalars) lies in [min_chars, max_chars].
bool passes_filter(const Example& example, const QualityFilterConfig& filter);

std::vector<Example> apply_filter(const std::vector<Example>& examples,
                                  const QualityFilterConfig& filter);

struct CorpusSplit {
  std::vector<Example> pool;
  std::vector<Example> test;
  std::uint64_t seed = 0;
  std::size_t requested_test_size = 0;
  std::size_t requested_pool_size = 0;
  QualityFilterConfig filter;
};

/// Filters, then draws the test partition by seeded sampling without
/// replacement and the pool from the remainder (the whole remainder when it
/// is smaller than pool_size). Both partitions keep the input order.
CorpusSplit make_split(const std::vector<Example>& examples, std::size_t test_size,
                       std::size_t pool_size, std::uint64_t seed,
                       const QualityFilterConfig& filter = {});

/// JSON manifest: seed, sizes, filter config and both id lists.
std::string split_manifest_json(const CorpusSplit& split);

}  // namespace phonicl
