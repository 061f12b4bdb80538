#pragma once

// End-to-end experiments and the analyses run on their results.
//
// A run goes prepare -> index -> retrieve -> prompt -> complete -> score for
// every dataset in manifest order. Artifacts land in output_dir:
//   splits/<task>.<lang>.json        split manifest
//   prepared/<task>.<lang>.jsonl     records after transliteration
//   indexes/<task>.<lang>.<ch>.json  BM25 snapshots
//   retrievals.jsonl, prompts.jsonl, completions.jsonl
//   report.json, report.txt
// Files are appended as stages finish, so a failed run leaves everything
// produced before the failure.
//
// Seeding: dataset splits use derive_seed(seed, "split/<task>/<lang>");
// random and split-half:shuffle strategies default to the manifest seed and
// derive per-query streams from it.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "phonicl/bm25.hpp"
#include "phonicl/corpus.hpp"
#include "phonicl/inference.hpp"
#include "phonicl/metrics.hpp"
#include "phonicl/promptkit.hpp"
#include "phonicl/retrieve.hpp"

namespace phonicl {

inline constexpr int kManifestSchemaVersion = 1;
inline constexpr int kReportVersion = 1;

enum class MetricKind { Bleu, Chrf, F1 };

const char* to_string(MetricKind kind);
MetricKind parse_metric(std::string_view text);

/// BLEU for aya-wiki, chrF for flores, F1 for aya-mlqa, chrF otherwise.
MetricKind default_metric(const Task& task);

struct DatasetSpec {
  Task task;
  std::string lang;
  std::string path;
  std::optional<DatasetFormat> format;
  std::optional<MetricKind> metric;
};

struct RunManifest {
  int schema_version = kManifestSchemaVersion;
  std::uint64_t seed = 0;
  std::vector<DatasetSpec> datasets;

  std::size_t test_size = 500;
  std::size_t pool_size = 10000;
  QualityFilterConfig filter;

  /// Profile directories; an empty string leaves that channel as loaded.
  std::string ipa_profiles;
  std::string roman_profiles;

  std::string tokenizer_kind = "ws";
  std::string tokenizer_path;

  Bm25Params bm25;
  RetrieveOptions retrieve;
  std::vector<StrategyId> strategies;
  std::size_t k = 3;

  PromptConfig prompt;
  std::string templates_path;

  EndpointConfig endpoint;
  std::string cache_path;
  CacheMode cache_mode = CacheMode::Replay;

  MetricConfig metrics;
  std::string output_dir = "out";
  std::set<std::string> latin_langs;
  std::set<std::string> nonlatin_langs;
  std::size_t workers = 1;

  /// Directory relative paths resolve against; not serialized.
  std::filesystem::path base_dir;

  void validate() const;
  std::filesystem::path resolve(const std::string& path) const;

  /// Serialized form; never contains the API key.
  nlohmann::ordered_json to_json() const;
  static RunManifest from_json(const nlohmann::json& j, std::filesystem::path base_dir = {});
  static RunManifest load(const std::filesystem::path& path);

  /// SHA-256 of the serialized form.
  std::string hash() const;
};

struct ScoreRow {
  std::string task;
  std::string lang;
  std::string strategy;
  MetricKind metric = MetricKind::Chrf;
  double value = 0.0;
  std::size_t n = 0;
  std::size_t failures = 0;
};

struct OverlapRow {
  std::string task;
  std::string lang;
  std::string a;
  std::string b;
  std::size_t k = 0;
  double percent = 0.0;
};

struct GapRow {
  std::string task;
  std::string metric;
  std::string strategy;
  double latin_mean = 0.0;
  double nonlatin_mean = 0.0;
  /// latin_mean - nonlatin_mean
  double abs_gap = 0.0;
  /// abs_gap / latin_mean, absent when latin_mean is 0
  std::optional<double> rel_gap;
  /// Percent gain over the baseline strategy within each group.
  std::optional<double> latin_gain;
  std::optional<double> nonlatin_gain;
};

struct GapTable {
  std::string baseline;
  std::set<std::string> latin_langs;
  std::set<std::string> nonlatin_langs;
  std::vector<GapRow> rows;
  /// Mean over tasks of the baseline strategy's rel_gap.
  std::optional<double> macro_rel_gap;
};

struct EvalReport {
  std::string manifest_hash;
  nlohmann::ordered_json config;
  std::vector<ScoreRow> scores;
  std::vector<OverlapRow> overlaps;
  std::optional<GapTable> gap;
  std::size_t audited = 0;
};

/// (score - baseline) / baseline; absent when baseline <= 0.
std::optional<double> relative_gain(double score, double baseline);

/// Mean over queries of |top-k(a) ∩ top-k(b)| / k * 100, pairing results by
/// query id. Throws Error(QueryMismatch) when the query sets differ.
double overlap_at_k(const std::vector<RetrievalResult>& a, const std::vector<RetrievalResult>& b,
                    std::size_t k);

/// Per task and strategy: group means, gaps and gains over `baseline`
/// ("random" unless given). Throws Error(MissingGroup) when a task has no
/// score for either group.
GapTable gap_report(const EvalReport& report, const std::set<std::string>& latin_langs,
                    const std::set<std::string>& nonlatin_langs, const std::string& baseline = "random");

/// Recomputes every gain and gap from raw scores; returns the number of
/// values checked. Throws Error(InvalidArgument) on a drift above 1e-9.
std::size_t audit_report(const EvalReport& report);

enum class Stage { Prepare, Index, Retrieve, Prompt, Complete, Score };

const char* to_string(Stage stage);
Stage parse_stage(std::string_view text);

struct RunOptions {
  /// Last stage to execute.
  Stage until = Stage::Score;
  /// Transport override (tests); nullptr uses HTTP.
  std::shared_ptr<Transport> transport;
};

/// Throws StageError labelled with the failing stage.
EvalReport run_experiment(const RunManifest& manifest, const RunOptions& options = {});

nlohmann::ordered_json report_json(const EvalReport& report);
std::string report_text(const EvalReport& report);
std::string report_csv(const EvalReport& report);
EvalReport parse_report(const nlohmann::json& j);

nlohmann::ordered_json retrieval_json(const RetrievalResult& r, const std::vector<std::string>& pool_ids);
/// Lines of retrievals.jsonl; empty filters match everything.
std::vector<RetrievalResult> parse_retrievals(std::string_view jsonl, const std::string& strategy = {},
                                              const std::string& task = {}, const std::string& lang = {});

}  // namespace phonicl
