#include "phonicl/harness.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "phonicl/digest.hpp"
#include "phonicl/error.hpp"
#include "phonicl/g2p.hpp"
#include "phonicl/rng.hpp"
#include "phonicl/tokenize.hpp"

namespace phonicl {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

const char* to_string(MetricKind kind) {
  switch (kind) {
    case MetricKind::Bleu: return "bleu";
    case MetricKind::Chrf: return "chrf";
    case MetricKind::F1: return "f1";
  }
  return "?";
}

MetricKind parse_metric(std::string_view text) {
  if (text == "bleu") return MetricKind::Bleu;
  if (text == "chrf") return MetricKind::Chrf;
  if (text == "f1") return MetricKind::F1;
  throw Error(ErrorCode::InvalidArgument, "unknown metric '" + std::string(text) + "'");
}

MetricKind default_metric(const Task& task) {
  switch (task.kind) {
    case TaskKind::AyaWiki: return MetricKind::Bleu;
    case TaskKind::Flores: return MetricKind::Chrf;
    case TaskKind::AyaMlqa: return MetricKind::F1;
    case TaskKind::Other: return MetricKind::Chrf;
  }
  return MetricKind::Chrf;
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::Prepare: return "prepare";
    case Stage::Index: return "index";
    case Stage::Retrieve: return "retrieve";
    case Stage::Prompt: return "prompt";
    case Stage::Complete: return "complete";
    case Stage::Score: return "score";
  }
  return "?";
}

Stage parse_stage(std::string_view text) {
  for (auto s : {Stage::Prepare, Stage::Index, Stage::Retrieve, Stage::Prompt, Stage::Complete, Stage::Score}) {
    if (text == to_string(s)) return s;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown stage '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

[[noreturn]] void manifest_error(const std::string& what) {
  throw Error(ErrorCode::InvalidArgument, "manifest: " + what);
}

const char* format_name(DatasetFormat f) { return f == DatasetFormat::Tsv ? "tsv" : "jsonl"; }

DatasetFormat parse_format(const std::string& s) {
  if (s == "tsv") return DatasetFormat::Tsv;
  if (s == "jsonl") return DatasetFormat::Jsonl;
  manifest_error("unknown dataset format '" + s + "'");
}

const char* blank_mode_name(BlankMode m) { return m == BlankMode::Omit ? "omit" : "blank"; }

BlankMode parse_blank_mode(const std::string& s) {
  if (s == "omit") return BlankMode::Omit;
  if (s == "blank") return BlankMode::BlankField;
  manifest_error("unknown blank_mode '" + s + "'");
}

}  // namespace

void RunManifest::validate() const {
  if (schema_version != kManifestSchemaVersion) {
    manifest_error("schema_version " + std::to_string(schema_version) + " is not supported (expected " +
                   std::to_string(kManifestSchemaVersion) + ")");
  }
  if (datasets.empty()) manifest_error("no datasets");
  for (const auto& d : datasets) {
    if (d.lang.empty() || d.path.empty()) manifest_error("dataset entries need lang and path");
  }
  if (strategies.empty()) manifest_error("no strategies");
  for (const auto& s : strategies) s.validate(k);
  if (test_size == 0) manifest_error("test_size must be > 0");
  if (workers < 1) manifest_error("workers must be >= 1");
  if (tokenizer_kind == "bpe" && tokenizer_path.empty()) manifest_error("bpe tokenizer needs a path");
  filter.validate();
  bm25.validate();
  metrics.validate();
  PromptConfig pc = prompt;
  pc.k_shots = k;
  pc.validate();
}

std::filesystem::path RunManifest::resolve(const std::string& path) const {
  std::filesystem::path p(path);
  if (p.is_absolute() || base_dir.empty()) return p;
  return base_dir / p;
}

ordered_json RunManifest::to_json() const {
  ordered_json j;
  j["schema_version"] = schema_version;
  j["seed"] = seed;
  ordered_json ds = ordered_json::array();
  for (const auto& d : datasets) {
    ordered_json e;
    e["task"] = d.task.name;
    e["lang"] = d.lang;
    e["path"] = d.path;
    e["format"] = d.format ? ordered_json(format_name(*d.format)) : ordered_json(nullptr);
    e["metric"] = d.metric ? ordered_json(to_string(*d.metric)) : ordered_json(nullptr);
    ds.push_back(std::move(e));
  }
  j["datasets"] = std::move(ds);
  j["split"] = {{"test_size", test_size},
                {"pool_size", pool_size},
                {"filter",
                 {{"reject_substrings", filter.reject_substrings},
                  {"min_chars", filter.min_chars},
                  {"max_chars", filter.max_chars}}}};
  j["g2p"] = {{"ipa", ipa_profiles}, {"roman", roman_profiles}};
  j["tokenizer"] = {{"kind", tokenizer_kind}, {"path", tokenizer_path}};
  j["bm25"] = {{"k1", bm25.k1}, {"b", bm25.b}, {"idf_floor", bm25.idf_floor}};
  j["retrieve"] = {{"normalize", retrieve.normalize}, {"per_channel_keep", retrieve.per_channel_keep}};
  ordered_json ss = ordered_json::array();
  for (const auto& s : strategies) ss.push_back(s.to_string());
  j["strategies"] = std::move(ss);
  j["k"] = k;
  j["prompt"] = {{"include_script", prompt.include_script},
                 {"include_ipa", prompt.include_ipa},
                 {"include_roman", prompt.include_roman},
                 {"blank_mode", blank_mode_name(prompt.blank_mode)},
                 {"shot_order", "descending-score"},
                 {"templates", templates_path}};
  j["endpoint"] = {{"base_url", endpoint.base_url},
                   {"model", endpoint.model},
                   {"temperature", endpoint.temperature},
                   {"max_tokens", endpoint.max_tokens},
                   {"timeout_s", endpoint.timeout_s},
                   {"max_retries", endpoint.max_retries},
                   {"parallelism", endpoint.parallelism},
                   {"system_prompt",
                    endpoint.system_prompt ? ordered_json(*endpoint.system_prompt) : ordered_json(nullptr)},
                   {"backoff_s", endpoint.backoff_s}};
  j["cache"] = {{"path", cache_path}, {"mode", to_string(cache_mode)}};
  j["metrics"] = {{"bleu_max_ngram", metrics.bleu_max_ngram},
                  {"bleu_smooth_k", metrics.bleu_smooth_k},
                  {"bleu_tokenize", "unicode-punct-split; chars for charlevel langs"},
                  {"chrf_char_order", metrics.chrf_char_order},
                  {"chrf_beta", metrics.chrf_beta},
                  {"chrf_remove_whitespace", metrics.chrf_remove_whitespace},
                  {"f1_charlevel_langs", metrics.f1_charlevel_langs}};
  j["output_dir"] = output_dir;
  j["groups"] = {{"latin", latin_langs}, {"nonlatin", nonlatin_langs}};
  j["workers"] = workers;
  return j;
}

RunManifest RunManifest::from_json(const json& j, std::filesystem::path base_dir) {
  RunManifest m;
  m.base_dir = std::move(base_dir);
  try {
    if (!j.is_object()) manifest_error("top level must be an object");
    m.schema_version = j.value("schema_version", kManifestSchemaVersion);
    m.seed = j.value("seed", std::uint64_t{0});
    for (const auto& d : j.at("datasets")) {
      DatasetSpec spec;
      spec.task = Task::parse(d.at("task").get<std::string>());
      spec.lang = d.at("lang").get<std::string>();
      spec.path = d.at("path").get<std::string>();
      if (d.contains("format") && !d["format"].is_null()) spec.format = parse_format(d["format"]);
      if (d.contains("metric") && !d["metric"].is_null()) spec.metric = parse_metric(d["metric"].get<std::string>());
      m.datasets.push_back(std::move(spec));
    }
    if (auto it = j.find("split"); it != j.end()) {
      m.test_size = it->value("test_size", m.test_size);
      m.pool_size = it->value("pool_size", m.pool_size);
      if (auto f = it->find("filter"); f != it->end()) {
        m.filter.reject_substrings = f->value("reject_substrings", m.filter.reject_substrings);
        m.filter.min_chars = f->value("min_chars", m.filter.min_chars);
        m.filter.max_chars = f->value("max_chars", m.filter.max_chars);
      }
    }
    if (auto it = j.find("g2p"); it != j.end()) {
      m.ipa_profiles = it->value("ipa", std::string());
      m.roman_profiles = it->value("roman", std::string());
    }
    if (auto it = j.find("tokenizer"); it != j.end()) {
      m.tokenizer_kind = it->value("kind", m.tokenizer_kind);
      m.tokenizer_path = it->value("path", std::string());
    }
    if (auto it = j.find("bm25"); it != j.end()) {
      m.bm25.k1 = it->value("k1", m.bm25.k1);
      m.bm25.b = it->value("b", m.bm25.b);
      m.bm25.idf_floor = it->value("idf_floor", m.bm25.idf_floor);
    }
    if (auto it = j.find("retrieve"); it != j.end()) {
      m.retrieve.normalize = it->value("normalize", m.retrieve.normalize);
      m.retrieve.per_channel_keep = it->value("per_channel_keep", m.retrieve.per_channel_keep);
    }
    for (const auto& s : j.at("strategies")) m.strategies.push_back(StrategyId::parse(s.get<std::string>(), m.seed));
    m.k = j.value("k", m.k);
    if (auto it = j.find("prompt"); it != j.end()) {
      m.prompt.include_script = it->value("include_script", m.prompt.include_script);
      m.prompt.include_ipa = it->value("include_ipa", m.prompt.include_ipa);
      m.prompt.include_roman = it->value("include_roman", m.prompt.include_roman);
      m.prompt.blank_mode = parse_blank_mode(it->value("blank_mode", std::string("omit")));
      m.templates_path = it->value("templates", std::string());
    }
    m.prompt.k_shots = m.k;
    if (auto it = j.find("endpoint"); it != j.end()) {
      auto& e = m.endpoint;
      e.base_url = it->value("base_url", e.base_url);
      e.model = it->value("model", e.model);
      e.temperature = it->value("temperature", e.temperature);
      e.max_tokens = it->value("max_tokens", e.max_tokens);
      e.timeout_s = it->value("timeout_s", e.timeout_s);
      e.max_retries = it->value("max_retries", e.max_retries);
      e.parallelism = it->value("parallelism", e.parallelism);
      e.backoff_s = it->value("backoff_s", e.backoff_s);
      if (it->contains("system_prompt") && !(*it)["system_prompt"].is_null()) {
        e.system_prompt = (*it)["system_prompt"].get<std::string>();
      }
    }
    if (auto it = j.find("cache"); it != j.end()) {
      m.cache_path = it->value("path", std::string());
      m.cache_mode = parse_cache_mode(it->value("mode", std::string("replay")));
    }
    if (auto it = j.find("metrics"); it != j.end()) {
      auto& c = m.metrics;
      c.bleu_max_ngram = it->value("bleu_max_ngram", c.bleu_max_ngram);
      c.bleu_smooth_k = it->value("bleu_smooth_k", c.bleu_smooth_k);
      c.chrf_char_order = it->value("chrf_char_order", c.chrf_char_order);
      c.chrf_beta = it->value("chrf_beta", c.chrf_beta);
      c.chrf_remove_whitespace = it->value("chrf_remove_whitespace", c.chrf_remove_whitespace);
      c.f1_charlevel_langs = it->value("f1_charlevel_langs", c.f1_charlevel_langs);
    }
    m.output_dir = j.value("output_dir", m.output_dir);
    if (auto it = j.find("groups"); it != j.end()) {
      m.latin_langs = it->value("latin", std::set<std::string>{});
      m.nonlatin_langs = it->value("nonlatin", std::set<std::string>{});
    }
    m.workers = j.value("workers", m.workers);
  } catch (const json::exception& e) {
    manifest_error(e.what());
  }
  return m;
}

RunManifest RunManifest::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    manifest_error(path.string() + ": " + e.what());
  }
  auto m = from_json(j, path.parent_path());
  m.endpoint.api_key = EndpointConfig::api_key_from_env();
  return m;
}

std::string RunManifest::hash() const { return sha256_hex(to_json().dump()); }

// ---------------------------------------------------------------------------
// Analyses

std::optional<double> relative_gain(double score, double baseline) {
  if (!(baseline > 0.0)) return std::nullopt;
  return (score - baseline) / baseline;
}

double overlap_at_k(const std::vector<RetrievalResult>& a, const std::vector<RetrievalResult>& b,
                    std::size_t k) {
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "overlap_at_k needs k > 0");
  if (a.size() != b.size()) {
    throw Error(ErrorCode::QueryMismatch,
                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + " queries");
  }
  if (a.empty()) throw Error(ErrorCode::QueryMismatch, "no queries to compare");
  std::map<std::string, const RetrievalResult*> by_id;
  for (const auto& r : b) {
    if (!by_id.emplace(r.query_id, &r).second) {
      throw Error(ErrorCode::QueryMismatch, "query '" + r.query_id + "' appears twice");
    }
  }
  double sum = 0.0;
  for (const auto& ra : a) {
    auto it = by_id.find(ra.query_id);
    if (it == by_id.end()) throw Error(ErrorCode::QueryMismatch, "query '" + ra.query_id + "' missing");
    std::map<std::size_t, int> counts;
    const auto& sel_b = it->second->selected;
    for (std::size_t i = 0; i < std::min(k, sel_b.size()); ++i) ++counts[sel_b[i].doc];
    std::size_t common = 0;
    for (std::size_t i = 0; i < std::min(k, ra.selected.size()); ++i) {
      auto c = counts.find(ra.selected[i].doc);
      if (c != counts.end() && c->second > 0) {
        --c->second;
        ++common;
      }
    }
    sum += static_cast<double>(common) / static_cast<double>(k);
  }
  return 100.0 * sum / static_cast<double>(a.size());
}

namespace {

template <typename T>
void push_unique(std::vector<T>& v, const T& x) {
  if (std::find(v.begin(), v.end(), x) == v.end()) v.push_back(x);
}

std::optional<double> group_mean(const EvalReport& report, const std::string& task, const std::string& strategy,
                                 const std::set<std::string>& langs) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& row : report.scores) {
    if (row.task == task && row.strategy == strategy && langs.contains(row.lang)) {
      sum += row.value;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

std::optional<double> percent(std::optional<double> v) {
  if (!v) return v;
  return *v * 100.0;
}

}  // namespace

GapTable gap_report(const EvalReport& report, const std::set<std::string>& latin_langs,
                    const std::set<std::string>& nonlatin_langs, const std::string& baseline) {
  if (latin_langs.empty() || nonlatin_langs.empty()) {
    throw Error(ErrorCode::MissingGroup, "both language groups must be non-empty");
  }
  std::vector<std::string> tasks;
  std::vector<std::string> strategies;
  std::map<std::string, std::string> metric_of;
  for (const auto& row : report.scores) {
    push_unique(tasks, row.task);
    push_unique(strategies, row.strategy);
    metric_of.emplace(row.task, to_string(row.metric));
  }
  GapTable table;
  table.baseline = baseline;
  table.latin_langs = latin_langs;
  table.nonlatin_langs = nonlatin_langs;
  double rel_sum = 0.0;
  std::size_t rel_n = 0;
  for (const auto& task : tasks) {
    const auto base_latin = group_mean(report, task, baseline, latin_langs);
    const auto base_nonlatin = group_mean(report, task, baseline, nonlatin_langs);
    bool any = false;
    for (const auto& strategy : strategies) {
      const auto lm = group_mean(report, task, strategy, latin_langs);
      const auto nm = group_mean(report, task, strategy, nonlatin_langs);
      if (!lm && !nm) continue;
      if (!lm || !nm) {
        throw Error(ErrorCode::MissingGroup, "task " + task + ", strategy " + strategy + " has no " +
                                                 (lm ? "non-Latin" : "Latin") + " scores");
      }
      any = true;
      GapRow row;
      row.task = task;
      row.metric = metric_of[task];
      row.strategy = strategy;
      row.latin_mean = *lm;
      row.nonlatin_mean = *nm;
      row.abs_gap = *lm - *nm;
      if (*lm != 0.0) row.rel_gap = row.abs_gap / *lm;
      if (base_latin) row.latin_gain = percent(relative_gain(*lm, *base_latin));
      if (base_nonlatin) row.nonlatin_gain = percent(relative_gain(*nm, *base_nonlatin));
      if (strategy == baseline && row.rel_gap) {
        rel_sum += *row.rel_gap;
        ++rel_n;
      }
      table.rows.push_back(std::move(row));
    }
    if (!any) throw Error(ErrorCode::MissingGroup, "task " + task + " has no scores in either group");
  }
  if (rel_n > 0) table.macro_rel_gap = rel_sum / static_cast<double>(rel_n);
  return table;
}

std::size_t audit_report(const EvalReport& report) {
  if (!report.gap) return 0;
  std::size_t checked = 0;
  auto check = [&](std::optional<double> got, std::optional<double> want, const std::string& what) {
    if (got.has_value() != want.has_value() || (got && std::abs(*got - *want) > 1e-9)) {
      throw Error(ErrorCode::InvalidArgument, "audit failed for " + what);
    }
    if (got) ++checked;
  };
  // Independent recomputation straight from the score rows.
  auto mean = [&](const std::string& task, const std::string& strategy, const std::set<std::string>& langs) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : report.scores) {
      if (r.task != task || r.strategy != strategy || !langs.contains(r.lang)) continue;
      sum += r.value;
      ++n;
    }
    return n ? std::optional<double>(sum / n) : std::nullopt;
  };
  const auto& latin = report.gap->latin_langs;
  const auto& nonlatin = report.gap->nonlatin_langs;
  for (const auto& row : report.gap->rows) {
    const std::string label = row.task + "/" + row.strategy;
    const auto lm = mean(row.task, row.strategy, latin);
    const auto nm = mean(row.task, row.strategy, nonlatin);
    check(row.latin_mean, lm, label + " latin mean");
    check(row.nonlatin_mean, nm, label + " non-Latin mean");
    check(row.abs_gap, *lm - *nm, label + " gap");
    const auto bl = mean(row.task, report.gap->baseline, latin);
    const auto bn = mean(row.task, report.gap->baseline, nonlatin);
    auto gain = [](std::optional<double> s, std::optional<double> b) -> std::optional<double> {
      if (!s || !b || !(*b > 0.0)) return std::nullopt;
      return (*s - *b) / *b * 100.0;
    };
    check(row.latin_gain, gain(lm, bl), label + " Latin gain");
    check(row.nonlatin_gain, gain(nm, bn), label + " non-Latin gain");
  }
  return checked;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

ordered_json opt(std::optional<double> v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

std::optional<double> opt_of(const json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

ordered_json selected_json(const std::vector<Selected>& sel, const std::vector<std::string>& pool_ids) {
  ordered_json arr = ordered_json::array();
  for (const auto& s : sel) {
    arr.push_back({{"id", s.doc < pool_ids.size() ? pool_ids[s.doc] : std::string()},
                   {"doc", s.doc},
                   {"score", s.score}});
  }
  return arr;
}

}  // namespace

ordered_json retrieval_json(const RetrievalResult& r, const std::vector<std::string>& pool_ids) {
  ordered_json j;
  j["query_id"] = r.query_id;
  j["strategy"] = r.strategy.to_string();
  j["selected"] = selected_json(r.selected, pool_ids);
  ordered_json per = ordered_json::object();
  for (const auto& [ch, sel] : r.per_channel) per[to_string(ch)] = selected_json(sel, pool_ids);
  j["per_channel"] = std::move(per);
  return j;
}

std::vector<RetrievalResult> parse_retrievals(std::string_view jsonl, const std::string& strategy,
                                              const std::string& task, const std::string& lang) {
  std::vector<RetrievalResult> out;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      const std::string s = j.at("strategy").get<std::string>();
      if (!strategy.empty() && s != strategy) continue;
      if (!task.empty() && j.value("task", std::string()) != task) continue;
      if (!lang.empty() && j.value("lang", std::string()) != lang) continue;
      RetrievalResult r;
      r.query_id = j.at("query_id").get<std::string>();
      r.strategy = StrategyId::parse(s);
      for (const auto& e : j.at("selected")) {
        r.selected.push_back({e.at("doc").get<std::size_t>(), e.at("score").get<double>()});
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::IoError, "retrievals line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

ordered_json report_json(const EvalReport& report) {
  ordered_json j;
  j["format"] = "phonicl-report";
  j["version"] = kReportVersion;
  j["manifest_hash"] = report.manifest_hash;
  j["config"] = report.config;
  j["notes"] = {{"shot_order", "descending aggregated score, best first"},
                {"failed_completions", "scored as empty output and counted in failures"},
                {"gap_aggregation", "macro average over tasks of the baseline's relative gap"},
                {"gains", "percent over the baseline within each language group"}};
  ordered_json scores = ordered_json::array();
  for (const auto& r : report.scores) {
    scores.push_back({{"task", r.task},
                      {"lang", r.lang},
                      {"strategy", r.strategy},
                      {"metric", to_string(r.metric)},
                      {"value", r.value},
                      {"n", r.n},
                      {"failures", r.failures}});
  }
  j["scores"] = std::move(scores);
  ordered_json overlaps = ordered_json::array();
  for (const auto& o : report.overlaps) {
    overlaps.push_back(
        {{"task", o.task}, {"lang", o.lang}, {"a", o.a}, {"b", o.b}, {"k", o.k}, {"percent", o.percent}});
  }
  j["overlaps"] = std::move(overlaps);
  if (report.gap) {
    ordered_json rows = ordered_json::array();
    for (const auto& r : report.gap->rows) {
      rows.push_back({{"task", r.task},
                      {"metric", r.metric},
                      {"strategy", r.strategy},
                      {"latin_mean", r.latin_mean},
                      {"nonlatin_mean", r.nonlatin_mean},
                      {"abs_gap", r.abs_gap},
                      {"rel_gap", opt(r.rel_gap)},
                      {"latin_gain_pct", opt(r.latin_gain)},
                      {"nonlatin_gain_pct", opt(r.nonlatin_gain)}});
    }
    j["gap"] = {{"baseline", report.gap->baseline},
                {"latin", report.gap->latin_langs},
                {"nonlatin", report.gap->nonlatin_langs},
                {"rows", std::move(rows)},
                {"macro_rel_gap", opt(report.gap->macro_rel_gap)}};
  } else {
    j["gap"] = nullptr;
  }
  j["audit"] = {{"checked", report.audited}, {"tolerance", 1e-9}};
  return j;
}

EvalReport parse_report(const json& j) {
  EvalReport r;
  try {
    r.manifest_hash = j.value("manifest_hash", std::string());
    if (j.contains("config")) r.config = ordered_json::parse(j["config"].dump());
    for (const auto& s : j.at("scores")) {
      r.scores.push_back({s.at("task").get<std::string>(), s.at("lang").get<std::string>(),
                          s.at("strategy").get<std::string>(), parse_metric(s.at("metric").get<std::string>()),
                          s.at("value").get<double>(), s.value("n", std::size_t{0}),
                          s.value("failures", std::size_t{0})});
    }
    if (j.contains("overlaps")) {
      for (const auto& o : j["overlaps"]) {
        r.overlaps.push_back({o.at("task").get<std::string>(), o.at("lang").get<std::string>(),
                              o.at("a").get<std::string>(), o.at("b").get<std::string>(),
                              o.at("k").get<std::size_t>(), o.at("percent").get<double>()});
      }
    }
    if (j.contains("gap") && !j["gap"].is_null()) {
      GapTable g;
      g.baseline = j["gap"].value("baseline", std::string("random"));
      g.latin_langs = j["gap"].value("latin", std::set<std::string>{});
      g.nonlatin_langs = j["gap"].value("nonlatin", std::set<std::string>{});
      g.macro_rel_gap = opt_of(j["gap"], "macro_rel_gap");
      for (const auto& row : j["gap"].at("rows")) {
        g.rows.push_back({row.at("task").get<std::string>(), row.at("metric").get<std::string>(),
                          row.at("strategy").get<std::string>(), row.at("latin_mean").get<double>(),
                          row.at("nonlatin_mean").get<double>(), row.at("abs_gap").get<double>(),
                          opt_of(row, "rel_gap"), opt_of(row, "latin_gain_pct"),
                          opt_of(row, "nonlatin_gain_pct")});
      }
      r.gap = std::move(g);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoError, std::string("report: ") + e.what());
  }
  return r;
}

namespace {

std::string fixed(double v, int digits = 2) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s + " " : s + std::string(width - s.size(), ' ');
}

std::string signed_pct(std::optional<double> v) {
  if (!v) return "n/a";
  return (*v >= 0 ? "+" : "") + fixed(*v) + "%";
}

}  // namespace

std::string report_text(const EvalReport& report) {
  std::vector<std::string> strategies;
  std::vector<std::pair<std::string, std::string>> rows;
  std::map<std::tuple<std::string, std::string, std::string>, double> value;
  std::map<std::string, std::string> metric_of;
  for (const auto& r : report.scores) {
    push_unique(strategies, r.strategy);
    push_unique(rows, std::make_pair(r.task, r.lang));
    value[{r.task, r.lang, r.strategy}] = r.value;
    metric_of[r.task] = to_string(r.metric);
  }
  std::size_t col = 10;
  for (const auto& s : strategies) col = std::max(col, s.size() + 2);

  std::ostringstream out;
  out << "manifest " << report.manifest_hash << "\n\n";
  out << pad("task", 12) << pad("metric", 8) << pad("lang", 10);
  for (const auto& s : strategies) out << pad(s, col);
  out << "\n";
  for (const auto& [task, lang] : rows) {
    out << pad(task, 12) << pad(metric_of[task], 8) << pad(lang, 10);
    for (const auto& s : strategies) {
      auto it = value.find({task, lang, s});
      out << pad(it == value.end() ? "-" : fixed(it->second), col);
    }
    out << "\n";
  }
  if (report.gap) {
    out << "\n" << pad("task", 12) << pad("strategy", col) << pad("latin", 10) << pad("non-latin", 11)
        << pad("gap", 9) << pad("gain(L)", 10) << "gain(NL)\n";
    for (const auto& r : report.gap->rows) {
      out << pad(r.task, 12) << pad(r.strategy, col) << pad(fixed(r.latin_mean), 10)
          << pad(fixed(r.nonlatin_mean), 11) << pad(fixed(r.abs_gap), 9) << pad(signed_pct(r.latin_gain), 10)
          << signed_pct(r.nonlatin_gain) << "\n";
    }
    if (report.gap->macro_rel_gap) {
      out << "macro relative gap (" << report.gap->baseline << "): " << fixed(*report.gap->macro_rel_gap * 100.0)
          << "%\n";
    }
  }
  if (!report.overlaps.empty()) {
    out << "\n" << pad("task", 12) << pad("lang", 10) << pad("pair", 2 * col) << "overlap@k\n";
    for (const auto& o : report.overlaps) {
      out << pad(o.task, 12) << pad(o.lang, 10) << pad(o.a + " vs " + o.b, 2 * col) << fixed(o.percent)
          << "% @" << o.k << "\n";
    }
  }
  return out.str();
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "task,lang,strategy,metric,value,n,failures\n";
  for (const auto& r : report.scores) {
    out << r.task << ',' << r.lang << ',' << r.strategy << ',' << to_string(r.metric) << ','
        << fixed(r.value, 6) << ',' << r.n << ',' << r.failures << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

template <typename F>
auto in_stage(Stage stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(to_string(stage), e.code(), e.what());
  } catch (const std::exception& e) {
    throw StageError(to_string(stage), ErrorCode::IoError, e.what());
  }
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << content;
}

class JsonlSink {
 public:
  explicit JsonlSink(const std::filesystem::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  }
  void write(const ordered_json& j) {
    out_ << j.dump() << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

ordered_json tagged(const DatasetSpec& d, const std::string& strategy) {
  ordered_json j;
  j["task"] = d.task.name;
  j["lang"] = d.lang;
  j["strategy"] = strategy;
  return j;
}

struct Prepared {
  CorpusSplit split;
};

Prepared prepare(const RunManifest& m, const DatasetSpec& d, const std::filesystem::path& out_dir) {
  const auto path = m.resolve(d.path);
  const auto format = d.format.value_or(format_from_path(path));
  auto examples = load_dataset(path, format, {d.lang});

  std::optional<g2p::G2pProfile> ipa;
  std::optional<g2p::G2pProfile> roman;
  for (auto& ex : examples) {
    if (ex.ipa_text.empty() && !m.ipa_profiles.empty()) {
      if (!ipa) ipa = g2p::load_profile(m.resolve(m.ipa_profiles), d.lang);
      ex.ipa_text = g2p::transliterate(*ipa, ex.script_text);
    }
    if (!ex.roman_text && !m.roman_profiles.empty()) {
      if (!roman) roman = g2p::load_profile(m.resolve(m.roman_profiles), d.lang);
      ex.roman_text = g2p::transliterate(*roman, ex.script_text);
    }
  }
  const std::string stem = d.task.name + "." + d.lang;
  write_file(out_dir / "prepared" / (stem + ".jsonl"), to_jsonl(examples));
  Prepared p;
  p.split = make_split(examples, m.test_size, m.pool_size, derive_seed(m.seed, "split/" + d.task.name + "/" + d.lang), m.filter);
  write_file(out_dir / "splits" / (stem + ".json"), split_manifest_json(p.split));
  return p;
}

double score_outputs(MetricKind metric, const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                     const MetricConfig& cfg, const std::string& lang) {
  switch (metric) {
    case MetricKind::Bleu: return corpus_bleu(hyps, refs, cfg, lang);
    case MetricKind::Chrf: return corpus_chrf(hyps, refs, cfg);
    case MetricKind::F1: return 100.0 * mean_answer_f1(hyps, refs, lang, cfg);
  }
  return 0.0;
}

}  // namespace

EvalReport run_experiment(const RunManifest& manifest, const RunOptions& options) {
  in_stage(Stage::Prepare, [&] { manifest.validate(); });
  const auto out_dir = manifest.resolve(manifest.output_dir);
  std::filesystem::create_directories(out_dir);

  EvalReport report;
  report.config = manifest.to_json();
  report.manifest_hash = manifest.hash();

  const auto until = options.until;
  auto reached = [&](Stage s) { return static_cast<int>(s) <= static_cast<int>(until); };

  std::optional<JsonlSink> retrievals;
  std::optional<JsonlSink> prompts_out;
  std::optional<JsonlSink> completions_out;
  if (reached(Stage::Retrieve)) retrievals.emplace(out_dir / "retrievals.jsonl");
  if (reached(Stage::Prompt)) prompts_out.emplace(out_dir / "prompts.jsonl");
  if (reached(Stage::Complete)) completions_out.emplace(out_dir / "completions.jsonl");

  std::vector<Channel> channels;
  for (const auto& s : manifest.strategies) {
    for (auto c : s.required_channels()) push_unique(channels, c);
  }
  std::sort(channels.begin(), channels.end());

  std::optional<Tokenizer> tokenizer;
  std::optional<TemplateSet> templates;
  std::unique_ptr<ReplayCache> cache;
  std::optional<LlmClient> client;
  std::map<std::string, std::unique_ptr<DenseStore>> dense_stores;

  for (const auto& d : manifest.datasets) {
    const std::string stem = d.task.name + "." + d.lang;
    const Prepared prepared = in_stage(Stage::Prepare, [&] { return prepare(manifest, d, out_dir); });
    const auto& pool = prepared.split.pool;
    const auto& test = prepared.split.test;
    if (!reached(Stage::Index)) continue;

    std::vector<std::string> pool_ids;
    for (const auto& ex : pool) pool_ids.push_back(ex.id);
    const Retriever retriever = in_stage(Stage::Index, [&] {
      if (!tokenizer) {
        tokenizer = Tokenizer::from_spec(manifest.tokenizer_kind, manifest.tokenizer_path.empty()
                                                                      ? std::filesystem::path()
                                                                      : manifest.resolve(manifest.tokenizer_path));
      }
      std::map<Channel, Bm25Index> indexes;
      for (auto c : channels) {
        auto index = build_index(pool, c, *tokenizer);
        save_index(out_dir / "indexes" / (stem + "." + to_string(c) + ".json"), index);
        indexes.emplace(c, std::move(index));
      }
      return Retriever(pool_ids, std::move(indexes), *tokenizer, manifest.bm25, nullptr, manifest.retrieve);
    });
    if (!reached(Stage::Retrieve)) continue;

    std::vector<std::vector<RetrievalResult>> results;
    in_stage(Stage::Retrieve, [&] {
      for (const auto& s : manifest.strategies) {
        if (s.kind == StrategyId::Kind::Dense) {
          auto& store = dense_stores[s.vectors_path];
          if (!store) store = std::make_unique<DenseStore>(DenseStore::load(manifest.resolve(s.vectors_path)));
          const Retriever dense(pool_ids, {}, retriever.tokenizer(), manifest.bm25, store.get(), manifest.retrieve);
          results.push_back(dense.retrieve_batch(test, s, manifest.k, manifest.workers));
        } else {
          results.push_back(retriever.retrieve_batch(test, s, manifest.k, manifest.workers));
        }
        for (const auto& r : results.back()) {
          auto line = tagged(d, s.to_string());
          const auto fields = retrieval_json(r, pool_ids);
          for (const auto& [key, value] : fields.items()) {
            if (key != "strategy") line[key] = value;
          }
          retrievals->write(line);
        }
      }
      for (std::size_t a = 0; a < results.size(); ++a) {
        for (std::size_t b = a + 1; b < results.size(); ++b) {
          report.overlaps.push_back({d.task.name, d.lang, manifest.strategies[a].to_string(),
                                     manifest.strategies[b].to_string(), manifest.k,
                                     overlap_at_k(results[a], results[b], manifest.k)});
        }
      }
    });
    if (!reached(Stage::Prompt)) continue;

    std::vector<std::vector<std::string>> prompts(manifest.strategies.size());
    in_stage(Stage::Prompt, [&] {
      if (!templates) {
        templates = manifest.templates_path.empty() ? default_templates()
                                                    : load_templates(manifest.resolve(manifest.templates_path));
      }
      const auto& tpl = template_for(*templates, d.task);
      PromptConfig config = manifest.prompt;
      config.k_shots = manifest.k;
      for (std::size_t s = 0; s < manifest.strategies.size(); ++s) {
        for (std::size_t q = 0; q < test.size(); ++q) {
          std::vector<Example> shots;
          for (const auto& sel : results[s][q].selected) shots.push_back(pool[sel.doc]);
          prompts[s].push_back(render_prompt(tpl, config, shots, test[q]));
          auto line = tagged(d, manifest.strategies[s].to_string());
          line["query_id"] = test[q].id;
          line["fingerprint"] = request_fingerprint(manifest.endpoint, prompts[s].back());
          line["prompt"] = prompts[s].back();
          prompts_out->write(line);
        }
      }
    });
    if (!reached(Stage::Complete)) continue;

    std::vector<std::vector<CompletionResult>> completions;
    in_stage(Stage::Complete, [&] {
      if (!client) {
        cache = std::make_unique<ReplayCache>(
            manifest.cache_mode,
            manifest.cache_path.empty() ? std::filesystem::path() : manifest.resolve(manifest.cache_path));
        client.emplace(manifest.endpoint, options.transport);
      }
      for (std::size_t s = 0; s < manifest.strategies.size(); ++s) {
        completions.push_back(client->complete_batch(prompts[s], *cache));
        for (std::size_t q = 0; q < test.size(); ++q) {
          const auto& c = completions.back()[q];
          auto line = tagged(d, manifest.strategies[s].to_string());
          line["query_id"] = test[q].id;
          line["response"] = c.text ? ordered_json(*c.text) : ordered_json(nullptr);
          line["error"] = c.error ? ordered_json(std::string(to_string(*c.error)) + ": " + c.message)
                                  : ordered_json(nullptr);
          completions_out->write(line);
        }
      }
    });
    if (!reached(Stage::Score)) continue;

    in_stage(Stage::Score, [&] {
      std::vector<std::string> refs;
      for (const auto& ex : test) refs.push_back(ex.target_text);
      const MetricKind metric = d.metric.value_or(default_metric(d.task));
      for (std::size_t s = 0; s < manifest.strategies.size(); ++s) {
        std::vector<std::string> hyps;
        std::size_t failures = 0;
        for (const auto& c : completions[s]) {
          hyps.push_back(c.text.value_or(""));
          if (!c.ok()) ++failures;
        }
        report.scores.push_back({d.task.name, d.lang, manifest.strategies[s].to_string(), metric,
                                 score_outputs(metric, hyps, refs, manifest.metrics, d.lang), test.size(),
                                 failures});
      }
    });
  }

  if (!reached(Stage::Score)) return report;
  in_stage(Stage::Score, [&] {
    if (!manifest.latin_langs.empty() && !manifest.nonlatin_langs.empty()) {
      auto baseline = std::find_if(manifest.strategies.begin(), manifest.strategies.end(),
                                   [](const StrategyId& s) { return s.kind == StrategyId::Kind::Random; });
      if (baseline == manifest.strategies.end()) baseline = manifest.strategies.begin();
      report.gap = gap_report(report, manifest.latin_langs, manifest.nonlatin_langs, baseline->to_string());
      report.audited = audit_report(report);
    }
    write_file(out_dir / "report.json", report_json(report).dump(2) + "\n");
    write_file(out_dir / "report.txt", report_text(report));
  });
  return report;
}

}  // namespace phonicl
