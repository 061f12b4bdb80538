// phonicl command line.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "phonicl/error.hpp"
#include "phonicl/g2p.hpp"
#include "phonicl/harness.hpp"
#include "phonicl/metrics.hpp"
#include "phonicl/promptkit.hpp"

namespace {

using namespace phonicl;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::set<std::string> split_list(const std::string& s) {
  std::set<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.insert(item);
  }
  return out;
}

struct Overrides {
  std::string manifest;
  std::string output_dir;
  std::string tok_kind;
  std::string tokenizer;
  std::string cache_mode;
  std::string cache;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

RunManifest load_manifest(const Overrides& o) {
  if (o.manifest.empty()) throw Error(ErrorCode::InvalidArgument, "--manifest is required");
  RunManifest m = RunManifest::load(o.manifest);
  if (!o.output_dir.empty()) m.output_dir = std::filesystem::absolute(o.output_dir).string();
  if (!o.tok_kind.empty()) m.tokenizer_kind = o.tok_kind;
  if (!o.tokenizer.empty()) m.tokenizer_path = std::filesystem::absolute(o.tokenizer).string();
  if (!o.cache_mode.empty()) m.cache_mode = parse_cache_mode(o.cache_mode);
  if (!o.cache.empty()) m.cache_path = std::filesystem::absolute(o.cache).string();
  if (o.seed) m.seed = *o.seed;
  if (o.workers) m.workers = *o.workers;
  return m;
}

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--output-dir", o.output_dir, "Override the manifest's output directory");
  cmd->add_option("--tok-kind", o.tok_kind, "Tokenizer kind: ws, cs or bpe");
  cmd->add_option("--tokenizer", o.tokenizer, "tokenizer.json for the bpe kind");
  cmd->add_option("--cache-mode", o.cache_mode, "record, replay or passthrough");
  cmd->add_option("--cache", o.cache, "Replay cache file");
  cmd->add_option("--seed", o.seed, "Override the manifest seed");
  cmd->add_option("--workers", o.workers, "Retrieval worker threads");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Phoneme-augmented few-shot retrieval experiments"};
  app.require_subcommand(1);
  app.fallthrough();
  Overrides o;
  app.add_option("--manifest", o.manifest, "Run manifest (JSON)");

  auto* prepare = app.add_subcommand("prepare", "Transliterate datasets and write splits");
  auto* index = app.add_subcommand("index", "Prepare, then build BM25 index snapshots");
  auto* retrieve = app.add_subcommand("retrieve", "Prepare, index and write retrievals.jsonl");
  auto* run = app.add_subcommand("run", "Full pipeline through scoring");
  std::string until = "score";
  bool csv = false;
  run->add_option("--until", until, "Last stage: prepare, index, retrieve, prompt, complete, score");
  run->add_flag("--csv", csv, "Print scores as CSV instead of a table");
  for (auto* cmd : {prepare, index, retrieve, run}) add_overrides(cmd, o);

  auto* translit = app.add_subcommand("transliterate", "Transliterate text with a G2P profile");
  std::string profiles;
  std::string lang;
  std::string text;
  std::string input;
  translit->add_option("--profiles", profiles, "Profile directory")->required();
  translit->add_option("--lang", lang, "Language code")->required();
  translit->add_option("--text", text, "Text to transliterate");
  translit->add_option("--input", input, "File to transliterate line by line");

  auto* evaluate = app.add_subcommand("evaluate", "Score hypotheses against references");
  std::string metric = "chrf";
  std::string hyps_path;
  std::string refs_path;
  std::string eval_lang;
  evaluate->add_option("--metric", metric, "bleu, chrf or f1");
  evaluate->add_option("--hyps", hyps_path, "One hypothesis per line")->required();
  evaluate->add_option("--refs", refs_path, "One reference per line")->required();
  evaluate->add_option("--lang", eval_lang, "ISO language code");

  auto* analyze = app.add_subcommand("analyze", "Gap report or retrieval overlap");
  std::string report_path;
  std::string latin;
  std::string nonlatin;
  std::string baseline;
  std::string retrievals_path;
  std::string strat_a;
  std::string strat_b;
  std::size_t k = 3;
  std::string filter_task;
  std::string filter_lang;
  analyze->add_option("--task", filter_task, "Restrict the overlap to one task");
  analyze->add_option("--lang", filter_lang, "Restrict the overlap to one language");
  analyze->add_option("--report", report_path, "report.json for a gap report");
  analyze->add_option("--latin", latin, "Comma-separated Latin-script languages");
  analyze->add_option("--nonlatin", nonlatin, "Comma-separated non-Latin-script languages");
  analyze->add_option("--baseline", baseline, "Baseline strategy label");
  analyze->add_option("--retrievals", retrievals_path, "retrievals.jsonl for an overlap");
  analyze->add_option("--a", strat_a, "First strategy label");
  analyze->add_option("--b", strat_b, "Second strategy label");
  analyze->add_option("--k", k, "Cut-off for the overlap");

  auto* dump = app.add_subcommand("dump-templates", "Print the built-in prompt templates");

  CLI11_PARSE(app, argc, argv);

  try {
    if (prepare->parsed() || index->parsed() || retrieve->parsed() || run->parsed()) {
      const RunManifest m = load_manifest(o);
      RunOptions opts;
      opts.until = prepare->parsed()    ? Stage::Prepare
                   : index->parsed()    ? Stage::Index
                   : retrieve->parsed() ? Stage::Retrieve
                                        : parse_stage(until);
      const EvalReport report = run_experiment(m, opts);
      if (opts.until == Stage::Score) {
        std::cout << (csv ? report_csv(report) : report_text(report));
        std::size_t failures = 0;
        for (const auto& r : report.scores) failures += r.failures;
        if (failures > 0) std::cerr << "warning: " << failures << " completions failed; see completions.jsonl\n";
      } else {
        std::cout << "stopped after " << to_string(opts.until) << "; artifacts in "
                  << m.resolve(m.output_dir).string() << "\n";
      }
    } else if (translit->parsed()) {
      const auto profile = g2p::load_profile(profiles, lang);
      if (!input.empty()) {
        for (const auto& line : read_lines(input)) std::cout << g2p::transliterate(profile, line) << "\n";
      } else {
        std::cout << g2p::transliterate(profile, text) << "\n";
      }
    } else if (evaluate->parsed()) {
      const auto hyps = read_lines(hyps_path);
      const auto refs = read_lines(refs_path);
      const MetricConfig cfg;
      double value = 0.0;
      switch (parse_metric(metric)) {
        case MetricKind::Bleu: value = corpus_bleu(hyps, refs, cfg, eval_lang); break;
        case MetricKind::Chrf: value = corpus_chrf(hyps, refs, cfg); break;
        case MetricKind::F1: value = 100.0 * mean_answer_f1(hyps, refs, eval_lang, cfg); break;
      }
      std::cout << std::fixed << std::setprecision(4) << value << "\n";
    } else if (analyze->parsed()) {
      if (!report_path.empty()) {
        EvalReport report = parse_report(nlohmann::json::parse(read_file(report_path)));
        auto l = split_list(latin);
        auto n = split_list(nonlatin);
        if (l.empty() && report.gap) l = report.gap->latin_langs;
        if (n.empty() && report.gap) n = report.gap->nonlatin_langs;
        std::string base = baseline;
        if (base.empty()) base = report.gap ? report.gap->baseline : std::string("random");
        report.gap = gap_report(report, l, n, base);
        report.audited = audit_report(report);
        report.overlaps.clear();
        std::cout << report_text(report);
      } else if (!retrievals_path.empty()) {
        const std::string content = read_file(retrievals_path);
        const auto a = parse_retrievals(content, strat_a, filter_task, filter_lang);
        const auto b = parse_retrievals(content, strat_b, filter_task, filter_lang);
        std::cout << std::fixed << std::setprecision(2) << overlap_at_k(a, b, k) << "\n";
      } else {
        throw Error(ErrorCode::InvalidArgument, "analyze needs --report or --retrievals");
      }
    } else if (dump->parsed()) {
      std::cout << default_templates_text();
    }
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
