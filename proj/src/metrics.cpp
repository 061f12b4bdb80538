#include "phonicl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "phonicl/error.hpp"
#include "phonicl/unicode.hpp"

namespace phonicl {

namespace {

namespace uni = unicode;

void check_lengths(std::size_t a, std::size_t b) {
  if (a != b) {
    throw Error(ErrorCode::LengthMismatch,
                std::to_string(a) + " hypotheses vs " + std::to_string(b) + " references");
  }
  if (a == 0) throw Error(ErrorCode::LengthMismatch, "empty corpus");
}

std::vector<std::string> char_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t start = pos;
    const char32_t cp = uni::decode_at(text, pos);
    if (!uni::is_whitespace(cp)) out.emplace_back(text.substr(start, pos - start));
  }
  return out;
}

using NgramCounts = std::unordered_map<std::string, int>;

// n-grams over tokens joined with a separator that cannot occur inside a token.
NgramCounts ngrams(const std::vector<std::string>& tokens, int n) {
  NgramCounts counts;
  const auto un = static_cast<std::size_t>(n);
  if (tokens.size() < un) return counts;
  for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (std::size_t j = 1; j < un; ++j) {
      key.push_back(' ');
      key += tokens[i + j];
    }
    ++counts[key];
  }
  return counts;
}

// Clipped matches and hypothesis total for one order.
std::pair<long, long> overlap(const NgramCounts& hyp, const NgramCounts& ref) {
  long match = 0;
  long total = 0;
  for (const auto& [gram, c] : hyp) {
    total += c;
    auto it = ref.find(gram);
    if (it != ref.end()) match += std::min(c, it->second);
  }
  return {match, total};
}

std::string strip_whitespace(std::string_view text) {
  std::string out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::size_t start = pos;
    const char32_t cp = uni::decode_at(text, pos);
    if (!uni::is_whitespace(cp)) out.append(text.substr(start, pos - start));
  }
  return out;
}

}  // namespace

void MetricConfig::validate() const {
  if (bleu_max_ngram < 1) throw Error(ErrorCode::InvalidArgument, "bleu_max_ngram must be >= 1");
  if (chrf_char_order < 1) throw Error(ErrorCode::InvalidArgument, "chrf_char_order must be >= 1");
  if (!(chrf_beta > 0.0)) throw Error(ErrorCode::InvalidArgument, "chrf_beta must be > 0");
  if (!(bleu_smooth_k >= 0.0)) throw Error(ErrorCode::InvalidArgument, "bleu_smooth_k must be >= 0");
}

bool MetricConfig::charlevel(std::string_view lang) const {
  const auto cut = lang.find_first_of("_-");
  return f1_charlevel_langs.contains(std::string(lang.substr(0, cut)));
}

std::vector<std::string> bleu_tokenize(std::string_view text, bool charlevel) {
  if (charlevel) return char_tokens(text);
  const std::u32string cps = uni::to_u32(text);
  std::string padded;
  padded.reserve(text.size() + 16);
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const char32_t cp = cps[i];
    bool split = uni::is_symbol(cp);
    if (!split && uni::is_punctuation(cp)) {
      const bool digit_before = i > 0 && uni::is_number(cps[i - 1]);
      const bool digit_after = i + 1 < cps.size() && uni::is_number(cps[i + 1]);
      split = !(digit_before && digit_after);
    }
    if (split) {
      padded.push_back(' ');
      uni::append_utf8(padded, cp);
      padded.push_back(' ');
    } else {
      uni::append_utf8(padded, cp);
    }
  }
  return uni::split_whitespace(padded);
}

double corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   const MetricConfig& cfg, std::string_view lang) {
  cfg.validate();
  check_lengths(hyps.size(), refs.size());
  const bool chars = cfg.charlevel(lang);
  const auto orders = static_cast<std::size_t>(cfg.bleu_max_ngram);
  std::vector<long> matches(orders, 0);
  std::vector<long> totals(orders, 0);
  long hyp_len = 0;
  long ref_len = 0;
  bool identical = true;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto h = bleu_tokenize(hyps[s], chars);
    const auto r = bleu_tokenize(refs[s], chars);
    identical = identical && h == r;
    hyp_len += static_cast<long>(h.size());
    ref_len += static_cast<long>(r.size());
    for (std::size_t n = 1; n <= orders; ++n) {
      const auto [m, t] = overlap(ngrams(h, static_cast<int>(n)), ngrams(r, static_cast<int>(n)));
      matches[n - 1] += m;
      totals[n - 1] += t;
    }
  }
  if (identical) return 100.0;
  if (hyp_len == 0) return 0.0;

  double log_sum = 0.0;
  int used = 0;
  for (std::size_t n = 0; n < orders; ++n) {
    if (totals[n] == 0) continue;
    double p;
    if (matches[n] > 0) {
      p = static_cast<double>(matches[n]) / static_cast<double>(totals[n]);
    } else if (cfg.bleu_smooth_k > 0.0) {
      p = cfg.bleu_smooth_k / (static_cast<double>(totals[n]) + cfg.bleu_smooth_k);
    } else {
      return 0.0;
    }
    log_sum += std::log(p);
    ++used;
  }
  const double bp =
      hyp_len < ref_len ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len)) : 1.0;
  return 100.0 * bp * std::exp(log_sum / used);
}

double corpus_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   const MetricConfig& cfg) {
  cfg.validate();
  check_lengths(hyps.size(), refs.size());
  const auto orders = static_cast<std::size_t>(cfg.chrf_char_order);
  std::vector<long> matches(orders, 0);
  std::vector<long> hyp_count(orders, 0);
  std::vector<long> ref_count(orders, 0);
  bool identical = true;
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const std::string hs = cfg.chrf_remove_whitespace ? strip_whitespace(hyps[s]) : hyps[s];
    const std::string rs = cfg.chrf_remove_whitespace ? strip_whitespace(refs[s]) : refs[s];
    identical = identical && hs == rs;
    std::vector<std::string> h;
    std::vector<std::string> r;
    for (auto v : uni::scalars(hs)) h.emplace_back(v);
    for (auto v : uni::scalars(rs)) r.emplace_back(v);
    for (std::size_t n = 1; n <= orders; ++n) {
      const auto hg = ngrams(h, static_cast<int>(n));
      const auto rg = ngrams(r, static_cast<int>(n));
      const auto [m, t] = overlap(hg, rg);
      matches[n - 1] += m;
      hyp_count[n - 1] += t;
      long rt = 0;
      for (const auto& [g, c] : rg) rt += c;
      ref_count[n - 1] += rt;
    }
  }
  if (identical) return 100.0;

  const double b2 = cfg.chrf_beta * cfg.chrf_beta;
  double sum = 0.0;
  int used = 0;
  for (std::size_t n = 0; n < orders; ++n) {
    if (hyp_count[n] == 0 || ref_count[n] == 0) continue;
    ++used;
    const double p = static_cast<double>(matches[n]) / static_cast<double>(hyp_count[n]);
    const double r = static_cast<double>(matches[n]) / static_cast<double>(ref_count[n]);
    const double denom = b2 * p + r;
    if (denom > 0.0) sum += (1.0 + b2) * p * r / denom;
  }
  return used == 0 ? 0.0 : 100.0 * sum / used;
}

std::vector<std::string> f1_tokens(std::string_view text, bool charlevel) {
  std::string cleaned;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const char32_t cp = uni::decode_at(text, pos);
    if (uni::is_punctuation(cp)) continue;
    uni::append_utf8(cleaned, uni::to_lower(cp));
  }
  return charlevel ? char_tokens(cleaned) : uni::split_whitespace(cleaned);
}

double answer_f1(std::string_view pred, std::string_view gold, std::string_view lang, const MetricConfig& cfg) {
  const bool chars = cfg.charlevel(lang);
  const auto p = f1_tokens(pred, chars);
  const auto g = f1_tokens(gold, chars);
  static const std::vector<std::string> kUnanswerable{"unanswerable"};
  const auto words_p = f1_tokens(pred, false);
  const auto words_g = f1_tokens(gold, false);
  if (words_p == kUnanswerable || words_g == kUnanswerable) return words_p == words_g ? 1.0 : 0.0;
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;

  std::map<std::string_view, int> gold_counts;
  for (const auto& t : g) ++gold_counts[t];
  int common = 0;
  for (const auto& t : p) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

double mean_answer_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                      std::string_view lang, const MetricConfig& cfg) {
  check_lengths(preds.size(), golds.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += answer_f1(preds[i], golds[i], lang, cfg);
  return sum / static_cast<double>(preds.size());
}

}  // namespace phonicl
