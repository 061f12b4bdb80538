#pragma once

// Corpus BLEU, corpus chrF and SQuAD-style answer F1.
//
// BLEU tokenization pads every Unicode punctuation or symbol character with
// spaces (a punctuation mark between two digits stays attached, so "3.5" is
// one token), then splits on whitespace. Languages in f1_charlevel_langs use
// one token per non-space character for both BLEU and F1.
//
// Orders with no hypothesis n-grams in the whole corpus are left out of the
// geometric mean (BLEU) or the order average (chrF), so a one-word corpus
// can still reach 100.

#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace phonicl {

struct MetricConfig {
  int bleu_max_ngram = 4;
  /// Add-k smoothing of zero-match orders; 0 disables smoothing.
  double bleu_smooth_k = 0.0;
  int chrf_char_order = 6;
  double chrf_beta = 2.0;
  bool chrf_remove_whitespace = true;
  std::set<std::string> f1_charlevel_langs{"zho", "jpn"};

  void validate() const;
  /// True when `lang` (an ISO code, optionally with a "_Script" suffix) is
  /// scored on characters.
  bool charlevel(std::string_view lang) const;
  friend bool operator==(const MetricConfig&, const MetricConfig&) = default;
};

std::vector<std::string> bleu_tokenize(std::string_view text, bool charlevel);

/// Percent in [0, 100]. Throws Error(LengthMismatch) when the lists differ in
/// size or are empty.
double corpus_bleu(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   const MetricConfig& cfg = {}, std::string_view lang = {});

double corpus_chrf(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                   const MetricConfig& cfg = {});

/// Lowercased, punctuation stripped; whitespace words or characters.
std::vector<std::string> f1_tokens(std::string_view text, bool charlevel);

/// In [0, 1]. An "unanswerable" on either side is scored by exact match.
double answer_f1(std::string_view pred, std::string_view gold, std::string_view lang = {},
                 const MetricConfig& cfg = {});

/// Mean answer_f1 over pairs.
double mean_answer_f1(const std::vector<std::string>& preds, const std::vector<std::string>& golds,
                      std::string_view lang = {}, const MetricConfig& cfg = {});

}  // namespace phonicl
