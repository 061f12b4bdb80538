#include <gtest/gtest.h>

#include <cmath>

#include "phonicl/error.hpp"
#include "phonicl/metrics.hpp"
#include "phonicl/rng.hpp"

using namespace phonicl;

namespace {

using Corpus = std::vector<std::string>;

std::string random_sentence(Xoshiro256& rng) {
  static const char* words[] = {"the", "cat", "sat", "on", "a", "mat", "dog", "runs", "fast", "राम", "घर", "।"};
  std::string s;
  for (std::size_t i = 0, n = 1 + rng.below(8); i < n; ++i) {
    if (i) s += ' ';
    s += words[rng.below(12)];
  }
  return s;
}

}  // namespace

TEST(Bleu, Tokenization) {
  EXPECT_EQ(bleu_tokenize("Hello, world!", false), (Corpus{"Hello", ",", "world", "!"}));
  EXPECT_EQ(bleu_tokenize("pi is 3.14, e=2", false), (Corpus{"pi", "is", "3.14", ",", "e", "=", "2"}));
  EXPECT_EQ(bleu_tokenize("राम घर जाता है।", false), (Corpus{"राम", "घर", "जाता", "है", "।"}));
  EXPECT_EQ(bleu_tokenize("我爱 北京", true), (Corpus{"我", "爱", "北", "京"}));
}

TEST(Bleu, IdentityAndZero) {
  const Corpus refs{"the cat sat on the mat .", "a dog"};
  EXPECT_DOUBLE_EQ(corpus_bleu(refs, refs), 100.0);
  EXPECT_DOUBLE_EQ(corpus_bleu({"x y z"}, {"a b c"}), 0.0);
  EXPECT_DOUBLE_EQ(corpus_bleu({"word"}, {"word"}), 100.0);
  EXPECT_DOUBLE_EQ(corpus_bleu({""}, {"a"}), 0.0);
}

TEST(Bleu, ToyCorpusHandEvaluation) {
  // Clipped matches over the corpus: 8/9, 5/7, 3/5, 1/3; c = 9, r = 10.
  const double expected = 100.0 * std::exp(1.0 - 10.0 / 9.0) * std::pow(8.0 / 9 * 5.0 / 7 * 3.0 / 5 * 1.0 / 3, 0.25);
  const double got = corpus_bleu({"the cat sat on the mat", "a dog runs"}, {"the cat sat on a mat", "a dog runs fast"});
  EXPECT_NEAR(got, expected, 1e-6);
  EXPECT_NEAR(got, 53.41740, 1e-4);
}

TEST(Bleu, SmoothingAndCharLevel) {
  MetricConfig cfg;
  EXPECT_DOUBLE_EQ(corpus_bleu({"a b c d"}, {"a b x d"}, cfg), 0.0);
  cfg.bleu_smooth_k = 1.0;
  const double smoothed = corpus_bleu({"a b c d"}, {"a b x d"}, cfg);
  // p = 3/4, 1/3, (0+1)/(2+1), (0+1)/(1+1); no brevity penalty.
  EXPECT_NEAR(smoothed, 100.0 * std::pow(0.75 * (1.0 / 3) * (1.0 / 3) * 0.5, 0.25), 1e-9);
  EXPECT_DOUBLE_EQ(corpus_bleu({"北京"}, {"北京"}, {}, "zho"), 100.0);
  EXPECT_GT(corpus_bleu({"我爱北京天安门"}, {"我爱北京"}, {}, "zho"), 0.0);
}

TEST(Bleu, LengthMismatch) {
  try {
    corpus_bleu({"a"}, {"a", "b"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LengthMismatch);
  }
  EXPECT_THROW(corpus_bleu({}, {}), Error);
  EXPECT_THROW(corpus_chrf({"a"}, {}), Error);
  EXPECT_THROW(mean_answer_f1({"a"}, {}), Error);
}

TEST(Chrf, HandEvaluation) {
  // Orders 1-4: F = 3/4, 2/3, 1/2, 0; orders 5-6 have no n-grams.
  EXPECT_NEAR(corpus_chrf({"abcd"}, {"abce"}), 100.0 * (0.75 + 2.0 / 3.0 + 0.5 + 0.0) / 4.0, 1e-6);
  EXPECT_NEAR(corpus_chrf({"abcd"}, {"abce"}), 47.916667, 1e-6);
}

TEST(Chrf, IdentityAndDisjoint) {
  EXPECT_DOUBLE_EQ(corpus_chrf({"hello world", "राम"}, {"hello world", "राम"}), 100.0);
  EXPECT_DOUBLE_EQ(corpus_chrf({"abc"}, {"xyz"}), 0.0);
  EXPECT_DOUBLE_EQ(corpus_chrf({"ab"}, {"ab"}), 100.0);
}

TEST(Chrf, WhitespaceOnlyDifferences) {
  EXPECT_DOUBLE_EQ(corpus_chrf({"the  cat sat"}, {"thecat\tsat"}), 100.0);
  MetricConfig keep;
  keep.chrf_remove_whitespace = false;
  EXPECT_LT(corpus_chrf({"the  cat sat"}, {"thecat\tsat"}, keep), 100.0);
}

TEST(MetricProperty, PermutationInvarianceAndWhitespace) {
  Xoshiro256 rng(12);
  for (int c = 0; c < 100; ++c) {
    Corpus h;
    Corpus r;
    for (std::size_t i = 0, n = 1 + rng.below(6); i < n; ++i) {
      h.push_back(random_sentence(rng));
      r.push_back(random_sentence(rng));
    }
    Corpus hp = h;
    Corpus rp = r;
    for (std::size_t i = hp.size(); i > 1; --i) {
      const auto j = rng.below(i);
      std::swap(hp[i - 1], hp[j]);
      std::swap(rp[i - 1], rp[j]);
    }
    EXPECT_NEAR(corpus_bleu(h, r), corpus_bleu(hp, rp), 1e-9);
    EXPECT_NEAR(corpus_chrf(h, r), corpus_chrf(hp, rp), 1e-9);
    const double b = corpus_bleu(h, r);
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 100.0);

    Corpus spaced;
    for (const auto& s : h) {
      std::string t;
      for (char ch : s) t += ch == ' ' ? std::string(1 + rng.below(3), ' ') : std::string(1, ch);
      spaced.push_back(t);
    }
    EXPECT_NEAR(corpus_chrf(spaced, r), corpus_chrf(h, r), 1e-9);
  }
}

TEST(F1, Formula) {
  EXPECT_NEAR(answer_f1("a b c", "b c d"), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(answer_f1("New Delhi", "new delhi."), 1.0);
  EXPECT_DOUBLE_EQ(answer_f1("", ""), 1.0);
  EXPECT_DOUBLE_EQ(answer_f1("x", ""), 0.0);
  EXPECT_DOUBLE_EQ(answer_f1("", "x"), 0.0);
  EXPECT_DOUBLE_EQ(answer_f1("x y", "z"), 0.0);
  EXPECT_NEAR(answer_f1("a a b", "a b b"), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(answer_f1("中国人", "中国话", "zho"), 2.0 / 3.0, 1e-12);
  EXPECT_DOUBLE_EQ(answer_f1("中国人", "中国话", "hin"), 0.0);
  EXPECT_NEAR(answer_f1("中国人", "中国话", "zho_Hans"), 2.0 / 3.0, 1e-12);
}

TEST(F1, Unanswerable) {
  EXPECT_DOUBLE_EQ(answer_f1("Unanswerable.", "unanswerable"), 1.0);
  EXPECT_DOUBLE_EQ(answer_f1("unanswerable in this context", "unanswerable"), 0.0);
  EXPECT_DOUBLE_EQ(answer_f1("unanswerable", "the answer"), 0.0);
  EXPECT_DOUBLE_EQ(mean_answer_f1({"a b c", "x"}, {"b c d", "x"}), (2.0 / 3.0 + 1.0) / 2.0);
}

TEST(F1, Symmetry) {
  Xoshiro256 rng(13);
  for (int c = 0; c < 200; ++c) {
    const auto a = random_sentence(rng);
    const auto b = random_sentence(rng);
    EXPECT_NEAR(answer_f1(a, b), answer_f1(b, a), 1e-12);
    EXPECT_DOUBLE_EQ(answer_f1(a, a), 1.0);
  }
}

TEST(MetricConfig, Validate) {
  MetricConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.chrf_beta = 0;
  EXPECT_THROW(cfg.validate(), Error);
  cfg = {};
  cfg.bleu_max_ngram = 0;
  EXPECT_THROW(cfg.validate(), Error);
  EXPECT_TRUE(MetricConfig{}.charlevel("jpn"));
  EXPECT_FALSE(MetricConfig{}.charlevel("hin"));
}
