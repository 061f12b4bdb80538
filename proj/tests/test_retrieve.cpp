#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "fixture_pool.hpp"
#include "oracles.hpp"
#include "phonicl/error.hpp"
#include "phonicl/retrieve.hpp"
#include "phonicl/rng.hpp"

using namespace phonicl;

namespace {

ScoreVector random_scores(Xoshiro256& rng, std::size_t n, std::uint64_t levels) {
  ScoreVector v(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = static_cast<double>(rng.below(levels)) / 4.0;
  return v;
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

std::vector<std::size_t> docs(const std::vector<Selected>& sel) {
  std::vector<std::size_t> out;
  for (const auto& s : sel) out.push_back(s.doc);
  return out;
}

}  // namespace

TEST(Strategy, ParseAndRoundTrip) {
  for (const std::string s : {"random:5", "script", "ipa", "roman", "mixed:script+ipa", "mixed:ipa+roman+script",
                              "all", "harmonic", "split-half:script-first", "split-half:ipa-first",
                              "split-half:shuffle:3", "divide-conquer", "append", "dense:v.jsonl"}) {
    EXPECT_EQ(StrategyId::parse(s).to_string(), s);
  }
  EXPECT_EQ(StrategyId::parse("random", 9).seed, 9u);
  EXPECT_EQ(StrategyId::parse("mixed"), StrategyId::mixed({Channel::Script, Channel::Ipa}));
  EXPECT_EQ(StrategyId::parse("split-half:shuffle", 4).seed, 4u);
  EXPECT_THROW(StrategyId::parse("bogus"), Error);
  EXPECT_THROW(StrategyId::parse("script:1"), Error);
  EXPECT_THROW(StrategyId::parse("mixed:script+klingon"), Error);
}

TEST(Strategy, Validate) {
  EXPECT_EQ(code_of([] { StrategyId::split_half(SplitOrder::ScriptFirst).validate(3); }), ErrorCode::OddKForSplitHalf);
  EXPECT_NO_THROW(StrategyId::split_half(SplitOrder::ScriptFirst).validate(4));
  EXPECT_THROW(StrategyId::mixed({Channel::Script}).validate(3), Error);
  EXPECT_THROW(StrategyId::mixed({Channel::Script, Channel::Script}).validate(3), Error);
  EXPECT_THROW(StrategyId::single(Channel::Script).validate(0), Error);
}

TEST(Selection, EveryStrategyMatchesOracle) {
  for (const auto& c : fixture::strategy_checks()) EXPECT_TRUE(c.ok) << c.strategy;
}

TEST(Selection, AppendKeepsDuplicates) {
  ChannelScores sc;
  sc.n_docs = 8;
  sc.sparse[Channel::Script] = ScoreVector::Zero(8);
  sc.sparse[Channel::Ipa] = ScoreVector::Zero(8);
  sc.sparse[Channel::Script](5) = 3.0;
  sc.sparse[Channel::Ipa](5) = 2.0;
  EXPECT_EQ(docs(select(StrategyId::append(), 2, sc, "q")), (std::vector<std::size_t>{5, 5}));
  EXPECT_EQ(docs(select(StrategyId::divide_conquer(), 2, sc, "q")), (std::vector<std::size_t>{5, 0}));
}

TEST(Selection, TieBreakByOrdinal) {
  const ScoreVector v = ScoreVector::Constant(6, 1.5);
  EXPECT_EQ(docs(top_k(v, 3)), (std::vector<std::size_t>{0, 1, 2}));
  ScoreVector w(5);
  w << 1, 3, 3, 0, 3;
  EXPECT_EQ(docs(top_k(w, 4)), (std::vector<std::size_t>{1, 2, 4, 0}));
  EXPECT_EQ(top_k(w, 10).size(), 5u);
}

TEST(Selection, MixedIsArithmeticMean) {
  Xoshiro256 rng(77);
  for (int c = 0; c < 300; ++c) {
    const std::size_t n = 1 + rng.below(20);
    ChannelScores sc;
    sc.n_docs = n;
    sc.sparse[Channel::Script] = random_scores(rng, n, 8);
    sc.sparse[Channel::Ipa] = random_scores(rng, n, 8);
    const std::size_t k = 1 + rng.below(6);
    const auto got = select(StrategyId::mixed({Channel::Script, Channel::Ipa}), k, sc, "q");
    const auto want = oracle::ranked(
        oracle::mean({fixture::as_vector(sc.sparse[Channel::Script]), fixture::as_vector(sc.sparse[Channel::Ipa])}), k);
    EXPECT_TRUE(fixture::same_entries(fixture::as_entries(got), want, true));
  }
}

TEST(Selection, MixedOfIdenticalChannelsEqualsSingle) {
  Xoshiro256 rng(78);
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 1 + rng.below(15);
    ChannelScores sc;
    sc.n_docs = n;
    sc.sparse[Channel::Script] = random_scores(rng, n, 5);
    sc.sparse[Channel::Ipa] = sc.sparse[Channel::Script];
    const std::size_t k = 1 + rng.below(5);
    EXPECT_EQ(docs(select(StrategyId::mixed({Channel::Script, Channel::Ipa}), k, sc, "q")),
              docs(select(StrategyId::single(Channel::Script), k, sc, "q")));
    EXPECT_EQ(select(StrategyId::mixed({Channel::Script}), k, sc, "q"),
              select(StrategyId::single(Channel::Script), k, sc, "q"));
  }
}

TEST(Selection, ScalingInvariance) {
  Xoshiro256 rng(79);
  const std::vector<StrategyId> ids{StrategyId::mixed({Channel::Script, Channel::Ipa}), StrategyId::harmonic(),
                                    StrategyId::divide_conquer(), StrategyId::append()};
  for (int c = 0; c < 100; ++c) {
    const std::size_t n = 2 + rng.below(12);
    ChannelScores sc;
    sc.n_docs = n;
    sc.sparse[Channel::Script] = random_scores(rng, n, 9);
    sc.sparse[Channel::Ipa] = random_scores(rng, n, 9);
    ChannelScores scaled = sc;
    const double factor = 0.25 * static_cast<double>(1 + rng.below(16));
    for (auto& [ch, v] : scaled.sparse) v *= factor;
    const std::size_t k = 1 + rng.below(4);
    for (const auto& id : ids) {
      EXPECT_EQ(docs(select(id, k, sc, "q")), docs(select(id, k, scaled, "q"))) << id.to_string();
    }
  }
}

TEST(Selection, HarmonicZeroWhenBothZero) {
  ScoreVector a(3);
  ScoreVector b(3);
  a << 0, 2, 1;
  b << 0, 2, 0;
  const ScoreVector h = harmonic_scores(a, b);
  EXPECT_EQ(h(0), 0.0);
  EXPECT_DOUBLE_EQ(h(1), 2.0);
  EXPECT_EQ(h(2), 0.0);
}

TEST(Selection, NormalizeOption) {
  ScoreVector v(3);
  v << 2, 4, 3;
  const ScoreVector n = min_max_normalize(v);
  EXPECT_DOUBLE_EQ(n(0), 0.0);
  EXPECT_DOUBLE_EQ(n(1), 1.0);
  EXPECT_DOUBLE_EQ(n(2), 0.5);
  EXPECT_EQ(min_max_normalize(ScoreVector::Constant(3, 7.0)), ScoreVector::Zero(3));

  ChannelScores sc;
  sc.n_docs = 3;
  sc.sparse[Channel::Script] = ScoreVector(3);
  sc.sparse[Channel::Script] << 100, 0, 50;
  sc.sparse[Channel::Ipa] = ScoreVector(3);
  sc.sparse[Channel::Ipa] << 0, 1, 0.9;
  const auto mixed = StrategyId::mixed({Channel::Script, Channel::Ipa});
  EXPECT_EQ(docs(select(mixed, 1, sc, "q")), (std::vector<std::size_t>{0}));
  RetrieveOptions opt;
  opt.normalize = true;
  EXPECT_EQ(docs(select(mixed, 1, sc, "q", opt)), (std::vector<std::size_t>{2}));
}

TEST(Selection, RandomIsUniform) {
  ChannelScores sc;
  sc.n_docs = 10;
  std::vector<int> counts(10, 0);
  const int queries = 5000;
  for (int q = 0; q < queries; ++q) {
    for (const auto& s : select(StrategyId::random(3), 3, sc, "q" + std::to_string(q))) ++counts[s.doc];
  }
  const double expected = queries * 3 / 10.0;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 27.88);  // 9 dof, p = 0.001
  EXPECT_EQ(select(StrategyId::random(3), 3, sc, "a"), select(StrategyId::random(3), 3, sc, "a"));
  EXPECT_NE(select(StrategyId::random(3), 3, sc, "a"), select(StrategyId::random(4), 3, sc, "a"));
}

TEST(Selection, SmallPoolAndErrors) {
  ChannelScores sc;
  sc.n_docs = 2;
  sc.sparse[Channel::Script] = ScoreVector::Ones(2);
  EXPECT_EQ(select(StrategyId::single(Channel::Script), 5, sc, "q").size(), 2u);
  EXPECT_EQ(select(StrategyId::random(1), 5, sc, "q").size(), 2u);
  EXPECT_EQ(code_of([&] { select(StrategyId::single(Channel::Ipa), 1, sc, "q"); }), ErrorCode::MissingChannel);
  EXPECT_EQ(code_of([&] { select(StrategyId::dense("x"), 1, sc, "q"); }), ErrorCode::MissingVectors);
}

TEST(Cosine, Properties) {
  Xoshiro256 rng(80);
  for (int c = 0; c < 200; ++c) {
    Eigen::VectorXd a(5);
    Eigen::VectorXd b(5);
    for (int i = 0; i < 5; ++i) {
      a(i) = static_cast<double>(rng.below(21)) - 10.0;
      b(i) = static_cast<double>(rng.below(21)) - 10.0;
    }
    const double ab = cosine(a, b);
    EXPECT_NEAR(ab, cosine(b, a), 1e-12);
    EXPECT_LE(std::abs(ab), 1.0 + 1e-12);
    EXPECT_NEAR(cosine(a, (3.0 * a).eval()), a.norm() == 0 ? 0.0 : 1.0, 1e-12);
    EXPECT_NEAR(ab, oracle::cosine({a.data(), a.data() + 5}, {b.data(), b.data() + 5}), 1e-12);
  }
  EXPECT_EQ(cosine(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Ones(3)), 0.0);
  Eigen::VectorXf f(2);
  f << 1, 0;
  EXPECT_FLOAT_EQ(cosine(f, f), 1.0f);
}

TEST(Dense, StoreAndErrors) {
  const auto store = DenseStore::parse(fixture::vectors_jsonl());
  EXPECT_EQ(store.size(), 9u);
  EXPECT_EQ(store.dim(), 3);
  const auto s = store.cosine_scores("q", {"d0", "d6"});
  EXPECT_NEAR(s(0), 1.0 / std::sqrt(1.64), 1e-12);
  EXPECT_NEAR(s(1), -1.0 / std::sqrt(1.64), 1e-12);
  EXPECT_EQ(code_of([&] { store.cosine_scores("q", {"d0", "nope"}); }), ErrorCode::MissingVectors);
  EXPECT_THROW(DenseStore::parse("{\"id\": \"a\", \"vector\": [1]}\n{\"id\": \"b\", \"vector\": [1, 2]}\n"),
               MalformedRecord);
  EXPECT_EQ(code_of([] { DenseStore::load("/nonexistent/vectors.jsonl"); }), ErrorCode::MissingVectors);
}

TEST(Retriever, FixtureRankings) {
  const auto r = fixture::retriever();
  const auto q = fixture::query();
  const auto res = r.retrieve(q, StrategyId::mixed({Channel::Script, Channel::Ipa}), 3);
  EXPECT_EQ(res.query_id, "q");
  EXPECT_EQ(res.selected.size(), 3u);
  EXPECT_EQ(res.per_channel.size(), 2u);
  EXPECT_EQ(code_of([&] { r.retrieve(q, StrategyId::split_half(SplitOrder::IpaFirst), 3); }),
            ErrorCode::OddKForSplitHalf);
  EXPECT_EQ(code_of([&] { r.retrieve(q, StrategyId::dense("v"), 3); }), ErrorCode::MissingVectors);
}

TEST(Retriever, MissingChannelIndex) {
  const auto docs = fixture::pool();
  std::map<Channel, Bm25Index> only_script;
  only_script.emplace(Channel::Script, build_index(docs, Channel::Script, Tokenizer::whitespace()));
  const Retriever r({"d0", "d1", "d2", "d3", "d4", "d5", "d6", "d7"}, std::move(only_script),
                    Tokenizer::whitespace(), {});
  EXPECT_EQ(code_of([&] { r.retrieve(fixture::query(), StrategyId::harmonic(), 2); }), ErrorCode::MissingChannel);
}

TEST(Retriever, BatchIsOrderPreservingAcrossThreads) {
  const auto r = fixture::retriever();
  std::vector<Example> queries;
  for (const auto& d : fixture::pool()) queries.push_back(d);
  for (const auto& id : {StrategyId::mixed({Channel::Script, Channel::Ipa}), StrategyId::random(2)}) {
    const auto one = r.retrieve_batch(queries, id, 3, 1);
    const auto many = r.retrieve_batch(queries, id, 3, 4);
    ASSERT_EQ(one.size(), many.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
      EXPECT_EQ(one[i].query_id, queries[i].id);
      EXPECT_EQ(one[i].selected, many[i].selected);
    }
  }
}
