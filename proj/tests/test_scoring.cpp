#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "qarel/error.hpp"
#include "qarel/scoring.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace qarel;

namespace {

std::vector<RankResult> ranks_of(std::initializer_list<std::size_t> rs, std::size_t cutoff) {
  std::vector<RankResult> out;
  for (auto r : rs) out.push_back(RankResult{"x", r, r <= cutoff ? 1.0 / static_cast<double>(r) : 0.0});
  return out;
}

// Candidate pool with deliberate exact duplicates so that ties occur.
std::vector<Embedding> pool_with_ties(oracle::Gen& gen, std::size_t n, std::size_t d) {
  std::vector<Embedding> out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && gen.uniform(0, 1) < 0.3) {
      out.push_back(out[gen.index(0, i - 1)]);
    } else {
      out.push_back(gen.vec(d));
    }
  }
  return out;
}

}  // namespace

TEST(Cosine, Examples) {
  const std::vector<double> a = {1, 0};
  const std::vector<double> b = {2, 0};
  const std::vector<double> c = {0, 3};
  EXPECT_DOUBLE_EQ(cosine(a, b), 1.0);
  EXPECT_DOUBLE_EQ(cosine(a, c), 0.0);
  const std::vector<double> x = {1, 2, 3};
  const std::vector<double> y = {4, 5, 6};
  EXPECT_NEAR(cosine(x, y), 0.974632, 1e-6);
  EXPECT_NEAR(cosine(x, y), 32.0 / (std::sqrt(14.0) * std::sqrt(77.0)), 1e-15);
  const std::vector<double> zero = {0, 0};
  EXPECT_THROW(cosine(a, zero), NumericError);
  EXPECT_THROW(cosine(a, x), NumericError);
}

TEST(Cosine, Properties) {
  oracle::Gen gen(3);
  for (int t = 0; t < 200; ++t) {
    const auto x = gen.vec(gen.index(1, 20));
    auto y = gen.vec(x.size());
    std::vector<double> neg(x.size());
    std::transform(x.begin(), x.end(), neg.begin(), [](double v) { return -v; });
    EXPECT_NEAR(cosine(x, x), 1.0, 1e-12);
    EXPECT_NEAR(cosine(x, neg), -1.0, 1e-12);
    const double c = cosine(x, y);
    EXPECT_GE(c, -1.0);
    EXPECT_LE(c, 1.0);
    const double a = gen.uniform(0.001, 1000.0);
    const double b = gen.uniform(0.001, 1000.0);
    std::vector<double> ax(x);
    for (auto& v : ax) v *= a;
    for (auto& v : y) v *= b;
    EXPECT_NEAR(cosine(ax, y), c, 1e-12);
  }
}

TEST(Ranking, RankCorrectExamples) {
  const std::vector<Embedding> cands = {{1, 0}, {0.6, 0.8}, {0, 1}};
  const std::vector<double> anchor = {1, 0.1};
  auto r = rank_correct(anchor, cands, 0);
  EXPECT_EQ(r.rank, 1u);
  EXPECT_EQ(r.reciprocal_rank, 1.0);

  // scores [0.9, 0.9, 0.5]: exact ties count against the correct candidate.
  const double s = std::sqrt(1.0 - 0.81);
  const std::vector<Embedding> tied = {{0.9, s}, {0.9, s}, {0.5, std::sqrt(0.75)}};
  const std::vector<double> e1 = {1, 0};
  r = rank_correct(e1, tied, 0);
  EXPECT_EQ(r.rank, 2u);
  EXPECT_EQ(r.reciprocal_rank, 0.5);

  std::vector<Embedding> many;
  for (int i = 0; i < 11; ++i) many.push_back({1.0, 0.01 * i});
  r = rank_correct(e1, many, 10, 10);
  EXPECT_EQ(r.rank, 11u);
  EXPECT_EQ(r.reciprocal_rank, 0.0);
  r = rank_correct(e1, many, 9, 10);
  EXPECT_EQ(r.rank, 10u);
  EXPECT_DOUBLE_EQ(r.reciprocal_rank, 0.1);

  const std::vector<Embedding> with_zero = {{1, 0}, {0, 0}};
  EXPECT_THROW(rank_correct(e1, with_zero, 0), NumericError);
}

TEST(Ranking, MrrExamples) {
  EXPECT_EQ(mrr(ranks_of({1, 1, 1}, 10)), 1.0);
  EXPECT_NEAR(mrr(ranks_of({2, 4, 5}, 10)), 0.316667, 1e-6);
  EXPECT_NEAR(mrr(ranks_of({2, 4, 5}, 10)), (0.5 + 0.25 + 0.2) / 3.0, 1e-9);
  EXPECT_EQ(mrr(ranks_of({1, 11}, 10)), 0.5);
  EXPECT_THROW(mrr(std::vector<RankResult>{}), ArgumentError);
  auto rs = ranks_of({3, 1, 7, 12, 2}, 10);
  const double m = mrr(rs);
  std::reverse(rs.begin(), rs.end());
  EXPECT_EQ(mrr(rs), m);
}

TEST(Ranking, EvaluateMatchesBruteForceOracle) {
  oracle::Gen gen(17);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = gen.index(1, 20);
    const std::size_t d = gen.index(2, 6);
    const auto anchors = pool_with_ties(gen, n, d);
    const auto cands = pool_with_ties(gen, n, d);
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) ids.push_back("e" + std::to_string(i));
    const std::size_t cutoff = trial % 2 ? 10 : gen.index(1, 20);
    const auto report = evaluate_embeddings(anchors, cands, ids, cutoff, 1 + trial % 3);
    ASSERT_EQ(report.ranks.size(), n);
    double rr_sum = 0.0;
    std::size_t hits[3] = {0, 0, 0};
    for (std::size_t i = 0; i < n; ++i) {
      const auto want = oracle::sorted_rank(anchors[i], cands, i);
      ASSERT_EQ(report.ranks[i].rank, want) << "trial " << trial << " item " << i;
      ASSERT_EQ(report.ranks[i].exchange_id, ids[i]);
      const double rr = want <= cutoff ? 1.0 / static_cast<double>(want) : 0.0;
      ASSERT_EQ(report.ranks[i].reciprocal_rank, rr);
      rr_sum += rr;
      hits[0] += want <= 1;
      hits[1] += want <= 5;
      hits[2] += want <= 10;
    }
    EXPECT_NEAR(report.mrr, rr_sum / static_cast<double>(n), 1e-12);
    EXPECT_EQ(report.hit_rate_at.at(1), static_cast<double>(hits[0]) / static_cast<double>(n));
    EXPECT_EQ(report.hit_rate_at.at(5), static_cast<double>(hits[1]) / static_cast<double>(n));
    EXPECT_EQ(report.hit_rate_at.at(10), static_cast<double>(hits[2]) / static_cast<double>(n));
  }
}

TEST(Ranking, RandomEmbeddingBaseline) {
  oracle::Gen gen(2024);
  const std::size_t n = 100;
  double expected = 0.0;
  for (int r = 1; r <= 10; ++r) expected += 1.0 / r;
  expected /= static_cast<double>(n);
  double total = 0.0;
  const int trials = 1000;
  std::vector<std::string> ids(n, "x");
  for (int t = 0; t < trials; ++t) {
    std::vector<Embedding> a;
    std::vector<Embedding> c;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(gen.vec(8));
      c.push_back(gen.vec(8));
    }
    total += evaluate_embeddings(a, c, ids).mrr;
  }
  EXPECT_NEAR(expected, 0.029290, 1e-6);
  EXPECT_NEAR(total / trials, expected, 0.01);
}

class ScoringModel : public ::testing::Test {
 protected:
  void SetUp() override {
    data_ = fixtures::prepare(80, 10, 3, 0.5, 0.25);
    params_ = init_encoder(fixtures::tiny_encoder(data_.vocab.size()), 1);
  }
  fixtures::Prepared data_;
  EncoderParams params_;
};

TEST_F(ScoringModel, ScoreCorpus) {
  auto ex = data_.split.validation;
  ex[0].answer_text = ex[0].question_text;
  const auto scored = score_corpus(params_, data_.vocab, ex);
  ASSERT_EQ(scored.size(), ex.size());
  EXPECT_NEAR(scored[0].cosine, 1.0, 1e-9);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    EXPECT_EQ(scored[i].exchange_id, ex[i].id);
    EXPECT_EQ(scored[i].party, ex[i].asker_party);
    EXPECT_EQ(scored[i].legislature, ex[i].legislature);
    EXPECT_EQ(scored[i].label, ex[i].label);
  }
  EXPECT_TRUE(score_corpus(params_, data_.vocab, {}).empty());

  auto rev = ex;
  std::reverse(rev.begin(), rev.end());
  auto scored_rev = score_corpus(params_, data_.vocab, rev, 3);
  std::reverse(scored_rev.begin(), scored_rev.end());
  EXPECT_EQ(scored_rev, scored);
}

TEST_F(ScoringModel, EvaluateRetrieval) {
  const std::vector<Exchange> one = {data_.split.validation[0]};
  EXPECT_EQ(evaluate_retrieval(params_, data_.vocab, one, Anchor::Question).mrr, 1.0);
  EXPECT_EQ(evaluate_retrieval(params_, data_.vocab, one, Anchor::Answer).mrr, 1.0);
  EXPECT_THROW(evaluate_retrieval(params_, data_.vocab, {}, Anchor::Question), ArgumentError);

  const auto& ex = data_.split.validation;
  const auto q = evaluate_retrieval(params_, data_.vocab, ex, Anchor::Question, 10, 1);
  EXPECT_EQ(evaluate_retrieval(params_, data_.vocab, ex, Anchor::Question, 10, 4).mrr, q.mrr);
  for (const auto& r : q.ranks) {
    EXPECT_GE(r.rank, 1u);
    EXPECT_TRUE(r.reciprocal_rank == 0.0 || (r.rank <= 10 && r.reciprocal_rank == 1.0 / r.rank));
  }
}

TEST_F(ScoringModel, ScoresCsvRoundTrip) {
  const auto scored = score_corpus(params_, data_.vocab, data_.split.validation);
  const auto path = std::filesystem::temp_directory_path() / "qarel_scores_test.csv";
  write_scores_csv(scored, path);
  const auto back = read_scores_csv(path);
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), scored.size());
  for (std::size_t i = 0; i < scored.size(); ++i) {
    EXPECT_EQ(back[i].exchange_id, scored[i].exchange_id);
    EXPECT_NEAR(back[i].cosine, scored[i].cosine, 5e-7);
    EXPECT_EQ(back[i].label, scored[i].label);
    EXPECT_EQ(back[i].role, scored[i].role);
  }
}
