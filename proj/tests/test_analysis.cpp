#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "qarel/analysis.hpp"
#include "qarel/error.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace qarel;

namespace {

ScoredPair pair(double cosine, Party party = Party::CPC, int legislature = 41,
                std::optional<ReplyLabel> label = std::nullopt, std::string id = "x") {
  ScoredPair p;
  p.exchange_id = std::move(id);
  p.cosine = cosine;
  p.party = party;
  p.legislature = legislature;
  p.label = label;
  return p;
}

// Welch's t-test from the textbook formulas, with Student's t tail from Boost.
struct WelchOracle {
  double t;
  double df;
  double p;
};

WelchOracle welch_oracle(const std::vector<double>& a, const std::vector<double>& b) {
  auto var = [](const std::vector<double>& x) {
    const double m = oracle::mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return s / static_cast<double>(x.size() - 1);
  };
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double qa = var(a) / na;
  const double qb = var(b) / nb;
  const double t = (oracle::mean(a) - oracle::mean(b)) / std::sqrt(qa + qb);
  const double df = (qa + qb) * (qa + qb) / (qa * qa / (na - 1) + qb * qb / (nb - 1));
  const boost::math::students_t dist(df);
  const double p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(t)));
  return {t, df, p};
}

}  // namespace

TEST(Derangement, NoFixedPointsAndPermutation) {
  for (std::size_t n = 2; n <= 40; ++n) {
    Rng rng(n);
    for (int round = 0; round < 20; ++round) {
      const auto d = random_derangement(n, rng);
      ASSERT_EQ(d.size(), n);
      std::vector<std::size_t> sorted(d);
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < n; ++i) {
        ASSERT_EQ(sorted[i], i);
        ASSERT_NE(d[i], i);
      }
    }
  }
  Rng rng(1);
  EXPECT_EQ(random_derangement(2, rng), (std::vector<std::size_t>{1, 0}));
  EXPECT_THROW(random_derangement(1, rng), ArgumentError);
  EXPECT_THROW(random_derangement(0, rng), ArgumentError);
}

TEST(Derangement, RoughlyUniformOverSizeThree) {
  // Size 3 has exactly two derangements, (1,2,0) and (2,0,1).
  Rng rng(9);
  int first = 0;
  const int draws = 4000;
  for (int i = 0; i < draws; ++i) first += random_derangement(3, rng)[0] == 1;
  EXPECT_NEAR(static_cast<double>(first) / draws, 0.5, 0.05);
}

TEST(NullDistribution, EmbeddingOverload) {
  oracle::Gen gen(4);
  std::vector<Embedding> q;
  std::vector<Embedding> a;
  for (int i = 0; i < 2; ++i) {
    q.push_back(gen.vec(5));
    a.push_back(gen.vec(5));
  }
  const auto nd = null_distribution(q, a, 1, 77);
  ASSERT_EQ(nd.cosines.size(), 2u);
  EXPECT_NEAR(nd.cosines[0], oracle::cos(q[0], a[1]), 1e-12);
  EXPECT_NEAR(nd.cosines[1], oracle::cos(q[1], a[0]), 1e-12);

  for (int i = 0; i < 23; ++i) {
    q.push_back(gen.vec(5));
    a.push_back(gen.vec(5));
  }
  const auto x = null_distribution(q, a, 6, 5, 1);
  const auto y = null_distribution(q, a, 6, 5, 3);
  EXPECT_EQ(x.cosines, y.cosines);
  EXPECT_EQ(x.matchings, y.matchings);
  ASSERT_EQ(x.matchings.size(), 6u);
  ASSERT_EQ(x.cosines.size(), 6u * q.size());
  for (std::size_t r = 0; r < x.matchings.size(); ++r) {
    for (std::size_t i = 0; i < q.size(); ++i) {
      const std::size_t j = x.matchings[r][i];
      ASSERT_NE(j, i);
      EXPECT_NEAR(x.cosines[r * q.size() + i], oracle::cos(q[i], a[j]), 1e-12);
    }
  }
  EXPECT_NE(null_distribution(q, a, 6, 6).cosines, x.cosines);
  EXPECT_THROW(null_distribution(std::span(q).first(1), std::span(a).first(1), 1, 1), ArgumentError);
}

TEST(NullDistribution, EncoderOverloadTwoExchanges) {
  const auto data = fixtures::prepare(40, 5, 2, 0.5, 0.25);
  const auto params = init_encoder(fixtures::tiny_encoder(data.vocab.size()), 3);
  const std::vector<Exchange> two(data.split.train.begin(), data.split.train.begin() + 2);
  const auto nd = null_distribution(params, data.vocab, two, 1, 11);
  std::vector<Exchange> swapped = two;
  std::swap(swapped[0].answer_text, swapped[1].answer_text);
  const auto want = score_corpus(params, data.vocab, swapped);
  ASSERT_EQ(nd.cosines.size(), 2u);
  EXPECT_NEAR(nd.cosines[0], want[0].cosine, 1e-12);
  EXPECT_NEAR(nd.cosines[1], want[1].cosine, 1e-12);
  EXPECT_EQ(null_distribution(params, data.vocab, two, 1, 11).cosines, nd.cosines);
}

TEST(Statistics, SummaryExamples) {
  const std::vector<double> flat = {1, 1, 1, 1};
  const auto s = summary_stats(flat);
  EXPECT_EQ(s.mean, 1.0);
  EXPECT_EQ(s.std, 0.0);
  EXPECT_FALSE(s.skewness.has_value());
  EXPECT_THROW(skewness(flat), NumericError);

  const std::vector<double> abc = {1, 2, 3};
  const auto t = summary_stats(abc);
  EXPECT_DOUBLE_EQ(t.mean, 2.0);
  EXPECT_DOUBLE_EQ(t.std, 1.0);
  ASSERT_TRUE(t.skewness.has_value());
  EXPECT_NEAR(*t.skewness, 0.0, 1e-12);
  EXPECT_EQ(t.min, 1.0);
  EXPECT_EQ(t.max, 3.0);
  EXPECT_EQ(t.n, 3u);

  const std::vector<double> right = {1, 2, 3, 10};
  EXPECT_GT(skewness(right), 0.0);

  const std::vector<double> one = {4};
  EXPECT_THROW(summary_stats(one), ArgumentError);
  const std::vector<double> two = {4, 5};
  EXPECT_THROW(skewness(two), ArgumentError);
}

TEST(Statistics, SkewnessMatchesOracle) {
  oracle::Gen gen(31);
  for (int i = 0; i < 20; ++i) {
    const auto x = gen.sample(gen.index(3, 40), gen.uniform(-2, 2), gen.uniform(0.1, 3));
    std::vector<double> y(x);
    for (auto& v : y) v = std::exp(v / 2);  // skewed
    EXPECT_NEAR(skewness(x), oracle::skewness(x), 1e-6);
    EXPECT_NEAR(skewness(y), oracle::skewness(y), 1e-6);
  }
}

TEST(Statistics, PearsonExamplesAndOracle) {
  const std::vector<double> a = {1, 2, 3};
  const std::vector<double> b = {1, 2, 4};
  EXPECT_NEAR(pearson(a, b), 0.981981, 1e-6);
  EXPECT_NEAR(pearson(a, a), 1.0, 1e-12);
  const std::vector<double> neg = {-1, -2, -3};
  EXPECT_NEAR(pearson(a, neg), -1.0, 1e-12);
  const std::vector<double> flat = {2, 2, 2};
  EXPECT_THROW(pearson(a, flat), ArgumentError);
  const std::vector<double> shorter = {1, 2};
  EXPECT_THROW(pearson(a, shorter), ArgumentError);

  oracle::Gen gen(8);
  for (int i = 0; i < 20; ++i) {
    const std::size_t n = gen.index(3, 30);
    const auto x = gen.vec(n);
    auto y = gen.vec(n);
    for (std::size_t k = 0; k < n; ++k) y[k] += gen.uniform(-1, 1) * x[k];
    const double r = pearson(x, y);
    EXPECT_NEAR(r, oracle::pearson(x, y), 1e-6);
    EXPECT_NEAR(pearson(y, x), r, 1e-9);
    const double scale = gen.uniform(0.01, 100);
    const double shift = gen.uniform(-50, 50);
    std::vector<double> z(x);
    for (auto& v : z) v = scale * v + shift;
    EXPECT_NEAR(pearson(z, y), r, 1e-9);
  }
}

TEST(Statistics, IncompleteBetaKnownValues) {
  EXPECT_EQ(regularized_incomplete_beta(2, 3, 0), 0.0);
  EXPECT_EQ(regularized_incomplete_beta(2, 3, 1), 1.0);
  // I_x(1, 1) = x and I_x(a, 1) = x^a.
  EXPECT_NEAR(regularized_incomplete_beta(1, 1, 0.3), 0.3, 1e-12);
  EXPECT_NEAR(regularized_incomplete_beta(3, 1, 0.6), 0.216, 1e-12);
  EXPECT_NEAR(regularized_incomplete_beta(0.5, 0.5, 0.5), 0.5, 1e-12);
  EXPECT_NEAR(student_t_two_sided_p(0, 5), 1.0, 1e-12);
  // t = 2.228 at df 10 is the textbook 95% critical value.
  EXPECT_NEAR(student_t_two_sided_p(2.228138851986, 10), 0.05, 1e-9);
}

TEST(Statistics, WelchMatchesOracle) {
  oracle::Gen gen(12);
  for (int i = 0; i < 20; ++i) {
    const auto a = gen.sample(gen.index(2, 25), gen.uniform(-1, 1), gen.uniform(0.1, 2));
    const auto b = gen.sample(gen.index(2, 25), gen.uniform(-1, 1), gen.uniform(0.1, 2));
    const auto got = welch_test(a, b);
    const auto want = welch_oracle(a, b);
    EXPECT_NEAR(got.t_statistic, want.t, 1e-9);
    EXPECT_NEAR(got.df, want.df, 1e-9);
    EXPECT_NEAR(got.p_value, want.p, 1e-6);
    EXPECT_NEAR(got.mean_diff, oracle::mean(a) - oracle::mean(b), 1e-12);
  }
  const std::vector<double> c = {0.5, 0.5, 0.5};
  const auto same = welch_test(c, c);
  EXPECT_EQ(same.p_value, 1.0);
  EXPECT_EQ(same.mean_diff, 0.0);
  const std::vector<double> d = {0.4, 0.4};
  EXPECT_EQ(welch_test(c, d).p_value, 0.0);
  const std::vector<double> one = {1.0};
  EXPECT_THROW(welch_test(c, one), ArgumentError);
}

TEST(Groups, ParseFields) {
  EXPECT_EQ(parse_group_fields("party,legislature"),
            (std::vector<GroupField>{GroupField::Party, GroupField::Legislature}));
  EXPECT_EQ(parse_group_fields("label"), (std::vector<GroupField>{GroupField::Label}));
  EXPECT_THROW(parse_group_fields("colour"), ArgumentError);
  EXPECT_THROW(parse_group_fields(""), ArgumentError);
}

TEST(Groups, ConstantGroupsNotSignificant) {
  std::vector<ScoredPair> s;
  for (int i = 0; i < 5; ++i) {
    s.push_back(pair(0.5, Party::CPC));
    s.push_back(pair(0.5, Party::LPC));
  }
  const std::vector<GroupField> by = {GroupField::Party};
  const auto r = group_means(s, by);
  ASSERT_EQ(r.groups.size(), 2u);
  EXPECT_EQ(r.groups[0].group_key, "CPC");
  EXPECT_EQ(r.groups[1].group_key, "LPC");
  ASSERT_EQ(r.tests.size(), 1u);
  EXPECT_EQ(r.tests[0].mean_diff, 0.0);
  EXPECT_FALSE(r.tests[0].significant_95);
}

TEST(Groups, SeparatedGroupsSignificant) {
  oracle::Gen gen(5);
  std::vector<ScoredPair> s;
  for (int i = 0; i < 50; ++i) {
    s.push_back(pair(0.9 + gen.uniform(-1e-3, 1e-3), Party::BQ));
    s.push_back(pair(0.1 + gen.uniform(-1e-3, 1e-3), Party::NDP));
  }
  const std::vector<GroupField> by = {GroupField::Party};
  const auto r = group_means(s, by);
  ASSERT_EQ(r.tests.size(), 1u);
  EXPECT_TRUE(r.tests[0].significant_95);
  ASSERT_TRUE(r.tests[0].welch.has_value());
  EXPECT_LT(r.tests[0].welch->p_value, 1e-10);
  EXPECT_NEAR(r.tests[0].mean_diff, 0.8, 1e-3);
}

TEST(Groups, SingleGroupAndTinyGroups) {
  std::vector<ScoredPair> s = {pair(0.3), pair(0.5), pair(0.7)};
  const std::vector<GroupField> by = {GroupField::Party};
  auto r = group_means(s, by);
  ASSERT_EQ(r.groups.size(), 1u);
  EXPECT_TRUE(r.tests.empty());
  EXPECT_NEAR(r.groups[0].mean, 0.5, 1e-12);
  ASSERT_TRUE(r.groups[0].ci95_low && r.groups[0].ci95_high);
  EXPECT_LE(*r.groups[0].ci95_low, r.groups[0].mean);
  EXPECT_GE(*r.groups[0].ci95_high, r.groups[0].mean);

  s.push_back(pair(0.1, Party::BQ));
  r = group_means(s, by);
  ASSERT_EQ(r.groups.size(), 2u);
  EXPECT_EQ(r.groups[0].group_key, "BQ");
  EXPECT_FALSE(r.groups[0].std.has_value());
  EXPECT_FALSE(r.groups[0].ci95_low.has_value());
  ASSERT_EQ(r.tests.size(), 1u);
  EXPECT_FALSE(r.tests[0].welch.has_value());
  EXPECT_FALSE(r.tests[0].significant_95);

  std::ostringstream groups;
  std::ostringstream tests;
  write_groups_csv(groups, r);
  write_tests_csv(tests, r);
  EXPECT_EQ(groups.str().substr(0, groups.str().find('\n')), "group,n,mean,std,ci95_low,ci95_high");
  EXPECT_NE(groups.str().find("BQ,1,0.100000,,,"), std::string::npos);
  EXPECT_EQ(tests.str().substr(0, tests.str().find('\n')),
            "group_a,group_b,mean_diff,t_statistic,df,p_value,significant_95");
}

TEST(Groups, WeightedMeanOfGroupMeansIsGlobalMean) {
  oracle::Gen gen(21);
  const Party parties[] = {Party::BQ, Party::CPC, Party::LPC, Party::NDP, Party::Other};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<ScoredPair> s;
    std::vector<double> all;
    const std::size_t n = gen.index(1, 80);
    for (std::size_t i = 0; i < n; ++i) {
      const double c = gen.uniform(-1, 1);
      all.push_back(c);
      std::optional<ReplyLabel> label;
      if (gen.index(0, 3) > 0) label = static_cast<ReplyLabel>(gen.index(0, 2));
      s.push_back(pair(c, parties[gen.index(0, 4)], 39 + static_cast<int>(gen.index(0, 4)), label));
    }
    for (const auto& by : {std::vector<GroupField>{GroupField::Party},
                           std::vector<GroupField>{GroupField::Party, GroupField::Legislature},
                           std::vector<GroupField>{GroupField::Label}}) {
      const auto r = group_means(s, by);
      double weighted = 0.0;
      std::size_t total = 0;
      std::set<std::string> keys;
      for (const auto& g : r.groups) {
        weighted += g.mean * static_cast<double>(g.n);
        total += g.n;
        keys.insert(g.group_key);
      }
      EXPECT_EQ(total, n);
      EXPECT_EQ(keys.size(), r.groups.size());
      EXPECT_EQ(r.tests.size(), r.groups.size() * (r.groups.size() - 1) / 2);
      EXPECT_NEAR(weighted / static_cast<double>(n), oracle::mean(all), 1e-9);
    }
  }
}

TEST(Validity, Examples) {
  const std::vector<ScoredPair> s = {pair(0.7, Party::CPC, 41, ReplyLabel::FullReply),
                                     pair(0.5, Party::CPC, 41, ReplyLabel::FullReply),
                                     pair(0.1, Party::CPC, 41, ReplyLabel::NonReply)};
  const auto v = validity_report(s);
  ASSERT_EQ(v.report.groups.size(), 2u);
  EXPECT_EQ(v.report.groups[0].group_key, "FullReply");
  EXPECT_NEAR(v.report.groups[0].mean, 0.6, 1e-12);
  EXPECT_EQ(v.report.groups[1].group_key, "NonReply");
  EXPECT_NEAR(v.report.groups[1].mean, 0.1, 1e-12);
  EXPECT_TRUE(v.monotone);

  std::vector<ScoredPair> flat;
  for (auto l : {ReplyLabel::FullReply, ReplyLabel::IntermediateReply, ReplyLabel::NonReply}) {
    flat.push_back(pair(0.4, Party::CPC, 41, l));
    flat.push_back(pair(0.4, Party::CPC, 41, l));
  }
  EXPECT_FALSE(validity_report(flat).monotone);

  auto bad = s;
  bad.push_back(pair(0.2, Party::CPC, 41, std::nullopt, "q-77"));
  try {
    validity_report(bad);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("q-77"), std::string::npos);
  }
}

TEST(Validity, OrderedSamplesAreMonotone) {
  oracle::Gen gen(300);
  std::vector<ScoredPair> s;
  const double means[] = {0.63, 0.55, 0.43};
  for (int k = 0; k < 3; ++k) {
    for (int i = 0; i < 300; ++i) {
      s.push_back(pair(gen.normal(means[k], 0.15), Party::CPC, 41, static_cast<ReplyLabel>(k)));
    }
  }
  const auto v = validity_report(s);
  EXPECT_TRUE(v.monotone);
  ASSERT_EQ(v.report.tests.size(), 3u);
  for (const auto& t : v.report.tests) EXPECT_TRUE(t.significant_95);
}

TEST(RankCurve, BinRanksMatchesOracle) {
  oracle::Gen gen(41);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = gen.index(1, 60);
    const std::size_t bins = gen.index(1, 8);
    std::vector<double> cos(n);
    std::vector<std::size_t> ranks(n);
    for (std::size_t i = 0; i < n; ++i) {
      cos[i] = gen.uniform(-1, 1);
      ranks[i] = gen.index(1, 5);
    }
    const auto got = bin_ranks(cos, ranks, bins);
    ASSERT_EQ(got.size(), bins);
    const double lo = *std::min_element(cos.begin(), cos.end());
    const double hi = *std::max_element(cos.begin(), cos.end());
    const double width = (hi - lo) / static_cast<double>(bins);
    std::vector<std::size_t> count(bins, 0);
    std::vector<std::size_t> top(bins, 0);
    std::vector<double> rank_sum(bins, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t b = width > 0 ? static_cast<std::size_t>((cos[i] - lo) / width) : 0;
      b = std::min(b, bins - 1);
      ++count[b];
      top[b] += ranks[i] == 1;
      rank_sum[b] += static_cast<double>(ranks[i]);
    }
    std::size_t total = 0;
    for (std::size_t b = 0; b < bins; ++b) {
      total += got[b].n;
      EXPECT_EQ(got[b].n, count[b]);
      if (count[b] == 0) {
        EXPECT_FALSE(got[b].p_correct_closest.has_value());
        continue;
      }
      EXPECT_NEAR(*got[b].p_correct_closest, static_cast<double>(top[b]) / count[b], 1e-12);
      EXPECT_NEAR(*got[b].mean_rank, rank_sum[b] / count[b], 1e-12);
    }
    EXPECT_EQ(total, n);
    EXPECT_DOUBLE_EQ(got.front().low, lo);
    EXPECT_DOUBLE_EQ(got.back().high, hi);
  }
  const std::vector<double> c = {0.1};
  const std::vector<std::size_t> r = {1, 2};
  EXPECT_THROW(bin_ranks(c, r, 2), ArgumentError);
  const std::vector<std::size_t> r1 = {1};
  EXPECT_THROW(bin_ranks(c, r1, 0), ArgumentError);
}

TEST(RankCurve, RandomEmbeddingsTopRateNearOneOverN) {
  // Monte Carlo: with random embeddings the correct candidate is closest
  // about 1/N of the time, aggregated over all bins.
  oracle::Gen gen(77);
  const std::size_t n = 20;
  std::size_t top = 0;
  std::size_t total = 0;
  std::vector<std::string> ids(n, "x");
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Embedding> a;
    std::vector<Embedding> c;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(gen.vec(6));
      c.push_back(gen.vec(6));
    }
    const auto rep = evaluate_embeddings(a, c, ids, n);
    std::vector<double> true_cos;
    std::vector<std::size_t> ranks;
    for (std::size_t i = 0; i < n; ++i) {
      true_cos.push_back(oracle::cos(a[i], c[i]));
      ranks.push_back(rep.ranks[i].rank);
    }
    for (const auto& b : bin_ranks(true_cos, ranks, 4)) {
      if (b.p_correct_closest) {
        top += static_cast<std::size_t>(std::lround(*b.p_correct_closest * static_cast<double>(b.n)));
        total += b.n;
      }
    }
  }
  EXPECT_EQ(total, 300 * n);
  EXPECT_NEAR(static_cast<double>(top) / static_cast<double>(total), 1.0 / n, 0.01);
}

TEST(RankCurve, SingleExchange) {
  const auto data = fixtures::prepare(40, 5, 2, 0.5, 0.25);
  const auto params = init_encoder(fixtures::tiny_encoder(data.vocab.size()), 3);
  const std::vector<Exchange> one = {data.split.train[0]};
  const auto curve = rank_validity_curve(params, data.vocab, one, 1);
  ASSERT_EQ(curve.question_anchor.size(), 1u);
  ASSERT_EQ(curve.answer_anchor.size(), 1u);
  EXPECT_EQ(curve.question_anchor[0].p_correct_closest, 1.0);
  EXPECT_EQ(curve.answer_anchor[0].mean_rank, 1.0);
}
