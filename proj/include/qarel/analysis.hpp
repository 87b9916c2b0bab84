#pragma once

// Statistics over cosine scores: null distribution, summaries, group means
// with Welch tests, the validity report, correlation and rank-validity curves.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qarel/corpus.hpp"
#include "qarel/encoder.hpp"
#include "qarel/rng.hpp"
#include "qarel/scoring.hpp"

namespace qarel {

inline constexpr std::size_t kDefaultNullRounds = 10;

/// Uniform permutation without fixed points, by rejection. n >= 2.
std::vector<std::size_t> random_derangement(std::size_t n, Rng& rng);

struct NullDistribution {
  std::vector<std::vector<std::size_t>> matchings;  ///< per round: question i gets answer matchings[r][i]
  std::vector<double> cosines;                       ///< round-major, n_rounds * N values
};

/// Round r uses Rng(derive_seed(seed, r)), so rounds may run on any worker.
NullDistribution null_distribution(std::span<const Embedding> questions,
                                   std::span<const Embedding> answers, std::size_t n_rounds,
                                   std::uint64_t seed, std::size_t workers = 1);
NullDistribution null_distribution(const EncoderParams& params, const Vocabulary& vocab,
                                   const std::vector<Exchange>& exchanges, std::size_t n_rounds,
                                   std::uint64_t seed, std::size_t workers = 1);

double sample_mean(std::span<const double> xs);
/// n - 1 denominator; n >= 2.
double sample_std(std::span<const double> xs);
/// Adjusted Fisher-Pearson coefficient G1. n >= 3; zero variance is a NumericError.
double skewness(std::span<const double> xs);

struct Summary {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
  std::optional<double> skewness;  ///< absent for n < 3 or zero variance
  double min = 0.0;
  double max = 0.0;
};

/// n >= 2, else ArgumentError.
Summary summary_stats(std::span<const double> xs);

/// Sample Pearson correlation. Equal lengths >= 3, neither side constant.
double pearson(std::span<const double> a, std::span<const double> b);

/// I_x(a, b) by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
/// P(|T| >= |t|) for Student's t with df degrees of freedom.
double student_t_two_sided_p(double t, double df);

struct WelchResult {
  double mean_diff = 0.0;  ///< mean(a) - mean(b)
  double t_statistic = 0.0;
  double df = 0.0;
  double p_value = 1.0;
};

/// Welch's unequal-variance t-test, two-sided. Both samples need n >= 2.
WelchResult welch_test(std::span<const double> a, std::span<const double> b);

enum class GroupField { Party, Role, Legislature, Label };

/// Parses "party,legislature" style lists.
std::vector<GroupField> parse_group_fields(std::string_view spec);

struct GroupStats {
  std::string group_key;  ///< field values joined by '|', e.g. "CPC|41"
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> std;  ///< absent when n < 2
  std::optional<double> ci95_low;
  std::optional<double> ci95_high;
};

struct PairwiseTest {
  std::string group_a;
  std::string group_b;
  double mean_diff = 0.0;
  std::optional<WelchResult> welch;  ///< absent when either group has n < 2
  bool significant_95 = false;       ///< p_value < 0.05
};

struct GroupReport {
  std::vector<GroupStats> groups;  ///< ordered by field values
  std::vector<PairwiseTest> tests;  ///< every pair i < j in group order
};

/// Unlabeled pairs form their own "none" group when grouping by label.
GroupReport group_means(std::span<const ScoredPair> scored, std::span<const GroupField> fields);

struct ValidityReport {
  GroupReport report;  ///< categories in the order Full, Intermediate, Non (absent ones skipped)
  bool monotone = false;  ///< means strictly decreasing over the present categories
};

/// Throws DataError naming the first unlabeled exchange.
ValidityReport validity_report(std::span<const ScoredPair> scored);

void write_groups_csv(std::ostream& out, const GroupReport& report);
void write_tests_csv(std::ostream& out, const GroupReport& report);

struct CurveBin {
  double low = 0.0;
  double high = 0.0;
  std::size_t n = 0;
  std::optional<double> p_correct_closest;
  std::optional<double> mean_rank;
};

/// Equal-width bins over [min, max] of the true-pair cosines; the top edge
/// belongs to the last bin. Ranks are untruncated.
std::vector<CurveBin> bin_ranks(std::span<const double> true_cosines,
                                std::span<const std::size_t> ranks, std::size_t n_bins);

struct RankValidityCurve {
  std::vector<CurveBin> question_anchor;
  std::vector<CurveBin> answer_anchor;
};

RankValidityCurve rank_validity_curve(const EncoderParams& params, const Vocabulary& vocab,
                                      const std::vector<Exchange>& eval_set, std::size_t n_bins,
                                      std::size_t workers = 1);

}  // namespace qarel
