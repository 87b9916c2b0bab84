#include "qarel/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <tuple>

#include "qarel/csv.hpp"
#include "qarel/error.hpp"
#include "qarel/parallel.hpp"

namespace qarel {

// ---------------------------------------------------------------------------
// Null distribution

std::vector<std::size_t> random_derangement(std::size_t n, Rng& rng) {
  if (n < 2) throw ArgumentError("derangement needs at least 2 elements");
  std::vector<std::size_t> p(n);
  for (;;) {
    std::iota(p.begin(), p.end(), 0);
    rng.shuffle(std::span(p));
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) ok = p[i] != i;
    if (ok) return p;
  }
}

NullDistribution null_distribution(std::span<const Embedding> questions,
                                   std::span<const Embedding> answers, std::size_t n_rounds,
                                   std::uint64_t seed, std::size_t workers) {
  if (questions.size() != answers.size()) throw ArgumentError("null_distribution: side sizes differ");
  if (questions.size() < 2) throw ArgumentError("null_distribution: needs at least 2 exchanges");
  if (n_rounds < 1) throw ArgumentError("null_distribution: n_rounds must be >= 1");
  const std::size_t n = questions.size();
  NullDistribution out;
  out.matchings.resize(n_rounds);
  out.cosines.resize(n_rounds * n);
  parallel_for(n_rounds, workers, [&](std::size_t r) {
    Rng rng(derive_seed(seed, r));
    out.matchings[r] = random_derangement(n, rng);
    for (std::size_t i = 0; i < n; ++i) {
      out.cosines[r * n + i] = cosine(questions[i], answers[out.matchings[r][i]]);
    }
  });
  return out;
}

NullDistribution null_distribution(const EncoderParams& params, const Vocabulary& vocab,
                                   const std::vector<Exchange>& exchanges, std::size_t n_rounds,
                                   std::uint64_t seed, std::size_t workers) {
  if (exchanges.size() < 2) throw ArgumentError("null_distribution: needs at least 2 exchanges");
  std::vector<std::string> qs;
  std::vector<std::string> as;
  for (const auto& e : exchanges) {
    qs.push_back(e.question_text);
    as.push_back(e.answer_text);
  }
  const auto q = embed_texts(params, vocab, qs, workers);
  const auto a = embed_texts(params, vocab, as, workers);
  return null_distribution(q, a, n_rounds, seed, workers);
}

// ---------------------------------------------------------------------------
// Descriptive statistics

double sample_mean(std::span<const double> xs) {
  if (xs.empty()) throw ArgumentError("mean of an empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) throw ArgumentError("standard deviation needs n >= 2");
  const double m = sample_mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

double skewness(std::span<const double> xs) {
  if (xs.size() < 3) throw ArgumentError("skewness needs n >= 3");
  const double n = static_cast<double>(xs.size());
  const double m = sample_mean(xs);
  double m2 = 0.0;
  double m3 = 0.0;
  for (double x : xs) {
    const double d = x - m;
    m2 += d * d;
    m3 += d * d * d;
  }
  m2 /= n;
  m3 /= n;
  if (!(m2 > 0.0)) throw NumericError("skewness undefined for zero variance");
  const double g1 = m3 / std::pow(m2, 1.5);
  return std::sqrt(n * (n - 1.0)) / (n - 2.0) * g1;
}

Summary summary_stats(std::span<const double> xs) {
  if (xs.size() < 2) throw ArgumentError("summary_stats needs n >= 2");
  Summary s;
  s.n = xs.size();
  s.mean = sample_mean(xs);
  s.std = sample_std(xs);
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  s.min = *lo;
  s.max = *hi;
  if (xs.size() >= 3 && s.std > 0.0) s.skewness = skewness(xs);
  return s;
}

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ArgumentError("pearson: lengths differ");
  if (a.size() < 3) throw ArgumentError("pearson: needs at least 3 pairs");
  const double ma = sample_mean(a);
  const double mb = sample_mean(b);
  double sab = 0.0;
  double saa = 0.0;
  double sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (!(saa > 0.0) || !(sbb > 0.0)) throw ArgumentError("pearson: constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Student t tail via the incomplete beta function

namespace {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double step = d * c;
    h *= step;
    if (std::fabs(step - 1.0) < eps) return h;
  }
  throw NumericError("incomplete beta: continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw ArgumentError("incomplete beta: a and b must be > 0");
  if (!(x >= 0.0 && x <= 1.0)) throw ArgumentError("incomplete beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_front) * beta_continued_fraction(a, b, x) / a;
  }
  return 1.0 - std::exp(log_front) * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw ArgumentError("student t: df must be > 0");
  if (std::isnan(t)) throw NumericError("student t: NaN statistic");
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return std::clamp(regularized_incomplete_beta(df / 2.0, 0.5, x), 0.0, 1.0);
}

WelchResult welch_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw ArgumentError("welch_test: each sample needs n >= 2");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double ma = sample_mean(a);
  const double mb = sample_mean(b);
  const double sa = sample_std(a);
  const double sb = sample_std(b);
  const double va = sa * sa / na;
  const double vb = sb * sb / nb;
  WelchResult r;
  r.mean_diff = ma - mb;
  const double se2 = va + vb;
  if (!(se2 > 0.0)) {
    // Both samples constant: the difference is either exactly zero or certain.
    r.df = na + nb - 2.0;
    if (r.mean_diff == 0.0) {
      r.t_statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.t_statistic = std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
      r.p_value = 0.0;
    }
    return r;
  }
  r.t_statistic = r.mean_diff / std::sqrt(se2);
  r.df = se2 * se2 / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  r.p_value = student_t_two_sided_p(r.t_statistic, r.df);
  return r;
}

// ---------------------------------------------------------------------------
// Groups

std::vector<GroupField> parse_group_fields(std::string_view spec) {
  std::vector<GroupField> out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const auto comma = spec.find(',', pos);
    const auto part = spec.substr(pos, comma == std::string_view::npos ? spec.size() - pos : comma - pos);
    if (part == "party") {
      out.push_back(GroupField::Party);
    } else if (part == "role") {
      out.push_back(GroupField::Role);
    } else if (part == "legislature") {
      out.push_back(GroupField::Legislature);
    } else if (part == "label") {
      out.push_back(GroupField::Label);
    } else {
      throw ArgumentError("unknown group field \"" + std::string(part) +
                          "\" (expected party, role, legislature or label)");
    }
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return out;
}

namespace {

std::pair<int, std::string> field_value(const ScoredPair& s, GroupField f) {
  switch (f) {
    case GroupField::Party:
      return {static_cast<int>(s.party), std::string(to_string(s.party))};
    case GroupField::Role:
      return {static_cast<int>(s.role), std::string(to_string(s.role))};
    case GroupField::Legislature:
      return {s.legislature, std::to_string(s.legislature)};
    case GroupField::Label:
      if (!s.label) return {99, "none"};
      return {static_cast<int>(*s.label), std::string(to_string(*s.label))};
  }
  return {0, {}};
}

GroupStats describe(const std::string& key, std::span<const double> xs) {
  GroupStats g;
  g.group_key = key;
  g.n = xs.size();
  g.mean = sample_mean(xs);
  if (xs.size() >= 2) {
    const double sd = sample_std(xs);
    const double half = 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
    g.std = sd;
    g.ci95_low = g.mean - half;
    g.ci95_high = g.mean + half;
  }
  return g;
}

GroupReport report_from(const std::vector<std::pair<std::string, std::vector<double>>>& groups) {
  GroupReport r;
  for (const auto& [key, xs] : groups) r.groups.push_back(describe(key, xs));
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      PairwiseTest t;
      t.group_a = groups[i].first;
      t.group_b = groups[j].first;
      t.mean_diff = r.groups[i].mean - r.groups[j].mean;
      if (groups[i].second.size() >= 2 && groups[j].second.size() >= 2) {
        t.welch = welch_test(groups[i].second, groups[j].second);
        t.significant_95 = t.welch->p_value < 0.05;
      }
      r.tests.push_back(std::move(t));
    }
  }
  return r;
}

}  // namespace

GroupReport group_means(std::span<const ScoredPair> scored, std::span<const GroupField> fields) {
  if (fields.empty()) throw ArgumentError("group_means: no grouping fields");
  std::map<std::vector<int>, std::pair<std::string, std::vector<double>>> buckets;
  for (const auto& s : scored) {
    std::vector<int> order;
    std::string key;
    for (GroupField f : fields) {
      auto [rank, text] = field_value(s, f);
      order.push_back(rank);
      if (!key.empty()) key += '|';
      key += text;
    }
    auto& slot = buckets[order];
    slot.first = key;
    slot.second.push_back(s.cosine);
  }
  std::vector<std::pair<std::string, std::vector<double>>> groups;
  for (auto& [order, entry] : buckets) groups.push_back(std::move(entry));
  return report_from(groups);
}

ValidityReport validity_report(std::span<const ScoredPair> scored) {
  std::vector<std::pair<std::string, std::vector<double>>> groups;
  const ReplyLabel order[] = {ReplyLabel::FullReply, ReplyLabel::IntermediateReply, ReplyLabel::NonReply};
  for (const auto& s : scored) {
    if (!s.label) throw DataError("validity_report: exchange \"" + s.exchange_id + "\" has no label");
  }
  for (ReplyLabel l : order) {
    std::vector<double> xs;
    for (const auto& s : scored) {
      if (*s.label == l) xs.push_back(s.cosine);
    }
    if (!xs.empty()) groups.emplace_back(std::string(to_string(l)), std::move(xs));
  }
  ValidityReport v;
  v.report = report_from(groups);
  v.monotone = !v.report.groups.empty();
  for (std::size_t i = 1; i < v.report.groups.size(); ++i) {
    if (!(v.report.groups[i - 1].mean > v.report.groups[i].mean)) v.monotone = false;
  }
  return v;
}

namespace {

std::string opt6(const std::optional<double>& v) { return v ? csv::fixed6(*v) : std::string(); }

}  // namespace

void write_groups_csv(std::ostream& out, const GroupReport& report) {
  csv::write_row(out, {"group", "n", "mean", "std", "ci95_low", "ci95_high"});
  for (const auto& g : report.groups) {
    csv::write_row(out, {g.group_key, std::to_string(g.n), csv::fixed6(g.mean), opt6(g.std),
                         opt6(g.ci95_low), opt6(g.ci95_high)});
  }
}

void write_tests_csv(std::ostream& out, const GroupReport& report) {
  csv::write_row(out, {"group_a", "group_b", "mean_diff", "t_statistic", "df", "p_value", "significant_95"});
  for (const auto& t : report.tests) {
    if (t.welch) {
      csv::write_row(out, {t.group_a, t.group_b, csv::fixed6(t.mean_diff), csv::fixed6(t.welch->t_statistic),
                           csv::fixed6(t.welch->df), csv::fixed6(t.welch->p_value),
                           t.significant_95 ? "true" : "false"});
    } else {
      csv::write_row(out, {t.group_a, t.group_b, csv::fixed6(t.mean_diff), "", "", "", "unavailable"});
    }
  }
}

// ---------------------------------------------------------------------------
// Rank-validity curves

std::vector<CurveBin> bin_ranks(std::span<const double> true_cosines, std::span<const std::size_t> ranks,
                                std::size_t n_bins) {
  if (true_cosines.size() != ranks.size()) throw ArgumentError("bin_ranks: lengths differ");
  if (true_cosines.empty()) throw ArgumentError("bin_ranks: empty input");
  if (n_bins < 1) throw ArgumentError("bin_ranks: n_bins must be >= 1");
  const auto [lo_it, hi_it] = std::minmax_element(true_cosines.begin(), true_cosines.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const double width = (hi - lo) / static_cast<double>(n_bins);
  std::vector<CurveBin> bins(n_bins);
  std::vector<std::size_t> top(n_bins, 0);
  std::vector<double> rank_sum(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].low = lo + width * static_cast<double>(b);
    bins[b].high = b + 1 == n_bins ? hi : lo + width * static_cast<double>(b + 1);
  }
  for (std::size_t i = 0; i < true_cosines.size(); ++i) {
    std::size_t b = 0;
    if (width > 0.0) {
      b = static_cast<std::size_t>(std::floor((true_cosines[i] - lo) / width));
      b = std::min(b, n_bins - 1);
    }
    ++bins[b].n;
    if (ranks[i] == 1) ++top[b];
    rank_sum[b] += static_cast<double>(ranks[i]);
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (bins[b].n == 0) continue;
    const double n = static_cast<double>(bins[b].n);
    bins[b].p_correct_closest = static_cast<double>(top[b]) / n;
    bins[b].mean_rank = rank_sum[b] / n;
  }
  return bins;
}

RankValidityCurve rank_validity_curve(const EncoderParams& params, const Vocabulary& vocab,
                                      const std::vector<Exchange>& eval_set, std::size_t n_bins,
                                      std::size_t workers) {
  if (eval_set.empty()) throw ArgumentError("rank_validity_curve: empty evaluation set");
  if (n_bins < 1) throw ArgumentError("rank_validity_curve: n_bins must be >= 1");
  std::vector<std::string> qs;
  std::vector<std::string> as;
  for (const auto& e : eval_set) {
    qs.push_back(e.question_text);
    as.push_back(e.answer_text);
  }
  const auto q = embed_texts(params, vocab, qs, workers);
  const auto a = embed_texts(params, vocab, as, workers);
  const std::size_t n = eval_set.size();
  std::vector<double> true_cos(n);
  std::vector<std::size_t> q_rank(n);
  std::vector<std::size_t> a_rank(n);
  parallel_for(n, workers, [&](std::size_t i) {
    true_cos[i] = cosine(q[i], a[i]);
    q_rank[i] = rank_correct(q[i], a, i, n).rank;
    a_rank[i] = rank_correct(a[i], q, i, n).rank;
  });
  return RankValidityCurve{bin_ranks(true_cos, q_rank, n_bins), bin_ranks(true_cos, a_rank, n_bins)};
}

}  // namespace qarel
