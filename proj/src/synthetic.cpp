#include "qarel/synthetic.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <string_view>

#include "qarel/error.hpp"
#include "qarel/rng.hpp"

namespace qarel {

namespace {

constexpr std::string_view kConsonants = "bdfgklmnprstvz";
constexpr std::string_view kVowels = "aeiou";

std::string pseudo_word(std::size_t k, std::string_view suffix) {
  const std::size_t base = kConsonants.size() * kVowels.size();
  std::string w;
  for (int s = 0; s < 2; ++s) {
    const std::size_t syl = k % base;
    k /= base;
    w += kConsonants[syl / kVowels.size()];
    w += kVowels[syl % kVowels.size()];
  }
  if (k > 0) w += std::to_string(k);
  w += suffix;
  return w;
}

constexpr std::array<std::string_view, 40> kQuestionFiller = {
    "will",     "the",      "minister", "explain",  "why",      "government", "has",
    "failed",   "to",       "act",      "on",       "this",     "file",       "can",
    "prime",    "tell",     "house",    "when",     "families", "expect",     "answers",
    "about",    "its",      "promise",  "does",     "member",   "opposite",   "really",
    "believe",  "people",   "who",      "pay",      "for",      "what",       "plan",
    "mister",   "speaker",  "again",    "today",    "how"};

constexpr std::array<std::string_view, 40> kAnswerFiller = {
    "we",        "are",      "proud",     "of",         "our",      "record",    "and",
    "continue",  "working",  "hard",      "canadians",  "know",     "that",      "party",
    "invested",  "in",       "strong",    "programs",   "colleague", "should",   "look",
    "at",        "results",  "measures",  "delivered",  "across",   "country",   "every",
    "single",    "day",      "let",       "me",         "be",       "clear",     "remain",
    "committed", "support",  "communities", "all",      "year"};

constexpr std::array<Party, 4> kParties = {Party::BQ, Party::CPC, Party::LPC, Party::NDP};
constexpr std::array<Role, 3> kRoles = {Role::Opposition, Role::GovernmentBackbench, Role::Independent};

template <std::size_t N>
std::string sentence(const std::array<std::string_view, N>& pool, std::size_t filler,
                     const std::vector<std::string>& planted, char end, Rng& rng) {
  std::vector<std::string> words;
  for (std::size_t i = 0; i < filler; ++i) words.emplace_back(pool[rng.below(N)]);
  for (const auto& p : planted) {
    const std::size_t at = rng.below(words.size() + 1);
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), p);
  }
  std::string s;
  for (const auto& w : words) {
    if (!s.empty()) s += ' ';
    s += w;
  }
  if (!s.empty() && s[0] >= 'a' && s[0] <= 'z') s[0] = static_cast<char>(s[0] - 'a' + 'A');
  s += end;
  return s;
}

std::size_t other_than(std::size_t avoid, std::size_t n, Rng& rng) {
  const std::size_t k = rng.below(n - 1);
  return k >= avoid ? k + 1 : k;
}

}  // namespace

std::string synthetic_topic_word(std::size_t k) { return pseudo_word(k, "on"); }

std::vector<Exchange> make_synthetic(std::size_t n_pairs, std::size_t n_topics, std::uint64_t seed,
                                     const SyntheticOptions& options) {
  if (n_topics < 2) throw ArgumentError("make_synthetic: n_topics must be >= 2");
  if (n_pairs < n_topics) throw ArgumentError("make_synthetic: n_pairs must be >= n_topics");
  if (options.n_details < 2) throw ArgumentError("make_synthetic: n_details must be >= 2");
  const double fn = options.non_reply_fraction;
  const double fi = options.intermediate_fraction;
  if (!(fn >= 0.0) || !(fi >= 0.0) || fn + fi > 1.0) {
    throw ArgumentError("make_synthetic: reply fractions must be non-negative and sum to at most 1");
  }
  const auto n_non = static_cast<std::size_t>(std::floor(fn * static_cast<double>(n_pairs) + 1e-9));
  const auto n_mid = static_cast<std::size_t>(std::floor(fi * static_cast<double>(n_pairs) + 1e-9));

  Rng label_rng(derive_seed(seed, 1));
  std::vector<std::size_t> order(n_pairs);
  std::iota(order.begin(), order.end(), 0);
  label_rng.shuffle(std::span(order));
  std::vector<ReplyLabel> labels(n_pairs, ReplyLabel::FullReply);
  for (std::size_t k = 0; k < n_non; ++k) labels[order[k]] = ReplyLabel::NonReply;
  for (std::size_t k = n_non; k < n_non + n_mid; ++k) labels[order[k]] = ReplyLabel::IntermediateReply;

  Rng rng(derive_seed(seed, 2));
  const std::chrono::sys_days first{std::chrono::year{2006} / 4 / 3};
  std::vector<Exchange> out;
  out.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const std::size_t topic = i % n_topics;
    const std::size_t detail = rng.below(options.n_details);
    std::size_t a_topic = topic;
    std::size_t a_detail = detail;
    if (labels[i] == ReplyLabel::NonReply) {
      a_topic = other_than(topic, n_topics, rng);
      a_detail = other_than(detail, options.n_details, rng);
    } else if (labels[i] == ReplyLabel::IntermediateReply) {
      a_detail = other_than(detail, options.n_details, rng);
    }
    const std::vector<std::string> q_planted = {synthetic_topic_word(topic), pseudo_word(detail, "ix")};
    const std::vector<std::string> a_planted = {synthetic_topic_word(a_topic), pseudo_word(a_detail, "ix")};

    Exchange e;
    char id[32];
    std::snprintf(id, sizeof id, "syn-%06zu", i + 1);
    e.id = id;
    e.question_text = sentence(kQuestionFiller, options.filler_per_side, q_planted, '?', rng);
    e.answer_text = options.symmetric
                        ? sentence(kQuestionFiller, options.filler_per_side, a_planted, '?', rng)
                        : sentence(kAnswerFiller, options.filler_per_side, a_planted, '.', rng);
    e.asker_party = kParties[i % kParties.size()];
    e.asker_role = kRoles[i % kRoles.size()];
    e.legislature = 39 + static_cast<int>(i % 5);
    e.date = std::chrono::year_month_day{first + std::chrono::days{static_cast<int>(i)}};
    e.label = labels[i];
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace qarel
