#include "qarel/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "qarel/csv.hpp"
#include "qarel/error.hpp"
#include "qarel/parallel.hpp"

namespace qarel {

double cosine(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) {
    throw NumericError("cosine: dimension mismatch " + std::to_string(x.size()) + " vs " +
                       std::to_string(y.size()));
  }
  double dot = 0.0;
  double xx = 0.0;
  double yy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    xx += x[i] * x[i];
    yy += y[i] * y[i];
  }
  if (!(xx > 0.0) || !(yy > 0.0)) throw NumericError("cosine: zero-norm vector");
  const double c = dot / (std::sqrt(xx) * std::sqrt(yy));
  if (!std::isfinite(c)) throw NumericError("cosine: non-finite result");
  return std::clamp(c, -1.0, 1.0);
}

std::vector<ScoredPair> score_corpus(const EncoderParams& params, const Vocabulary& vocab,
                                     const std::vector<Exchange>& exchanges, std::size_t workers) {
  std::vector<ScoredPair> out(exchanges.size());
  const std::size_t max_len = params.config.max_sequence_length;
  parallel_for(exchanges.size(), workers, [&](std::size_t i) {
    const Exchange& e = exchanges[i];
    const auto q = encode(params, encode_text(e.question_text, vocab, max_len));
    const auto a = encode(params, encode_text(e.answer_text, vocab, max_len));
    out[i] = ScoredPair{e.id, cosine(q, a), e.asker_party, e.asker_role, e.legislature, e.label};
  });
  return out;
}

void write_scores_csv(const std::vector<ScoredPair>& scores, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  csv::write_row(out, {"id", "cosine", "party", "role", "legislature", "label"});
  for (const auto& s : scores) {
    csv::write_row(out, {s.exchange_id, csv::fixed6(s.cosine), std::string(to_string(s.party)),
                         std::string(to_string(s.role)), std::to_string(s.legislature),
                         s.label ? std::string(to_string(*s.label)) : std::string()});
  }
  if (!out) throw DataError("write failure on " + path.string());
}

std::vector<ScoredPair> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  const auto rows = csv::read_all(in);
  if (rows.empty()) throw DataError(path.string() + ": missing header row");
  const auto& h = rows[0];
  const std::size_t c_id = csv::column(h, "id");
  const std::size_t c_cos = csv::column(h, "cosine");
  const std::size_t c_party = csv::column(h, "party");
  const std::size_t c_role = csv::column(h, "role");
  const std::size_t c_leg = csv::column(h, "legislature");
  const std::size_t c_label = csv::column(h, "label");

  std::vector<ScoredPair> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = path.string() + ": row " + std::to_string(r + 1);
    if (row.size() != h.size()) throw DataError(where + ": expected " + std::to_string(h.size()) + " fields");
    ScoredPair s;
    s.exchange_id = row[c_id];
    try {
      std::size_t used = 0;
      s.cosine = std::stod(row[c_cos], &used);
      if (used != row[c_cos].size()) throw std::invalid_argument("trailing");
      s.legislature = std::stoi(row[c_leg], &used);
      if (used != row[c_leg].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw DataError(where + ": malformed number");
    }
    auto party = parse_party(row[c_party]);
    auto role = parse_role(row[c_role]);
    if (!party) throw DataError(where + ": unknown party \"" + row[c_party] + "\"");
    if (!role) throw DataError(where + ": unknown role \"" + row[c_role] + "\"");
    s.party = *party;
    s.role = *role;
    if (!row[c_label].empty()) {
      auto label = parse_label(row[c_label]);
      if (!label) throw DataError(where + ": unknown label \"" + row[c_label] + "\"");
      s.label = *label;
    }
    out.push_back(std::move(s));
  }
  return out;
}

RankResult rank_correct(std::span<const double> anchor, std::span<const Embedding> candidates,
                        std::size_t correct_index, std::size_t cutoff) {
  if (correct_index >= candidates.size()) {
    throw ArgumentError("rank_correct: correct index " + std::to_string(correct_index) +
                        " outside " + std::to_string(candidates.size()) + " candidates");
  }
  if (cutoff < 1) throw ArgumentError("rank_correct: cutoff must be >= 1");
  const double target = cosine(anchor, candidates[correct_index]);
  std::size_t rank = 1;
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    if (j == correct_index) continue;
    if (cosine(anchor, candidates[j]) >= target) ++rank;
  }
  RankResult r;
  r.rank = rank;
  r.reciprocal_rank = rank <= cutoff ? 1.0 / static_cast<double>(rank) : 0.0;
  return r;
}

double mrr(std::span<const RankResult> ranks) {
  if (ranks.empty()) throw ArgumentError("mrr: empty rank list");
  double total = 0.0;
  for (const auto& r : ranks) total += r.reciprocal_rank;
  return total / static_cast<double>(ranks.size());
}

RetrievalReport evaluate_embeddings(std::span<const Embedding> anchors,
                                    std::span<const Embedding> candidates,
                                    std::span<const std::string> ids, std::size_t cutoff,
                                    std::size_t workers) {
  if (anchors.empty()) throw ArgumentError("evaluate_retrieval: empty evaluation set");
  if (anchors.size() != candidates.size() || (!ids.empty() && ids.size() != anchors.size())) {
    throw ArgumentError("evaluate_retrieval: anchors, candidates and ids differ in length");
  }
  RetrievalReport report;
  report.ranks.resize(anchors.size());
  parallel_for(anchors.size(), workers, [&](std::size_t i) {
    report.ranks[i] = rank_correct(anchors[i], candidates, i, cutoff);
    if (!ids.empty()) report.ranks[i].exchange_id = ids[i];
  });
  report.mrr = mrr(report.ranks);
  for (std::size_t k : {1, 5, 10}) {
    const auto hits = std::count_if(report.ranks.begin(), report.ranks.end(),
                                    [k](const RankResult& r) { return r.rank <= k; });
    report.hit_rate_at[k] = static_cast<double>(hits) / static_cast<double>(report.ranks.size());
  }
  return report;
}

RetrievalReport evaluate_retrieval(const EncoderParams& params, const Vocabulary& vocab,
                                   const std::vector<Exchange>& eval_set, Anchor anchor,
                                   std::size_t cutoff, std::size_t workers) {
  if (eval_set.empty()) throw ArgumentError("evaluate_retrieval: empty evaluation set");
  std::vector<std::string> questions;
  std::vector<std::string> answers;
  std::vector<std::string> ids;
  for (const auto& e : eval_set) {
    questions.push_back(e.question_text);
    answers.push_back(e.answer_text);
    ids.push_back(e.id);
  }
  const auto q = embed_texts(params, vocab, questions, workers);
  const auto a = embed_texts(params, vocab, answers, workers);
  return anchor == Anchor::Question ? evaluate_embeddings(q, a, ids, cutoff, workers)
                                    : evaluate_embeddings(a, q, ids, cutoff, workers);
}

}  // namespace qarel
