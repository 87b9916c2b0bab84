#pragma once

// Cosine scoring of exchanges and retrieval metrics over frozen encoders.

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "qarel/corpus.hpp"
#include "qarel/encoder.hpp"

namespace qarel {

inline constexpr std::size_t kDefaultCutoff = 10;

/// x.y / (|x| |y|), clamped to [-1, 1]. Throws NumericError on a dimension
/// mismatch or a zero-norm argument.
double cosine(std::span<const double> x, std::span<const double> y);

struct ScoredPair {
  std::string exchange_id;
  double cosine = 0.0;
  Party party = Party::Other;
  Role role = Role::Opposition;
  int legislature = 1;
  std::optional<ReplyLabel> label;

  bool operator==(const ScoredPair&) const = default;
};

/// One ScoredPair per exchange, cosine(encode(question), encode(answer)), in
/// input order.
std::vector<ScoredPair> score_corpus(const EncoderParams& params, const Vocabulary& vocab,
                                     const std::vector<Exchange>& exchanges,
                                     std::size_t workers = 1);

/// Writes scores.csv: id,cosine,party,role,legislature,label (6-decimal cosines).
void write_scores_csv(const std::vector<ScoredPair>& scores, const std::filesystem::path& path);
std::vector<ScoredPair> read_scores_csv(const std::filesystem::path& path);

enum class Anchor { Question, Answer };

struct RankResult {
  std::string exchange_id;
  std::size_t rank = 1;
  double reciprocal_rank = 1.0;  ///< 0 when rank > cutoff
};

/// Pessimistic ties: rank = 1 + #{j != correct : cos_j >= cos_correct}.
RankResult rank_correct(std::span<const double> anchor, std::span<const Embedding> candidates,
                        std::size_t correct_index, std::size_t cutoff = kDefaultCutoff);

/// Mean of the reciprocal ranks; throws ArgumentError on an empty list.
double mrr(std::span<const RankResult> ranks);

struct RetrievalReport {
  double mrr = 0.0;
  std::vector<RankResult> ranks;
  std::map<std::size_t, double> hit_rate_at;  ///< k -> fraction with rank <= k, k in {1, 5, 10}
};

/// Ranks candidates[i] for anchors[i] against the whole candidate pool.
RetrievalReport evaluate_embeddings(std::span<const Embedding> anchors,
                                    std::span<const Embedding> candidates,
                                    std::span<const std::string> ids,
                                    std::size_t cutoff = kDefaultCutoff, std::size_t workers = 1);

/// Embeds both sides of eval_set and ranks each exchange's counterpart among
/// all counterparts in the set. Anchor::Question queries with questions.
RetrievalReport evaluate_retrieval(const EncoderParams& params, const Vocabulary& vocab,
                                   const std::vector<Exchange>& eval_set, Anchor anchor,
                                   std::size_t cutoff = kDefaultCutoff, std::size_t workers = 1);

}  // namespace qarel
