#pragma once

// Multiple-negatives ranking objective and the fine-tuning loop.
//
// For a batch of K anchor embeddings x_i and candidate embeddings y_j,
//   P(j | i) = exp(a cos(x_i, y_j)) / sum_k exp(a cos(x_i, y_k))
//   J        = -(1/K) sum_i log P(i | i)
// The other K - 1 candidates of each row act as negatives.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qarel/corpus.hpp"
#include "qarel/encoder.hpp"
#include "qarel/scoring.hpp"
#include "qarel/tensor.hpp"

namespace qarel {

struct TrainConfig {
  double alpha = 20.0;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  Anchor anchor = Anchor::Question;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::optional<std::filesystem::path> init_checkpoint;

  /// Throws ArgumentError: alpha > 0, batch_size >= 2, epochs >= 1,
  /// learning_rate >= 0, betas in [0, 1), epsilon > 0.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Flat "key = value" text; '#' starts a comment. Keys are exactly the
/// TrainConfig field names; absent keys keep their defaults, unknown keys and
/// malformed values raise DataError.
TrainConfig parse_train_config(std::istream& in);
TrainConfig load_train_config(const std::filesystem::path& path);
/// Writes every field (defaults materialised); parse_train_config reads it back.
void write_train_config(std::ostream& out, const TrainConfig& cfg);

/// Grid files hold TrainConfig blocks separated by lines consisting of "---".
std::vector<TrainConfig> parse_grid(std::istream& in);
std::vector<TrainConfig> load_grid(const std::filesystem::path& path);

/// K x K row-stochastic matrix of softmax(alpha * cosine) on the active graph.
/// `anchors` and `candidates` are K x d. Zero-norm rows raise NumericError.
Var batch_probabilities(Var anchors, Var candidates, double alpha);

/// Scalar -(1/K) sum_i log P(i | i), computed through a row log-softmax.
Var mnr_loss(Var anchors, Var candidates, double alpha);

/// Value-level conveniences over plain embeddings.
Tensor batch_probabilities(std::span<const Embedding> anchors, std::span<const Embedding> candidates,
                           double alpha);
double mnr_loss(std::span<const Embedding> anchors, std::span<const Embedding> candidates,
                double alpha);

struct EpochStats {
  std::size_t epoch = 0;  ///< 1-based
  double mean_loss = 0.0;
  double val_mrr = 0.0;

  bool operator==(const EpochStats&) const = default;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val_mrr = 0.0;
  double wall_seconds = 0.0;

  /// Everything except wall-clock time.
  bool same_results(const TrainReport& other) const {
    return epochs == other.epochs && best_epoch == other.best_epoch &&
           best_val_mrr == other.best_val_mrr;
  }
};

/// epoch,mean_loss,val_mrr rows plus a "# best_epoch=..." summary line.
/// Wall-clock time is deliberately not part of this file.
void write_train_report_csv(std::ostream& out, const TrainReport& report);

struct TrainOptions {
  std::size_t workers = 1;      ///< validation scoring threads
  std::ostream* log = nullptr;  ///< per-epoch progress lines
};

struct TrainResult {
  EncoderParams params;  ///< from the epoch with the highest validation MRR
  TrainReport report;
};

/// Initialises from cfg.init_checkpoint when set (its config and vocabulary
/// must match), else init_encoder(enc_config, cfg.seed). Each epoch shuffles
/// the training pairs, takes consecutive batches of K (a short final batch is
/// dropped), applies one Adam step per batch, then scores validation MRR with
/// cutoff 10. Ties between epochs keep the earlier epoch.
TrainResult train(const CorpusSplit& split, const Vocabulary& vocab, const EncoderConfig& enc_config,
                  const TrainConfig& cfg, const TrainOptions& options = {});

struct GridResult {
  std::size_t best_index = 0;
  TrainConfig best;
  std::vector<std::pair<TrainConfig, double>> results;  ///< (config, best validation MRR)
};

/// Trains every configuration; the highest validation MRR wins, earliest on ties.
GridResult grid_search(const CorpusSplit& split, const Vocabulary& vocab,
                       const EncoderConfig& enc_config, std::span<const TrainConfig> grid,
                       const TrainOptions& options = {});

}  // namespace qarel
