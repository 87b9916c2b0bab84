#pragma once

// Planted synthetic question/answer corpora for tests and demos.
//
// Pair i belongs to topic i % n_topics. A full reply shares the question's
// topic word and detail word; an intermediate reply shares only the topic; a
// non-reply is written about a different topic. Everything else is filler.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "qarel/corpus.hpp"

namespace qarel {

struct SyntheticOptions {
  double non_reply_fraction = 0.0;
  double intermediate_fraction = 0.0;
  /// Questions and answers drawn from the same filler pool and phrasing.
  bool symmetric = false;
  std::size_t filler_per_side = 8;
  std::size_t n_details = 40;
};

/// Non and intermediate counts are floor(fraction * n_pairs), assigned to a
/// seeded random subset. Metadata is round-robin: party over BQ, CPC, LPC,
/// NDP; role over the three roles; legislature 39..43.
/// Throws ArgumentError unless n_pairs >= n_topics >= 2 and the fractions
/// are non-negative with sum <= 1.
std::vector<Exchange> make_synthetic(std::size_t n_pairs, std::size_t n_topics, std::uint64_t seed,
                                     const SyntheticOptions& options = {});

/// The pseudo-word used for topic k (stable across seeds).
std::string synthetic_topic_word(std::size_t k);

}  // namespace qarel
