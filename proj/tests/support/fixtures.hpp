#pragma once

#include <string>
#include <vector>

#include "qarel/corpus.hpp"
#include "qarel/encoder.hpp"
#include "qarel/synthetic.hpp"
#include "qarel/tokenizer.hpp"
#include "qarel/training.hpp"

namespace fixtures {

struct Prepared {
  qarel::CorpusSplit split;
  qarel::Vocabulary vocab;
  qarel::EncoderConfig encoder;
};

/// Synthetic corpus -> split -> vocabulary from the training texts only.
inline Prepared prepare(std::size_t n_pairs, std::size_t n_topics, std::uint64_t seed, double train_frac,
                        double val_frac, const qarel::SyntheticOptions& options = {}) {
  Prepared p;
  const auto ex = qarel::make_synthetic(n_pairs, n_topics, seed, options);
  p.split = qarel::split_corpus(ex, train_frac, val_frac, seed);
  std::vector<std::string> texts;
  for (const auto& e : p.split.train) {
    texts.push_back(e.question_text);
    texts.push_back(e.answer_text);
  }
  p.vocab = qarel::build_vocab(texts);
  p.encoder.vocab_size = p.vocab.size();
  return p;
}

inline qarel::EncoderConfig tiny_encoder(std::size_t vocab_size) {
  qarel::EncoderConfig c;
  c.vocab_size = vocab_size;
  c.model_dim = 16;
  c.num_layers = 1;
  c.num_heads = 2;
  c.ff_dim = 32;
  c.max_sequence_length = 32;
  return c;
}

/// Finite-difference check of the full biencoder MNR loss: d=16, L=2, H=2,
/// K=3 pairs of sequences no longer than 8 tokens, every parameter.
inline double biencoder_grad_check(std::uint64_t seed, double eps = 1e-4) {
  qarel::EncoderConfig c;
  c.vocab_size = 20;
  c.model_dim = 16;
  c.num_layers = 2;
  c.num_heads = 2;
  c.ff_dim = 24;
  c.max_sequence_length = 8;
  auto params = qarel::init_encoder(c, seed);
  const std::vector<std::vector<int>> questions = {{2, 5, 9, 3}, {4, 4, 11, 7, 2, 19}, {8, 13, 2, 6, 1, 12, 17, 3}};
  const std::vector<std::vector<int>> answers = {{3, 5, 14}, {7, 18, 11, 2, 10}, {12, 6, 16, 15, 9, 2, 4}};
  auto tensors = params.tensors();
  return qarel::grad_check(
      [&](qarel::Graph& g) {
        const auto enc = qarel::bind_trainable(g, params);
        auto embed = [&](const std::vector<std::vector<int>>& side) {
          std::vector<qarel::Var> rows;
          for (const auto& ids : side) {
            const std::vector<double> mask(ids.size(), 1.0);
            rows.push_back(qarel::encode_on_graph(enc, ids, mask));
          }
          return qarel::ops::concat_rows(rows);
        };
        return qarel::mnr_loss(embed(questions), embed(answers), 20.0);
      },
      tensors, eps);
}

}  // namespace fixtures
