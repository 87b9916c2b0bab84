#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "qarel/encoder.hpp"
#include "qarel/error.hpp"

using namespace qarel;

namespace {

EncoderConfig small_config(std::size_t vocab = 12) {
  EncoderConfig c;
  c.vocab_size = vocab;
  c.model_dim = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.ff_dim = 12;
  c.max_sequence_length = 10;
  return c;
}

TokenSequence seq(std::vector<int> ids, std::size_t max_len) {
  TokenSequence s;
  s.length = ids.size();
  s.ids = std::move(ids);
  s.ids.resize(max_len, Vocabulary::kPadId);
  return s;
}

double max_abs_diff(const Embedding& a, const Embedding& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Encoder, ConfigValidation) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate());
  c.model_dim = 16;
  c.num_heads = 3;
  EXPECT_THROW(c.validate(), ArgumentError);
  EXPECT_THROW(init_encoder(c, 1), ArgumentError);
  auto z = small_config();
  z.num_layers = 0;
  EXPECT_THROW(z.validate(), ArgumentError);
}

TEST(Encoder, InitIsDeterministicWithZeroBiases) {
  const auto a = init_encoder(small_config(), 5);
  const auto b = init_encoder(small_config(), 5);
  EXPECT_TRUE(a.same_values(b));
  EXPECT_FALSE(a.same_values(init_encoder(small_config(), 6)));
  for (const auto& L : a.layers) {
    for (const Tensor* t : {&L.ff_in_bias, &L.ff_out_bias, &L.norm1_bias, &L.norm2_bias}) {
      for (double v : t->data) EXPECT_EQ(v, 0.0);
    }
    for (double v : L.norm1_gain.data) EXPECT_EQ(v, 1.0);
  }
  EXPECT_EQ(a.token_embeddings.shape, (Shape{12, 8}));
  EXPECT_EQ(a.positional_embeddings.shape, (Shape{10, 8}));
  EXPECT_EQ(a.layers[0].ff_in.shape, (Shape{8, 12}));
}

TEST(Encoder, EncodeShapeAndDeterminism) {
  const auto p = init_encoder(small_config(), 1);
  const auto s = seq({2, 3, 4}, 10);
  const auto e = encode(p, s);
  ASSERT_EQ(e.size(), 8u);
  for (double v : e) EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(encode(p, s), e);
}

TEST(Encoder, PaddingInvariance) {
  const auto p = init_encoder(small_config(), 2);
  for (std::size_t len = 1; len <= 6; ++len) {
    std::vector<int> ids;
    for (std::size_t i = 0; i < len; ++i) ids.push_back(2 + static_cast<int>(i % 9));
    const auto short_seq = seq(ids, len);
    const auto padded = seq(ids, 10);
    const auto a = encode(p, short_seq);
    EXPECT_LE(max_abs_diff(a, encode(p, padded)), 1e-9);
    EXPECT_LE(max_abs_diff(a, encode_masked(p, padded)), 1e-9);
  }
}

TEST(Encoder, OrderSensitive) {
  const auto p = init_encoder(small_config(), 3);
  for (int probe = 0; probe < 10; ++probe) {
    const int a = 2 + probe % 5;
    const int b = 7 + probe % 4;
    EXPECT_NE(encode(p, seq({a, b, 4}, 10)), encode(p, seq({b, a, 4}, 10)));
  }
}

TEST(Encoder, BatchMatchesSingleForAnyWorkerCount) {
  const auto p = init_encoder(small_config(), 4);
  std::vector<TokenSequence> seqs;
  for (int i = 0; i < 9; ++i) seqs.push_back(seq({2 + i % 7, 3, 1 + i % 3}, 10));
  std::vector<Embedding> want;
  for (const auto& s : seqs) want.push_back(encode(p, s));
  for (std::size_t w : {1u, 2u, 4u}) EXPECT_EQ(encode_batch(p, seqs, w), want);
  EXPECT_TRUE(encode_batch(p, {}, 2).empty());
  EXPECT_EQ(encode_batch(p, {seqs[0]}), std::vector<Embedding>{want[0]});
}

TEST(Encoder, RejectsOutOfRangeIds) {
  const auto p = init_encoder(small_config(), 4);
  EXPECT_THROW(encode(p, seq({2, 99}, 10)), DataError);
  EXPECT_THROW(encode(p, seq({2, -1}, 10)), DataError);
}

TEST(Encoder, GradientMatchesFiniteDifferences) {
  auto p = init_encoder(small_config(), 8);
  const auto s = seq({2, 5, 7, 3}, 10);
  const Tensor target = seeded_init(Shape{1, 8}, InitScheme::UniformScaled, 99);
  auto tensors = p.tensors();
  const double err = grad_check(
      [&](Graph& g) {
        const auto enc = bind_trainable(g, p);
        const std::vector<double> mask(s.length, 1.0);
        Var e = encode_on_graph(enc, std::span(s.ids).first(s.length), mask);
        return ops::sum(ops::mul(ops::gelu(e), g.constant(target)));
      },
      tensors, 1e-5);
  EXPECT_LE(err, 1e-4);
}

TEST(Encoder, CheckpointRoundTrip) {
  const auto p = init_encoder(small_config(), 11);
  const Vocabulary v({"a", "b", "c", "d", "e", "f", "g", "h", "i", "j"});
  const auto path = std::filesystem::temp_directory_path() / "qarel_encoder_test.ckpt";
  save_encoder(path, p, v);
  const auto [q, w] = load_encoder(path);
  std::filesystem::remove(path);
  EXPECT_TRUE(p.same_values(q));
  EXPECT_EQ(q.config, p.config);
  EXPECT_EQ(w, v);
  EXPECT_EQ(encode(p, seq({2, 3}, 10)), encode(q, seq({2, 3}, 10)));
}
