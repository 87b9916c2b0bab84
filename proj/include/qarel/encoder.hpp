#pragma once

// Shared sentence encoder used for both towers of the biencoder.
//
//   E_i  = TokEmb[t_i] + PosEmb[i]
//   per layer:
//     A  = concat_h softmax(Q_h K_h^T / sqrt(d/H), key mask) V_h,  then W_o
//     X1 = layer_norm(X + A)
//     X  = layer_norm(X1 + gelu(X1 W_1 + b_1) W_2 + b_2)
//   embedding = mean of the final rows at non-pad positions
//
// Padding is excluded from attention keys and from pooling, and each row only
// depends on non-pad rows, so encode() runs over the unpadded prefix. The
// fully padded computation is available as encode_masked().

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "qarel/checkpoint.hpp"
#include "qarel/tensor.hpp"
#include "qarel/tokenizer.hpp"

namespace qarel {

struct EncoderConfig {
  std::size_t vocab_size = 0;
  std::size_t model_dim = 64;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ff_dim = 128;
  std::size_t max_sequence_length = kDefaultMaxLen;

  /// Throws ArgumentError unless every field is positive and heads divide d.
  void validate() const;
  std::size_t head_dim() const { return model_dim / num_heads; }

  bool operator==(const EncoderConfig&) const = default;
};

struct LayerParams {
  Tensor query;        // d x d
  Tensor key;          // d x d
  Tensor value;        // d x d
  Tensor output;       // d x d
  Tensor ff_in;        // d x ff
  Tensor ff_in_bias;   // ff
  Tensor ff_out;       // ff x d
  Tensor ff_out_bias;  // d
  Tensor norm1_gain;   // d
  Tensor norm1_bias;   // d
  Tensor norm2_gain;   // d
  Tensor norm2_bias;   // d
};

struct EncoderParams {
  EncoderConfig config;
  Tensor token_embeddings;       // vocab x d
  Tensor positional_embeddings;  // max_len x d
  std::vector<LayerParams> layers;

  /// Visits (name, tensor) in a fixed canonical order.
  template <typename Fn>
  void for_each(Fn&& fn) {
    fn(std::string("token_embeddings"), token_embeddings);
    fn(std::string("positional_embeddings"), positional_embeddings);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      LayerParams& L = layers[l];
      fn(p + "query", L.query);
      fn(p + "key", L.key);
      fn(p + "value", L.value);
      fn(p + "output", L.output);
      fn(p + "ff_in", L.ff_in);
      fn(p + "ff_in_bias", L.ff_in_bias);
      fn(p + "ff_out", L.ff_out);
      fn(p + "ff_out_bias", L.ff_out_bias);
      fn(p + "norm1_gain", L.norm1_gain);
      fn(p + "norm1_bias", L.norm1_bias);
      fn(p + "norm2_gain", L.norm2_gain);
      fn(p + "norm2_bias", L.norm2_bias);
    }
  }
  template <typename Fn>
  void for_each(Fn&& fn) const {
    const_cast<EncoderParams*>(this)->for_each(
        [&](const std::string& name, Tensor& t) { fn(name, static_cast<const Tensor&>(t)); });
  }

  std::vector<Tensor*> tensors();
  void zero_grad();
  std::size_t parameter_count() const;
  bool all_finite() const;
  /// Values and shapes only; gradients are ignored.
  bool same_values(const EncoderParams& other) const;
};

using Embedding = std::vector<double>;

/// Matrices ~ seeded_init(UniformScaled), biases 0, layer-norm gains 1.
/// Each tensor draws from its own stream derived from (seed, position).
EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed);

/// Parameters attached to a graph, either trainable or frozen.
struct BoundEncoder {
  struct Layer {
    Var query, key, value, output, ff_in, ff_in_bias, ff_out, ff_out_bias;
    Var norm1_gain, norm1_bias, norm2_gain, norm2_bias;
  };
  const EncoderConfig* config = nullptr;
  Var token_embeddings;
  Var positional_embeddings;
  std::vector<Layer> layers;
};

BoundEncoder bind_trainable(Graph& g, EncoderParams& params);
BoundEncoder bind_frozen(Graph& g, const EncoderParams& params);

/// Forward pass on a graph over `ids` (one row per position) with a 0/1 pad
/// mask of the same length. Returns a 1 x d embedding node.
Var encode_on_graph(const BoundEncoder& enc, std::span<const int> ids,
                    std::span<const double> mask);

/// Sentence embedding of a token sequence (non-pad prefix only).
Embedding encode(const EncoderParams& params, const TokenSequence& seq);
/// Same result computed over the full padded window with explicit masks.
Embedding encode_masked(const EncoderParams& params, const TokenSequence& seq);
/// Element i equals encode(params, seqs[i]) bit-exact for any worker count.
std::vector<Embedding> encode_batch(const EncoderParams& params,
                                    const std::vector<TokenSequence>& seqs,
                                    std::size_t workers = 1);

/// Embeds texts directly (tokenize with the model's max length, then encode).
std::vector<Embedding> embed_texts(const EncoderParams& params, const Vocabulary& vocab,
                                   const std::vector<std::string>& texts, std::size_t workers = 1);

Checkpoint encoder_checkpoint(const EncoderParams& params, const Vocabulary& vocab);
std::pair<EncoderParams, Vocabulary> encoder_from_checkpoint(const Checkpoint& ckpt);

void save_encoder(const std::filesystem::path& path, const EncoderParams& params,
                  const Vocabulary& vocab);
std::pair<EncoderParams, Vocabulary> load_encoder(const std::filesystem::path& path);

}  // namespace qarel
