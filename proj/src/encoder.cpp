#include "qarel/encoder.hpp"

#include <cmath>
#include <sstream>

#include "qarel/error.hpp"
#include "qarel/parallel.hpp"
#include "qarel/rng.hpp"

namespace qarel {

void EncoderConfig::validate() const {
  if (vocab_size == 0 || model_dim == 0 || num_layers == 0 || num_heads == 0 || ff_dim == 0 ||
      max_sequence_length == 0) {
    throw ArgumentError("encoder config: every dimension must be positive");
  }
  if (model_dim % num_heads != 0) {
    throw ArgumentError("encoder config: model_dim " + std::to_string(model_dim) +
                        " is not divisible by num_heads " + std::to_string(num_heads));
  }
}

std::vector<Tensor*> EncoderParams::tensors() {
  std::vector<Tensor*> out;
  for_each([&](const std::string&, Tensor& t) { out.push_back(&t); });
  return out;
}

void EncoderParams::zero_grad() {
  for_each([](const std::string&, Tensor& t) { t.zero_grad(); });
}

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

bool EncoderParams::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Tensor& t) { ok = ok && t.all_finite(); });
  return ok;
}

bool EncoderParams::same_values(const EncoderParams& other) const {
  if (!(config == other.config)) return false;
  std::vector<const Tensor*> mine;
  std::vector<const Tensor*> theirs;
  for_each([&](const std::string&, const Tensor& t) { mine.push_back(&t); });
  other.for_each([&](const std::string&, const Tensor& t) { theirs.push_back(&t); });
  if (mine.size() != theirs.size()) return false;
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i]->shape != theirs[i]->shape || mine[i]->data != theirs[i]->data) return false;
  }
  return true;
}

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t d = config.model_dim;
  const std::size_t ff = config.ff_dim;

  EncoderParams p;
  p.config = config;
  p.token_embeddings = Tensor(Shape{config.vocab_size, d});
  p.positional_embeddings = Tensor(Shape{config.max_sequence_length, d});
  p.layers.resize(config.num_layers);
  for (auto& L : p.layers) {
    L.query = L.key = L.value = L.output = Tensor(Shape{d, d});
    L.ff_in = Tensor(Shape{d, ff});
    L.ff_in_bias = Tensor(Shape{ff});
    L.ff_out = Tensor(Shape{ff, d});
    L.ff_out_bias = L.norm1_bias = L.norm2_bias = Tensor(Shape{d});
    L.norm1_gain = L.norm2_gain = Tensor(Shape{d}, 1.0);
  }

  std::uint64_t stream = 0;
  p.for_each([&](const std::string& name, Tensor& t) {
    const std::uint64_t s = derive_seed(seed, stream++);
    if (name.ends_with("_gain") || name.ends_with("_bias")) return;
    t = seeded_init(t.shape, InitScheme::UniformScaled, s);
  });
  return p;
}

namespace {

template <typename Bind>
BoundEncoder bind_with(const EncoderParams& params, Bind&& bind) {
  BoundEncoder b;
  b.config = &params.config;
  b.token_embeddings = bind(params.token_embeddings);
  b.positional_embeddings = bind(params.positional_embeddings);
  for (const auto& L : params.layers) {
    b.layers.push_back({bind(L.query), bind(L.key), bind(L.value), bind(L.output), bind(L.ff_in),
                        bind(L.ff_in_bias), bind(L.ff_out), bind(L.ff_out_bias),
                        bind(L.norm1_gain), bind(L.norm1_bias), bind(L.norm2_gain),
                        bind(L.norm2_bias)});
  }
  return b;
}

void check_sequence(const EncoderConfig& config, std::span<const int> ids) {
  if (ids.empty()) throw DataError("encode: empty token sequence");
  if (ids.size() > config.max_sequence_length) {
    throw DataError("encode: sequence of " + std::to_string(ids.size()) +
                    " positions exceeds max_sequence_length " +
                    std::to_string(config.max_sequence_length));
  }
  for (int id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
      throw DataError("encode: token id " + std::to_string(id) + " out of range for vocabulary of " +
                      std::to_string(config.vocab_size));
    }
  }
}

void check_token_sequence(const TokenSequence& seq) {
  if (seq.length < 1 || seq.length > seq.ids.size()) {
    throw DataError("encode: token sequence length " + std::to_string(seq.length) +
                    " inconsistent with " + std::to_string(seq.ids.size()) + " ids");
  }
}

}  // namespace

BoundEncoder bind_trainable(Graph& g, EncoderParams& params) {
  return bind_with(params, [&g](const Tensor& t) { return g.parameter(const_cast<Tensor&>(t)); });
}

BoundEncoder bind_frozen(Graph& g, const EncoderParams& params) {
  return bind_with(params, [&g](const Tensor& t) { return g.constant(t); });
}

Var encode_on_graph(const BoundEncoder& enc, std::span<const int> ids,
                    std::span<const double> mask) {
  const EncoderConfig& cfg = *enc.config;
  check_sequence(cfg, ids);
  if (mask.size() != ids.size()) throw DataError("encode: mask length differs from sequence length");

  std::vector<int> positions(ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i);

  using namespace ops;
  Var x = add(lookup_rows(enc.token_embeddings, ids), lookup_rows(enc.positional_embeddings, positions));

  const std::size_t heads = cfg.num_heads;
  const std::size_t dh = cfg.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& L : enc.layers) {
    Var q = matmul(x, L.query);
    Var k = matmul(x, L.key);
    Var v = matmul(x, L.value);
    std::vector<Var> head_out;
    head_out.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      Var qh = slice_cols(q, h * dh, dh);
      Var kh = slice_cols(k, h * dh, dh);
      Var vh = slice_cols(v, h * dh, dh);
      Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dh);
      head_out.push_back(matmul(row_softmax(scores, mask), vh));
    }
    Var attn = matmul(heads == 1 ? head_out[0] : concat_cols(head_out), L.output);
    Var x1 = layer_norm(add(x, attn), L.norm1_gain, L.norm1_bias);
    Var hidden = gelu(add_row(matmul(x1, L.ff_in), L.ff_in_bias));
    Var ff = add_row(matmul(hidden, L.ff_out), L.ff_out_bias);
    x = layer_norm(add(x1, ff), L.norm2_gain, L.norm2_bias);
  }
  return mean_rows_masked(x, mask);
}

Embedding encode(const EncoderParams& params, const TokenSequence& seq) {
  check_token_sequence(seq);
  Graph g;
  const BoundEncoder enc = bind_frozen(g, params);
  const std::vector<double> mask(seq.length, 1.0);
  const Var out = encode_on_graph(enc, std::span(seq.ids).first(seq.length), mask);
  return out.value().data;
}

Embedding encode_masked(const EncoderParams& params, const TokenSequence& seq) {
  check_token_sequence(seq);
  Graph g;
  const BoundEncoder enc = bind_frozen(g, params);
  std::vector<double> mask(seq.ids.size(), 0.0);
  for (std::size_t i = 0; i < seq.length; ++i) mask[i] = 1.0;
  const Var out = encode_on_graph(enc, seq.ids, mask);
  return out.value().data;
}

std::vector<Embedding> encode_batch(const EncoderParams& params,
                                    const std::vector<TokenSequence>& seqs, std::size_t workers) {
  std::vector<Embedding> out(seqs.size());
  parallel_for(seqs.size(), workers, [&](std::size_t i) { out[i] = encode(params, seqs[i]); });
  return out;
}

std::vector<Embedding> embed_texts(const EncoderParams& params, const Vocabulary& vocab,
                                   const std::vector<std::string>& texts, std::size_t workers) {
  std::vector<Embedding> out(texts.size());
  parallel_for(texts.size(), workers, [&](std::size_t i) {
    out[i] = encode(params, encode_text(texts[i], vocab, params.config.max_sequence_length));
  });
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

Checkpoint encoder_checkpoint(const EncoderParams& params, const Vocabulary& vocab) {
  const auto& c = params.config;
  if (vocab.size() != c.vocab_size) {
    throw ArgumentError("encoder checkpoint: vocabulary size " + std::to_string(vocab.size()) +
                        " differs from model vocab_size " + std::to_string(c.vocab_size));
  }
  Checkpoint ckpt;
  ckpt.metadata["format"] = "qarel-encoder";
  ckpt.metadata["config.vocab_size"] = std::to_string(c.vocab_size);
  ckpt.metadata["config.model_dim"] = std::to_string(c.model_dim);
  ckpt.metadata["config.num_layers"] = std::to_string(c.num_layers);
  ckpt.metadata["config.num_heads"] = std::to_string(c.num_heads);
  ckpt.metadata["config.ff_dim"] = std::to_string(c.ff_dim);
  ckpt.metadata["config.max_sequence_length"] = std::to_string(c.max_sequence_length);
  std::ostringstream vs;
  vocab.save(vs);
  ckpt.metadata["vocab"] = vs.str();
  params.for_each([&](const std::string& name, const Tensor& t) {
    ckpt.tensors.emplace_back(name, Tensor(t.shape, t.data));
  });
  return ckpt;
}

std::pair<EncoderParams, Vocabulary> encoder_from_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.meta("format") != "qarel-encoder") {
    throw DataError("checkpoint: not an encoder checkpoint");
  }
  auto number = [&](const char* key) -> std::size_t {
    const std::string& s = ckpt.meta(key);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || s.empty()) throw DataError(std::string("checkpoint: bad value for ") + key);
    return static_cast<std::size_t>(v);
  };
  EncoderConfig cfg;
  cfg.vocab_size = number("config.vocab_size");
  cfg.model_dim = number("config.model_dim");
  cfg.num_layers = number("config.num_layers");
  cfg.num_heads = number("config.num_heads");
  cfg.ff_dim = number("config.ff_dim");
  cfg.max_sequence_length = number("config.max_sequence_length");
  try {
    cfg.validate();
  } catch (const ArgumentError& err) {
    throw DataError(std::string("checkpoint: ") + err.what());
  }

  std::istringstream vs(ckpt.meta("vocab"));
  Vocabulary vocab = Vocabulary::load(vs);
  if (vocab.size() != cfg.vocab_size) {
    throw DataError("checkpoint: vocabulary size disagrees with config");
  }

  EncoderParams params = init_encoder(cfg, 0);
  params.for_each([&](const std::string& name, Tensor& t) {
    const Tensor& stored = ckpt.tensor(name);
    if (stored.shape != t.shape) {
      throw DataError("checkpoint: tensor \"" + name + "\" has shape " + shape_string(stored.shape) +
                      ", expected " + shape_string(t.shape));
    }
    if (!stored.all_finite()) throw DataError("checkpoint: tensor \"" + name + "\" is not finite");
    t.data = stored.data;
  });
  return {std::move(params), std::move(vocab)};
}

void save_encoder(const std::filesystem::path& path, const EncoderParams& params,
                  const Vocabulary& vocab) {
  save_checkpoint(encoder_checkpoint(params, vocab), path);
}

std::pair<EncoderParams, Vocabulary> load_encoder(const std::filesystem::path& path) {
  return encoder_from_checkpoint(load_checkpoint(path));
}

}  // namespace qarel
