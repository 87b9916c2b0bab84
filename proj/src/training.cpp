#include "qarel/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <sstream>

#include "qarel/error.hpp"
#include "qarel/rng.hpp"

namespace qarel {

// ---------------------------------------------------------------------------
// Configuration files

void TrainConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ArgumentError("train config: alpha must be > 0");
  if (batch_size < 2) throw ArgumentError("train config: batch_size must be >= 2");
  if (epochs < 1) throw ArgumentError("train config: epochs must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ArgumentError("train config: learning_rate must be >= 0");
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw ArgumentError("train config: adam betas must lie in [0, 1)");
  }
  if (!(adam_epsilon > 0.0)) throw ArgumentError("train config: adam_epsilon must be > 0");
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

double parse_double(const std::string& key, const std::string& v, std::size_t line) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(d)) {
    throw DataError("config line " + std::to_string(line) + ": \"" + key + "\" expects a number, got \"" +
                    v + "\"");
  }
  return d;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& v, std::size_t line) {
  std::size_t used = 0;
  unsigned long long n = 0;
  try {
    n = std::stoull(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || v[0] == '-') {
    throw DataError("config line " + std::to_string(line) + ": \"" + key +
                    "\" expects a non-negative integer, got \"" + v + "\"");
  }
  return n;
}

void apply_config_line(TrainConfig& cfg, const std::string& key, const std::string& value,
                       std::size_t line) {
  if (key == "alpha") {
    cfg.alpha = parse_double(key, value, line);
  } else if (key == "batch_size") {
    cfg.batch_size = parse_unsigned(key, value, line);
  } else if (key == "learning_rate") {
    cfg.learning_rate = parse_double(key, value, line);
  } else if (key == "epochs") {
    cfg.epochs = parse_unsigned(key, value, line);
  } else if (key == "seed") {
    cfg.seed = parse_unsigned(key, value, line);
  } else if (key == "anchor") {
    if (value == "question") {
      cfg.anchor = Anchor::Question;
    } else if (value == "answer") {
      cfg.anchor = Anchor::Answer;
    } else {
      throw DataError("config line " + std::to_string(line) +
                      ": \"anchor\" must be question or answer, got \"" + value + "\"");
    }
  } else if (key == "adam_beta1") {
    cfg.adam_beta1 = parse_double(key, value, line);
  } else if (key == "adam_beta2") {
    cfg.adam_beta2 = parse_double(key, value, line);
  } else if (key == "adam_epsilon") {
    cfg.adam_epsilon = parse_double(key, value, line);
  } else if (key == "init_checkpoint") {
    if (value.empty()) {
      cfg.init_checkpoint.reset();
    } else {
      cfg.init_checkpoint = value;
    }
  } else {
    throw DataError("config line " + std::to_string(line) + ": unknown key \"" + key + "\"");
  }
}

TrainConfig parse_config_lines(const std::vector<std::pair<std::size_t, std::string>>& lines) {
  TrainConfig cfg;
  for (const auto& [line_no, raw] : lines) {
    std::string line = raw.substr(0, raw.find('#'));
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    apply_config_line(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no);
  }
  return cfg;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig parse_train_config(std::istream& in) {
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) lines.emplace_back(++n, line);
  return parse_config_lines(lines);
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_train_config(in);
  } catch (const DataError& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

void write_train_config(std::ostream& out, const TrainConfig& cfg) {
  out << "alpha = " << exact(cfg.alpha) << '\n'
      << "batch_size = " << cfg.batch_size << '\n'
      << "learning_rate = " << exact(cfg.learning_rate) << '\n'
      << "epochs = " << cfg.epochs << '\n'
      << "seed = " << cfg.seed << '\n'
      << "anchor = " << (cfg.anchor == Anchor::Question ? "question" : "answer") << '\n'
      << "adam_beta1 = " << exact(cfg.adam_beta1) << '\n'
      << "adam_beta2 = " << exact(cfg.adam_beta2) << '\n'
      << "adam_epsilon = " << exact(cfg.adam_epsilon) << '\n'
      << "init_checkpoint = " << (cfg.init_checkpoint ? cfg.init_checkpoint->string() : "") << '\n';
}

std::vector<TrainConfig> parse_grid(std::istream& in) {
  std::vector<TrainConfig> grid;
  std::vector<std::pair<std::size_t, std::string>> block;
  bool has_content = false;
  std::string line;
  std::size_t n = 0;
  auto flush = [&] {
    if (has_content) grid.push_back(parse_config_lines(block));
    block.clear();
    has_content = false;
  };
  while (std::getline(in, line)) {
    ++n;
    if (trim(line) == "---") {
      flush();
      continue;
    }
    if (!trim(line.substr(0, line.find('#'))).empty()) has_content = true;
    block.emplace_back(n, line);
  }
  flush();
  if (grid.empty()) throw DataError("grid: no configurations");
  return grid;
}

std::vector<TrainConfig> load_grid(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  try {
    return parse_grid(in);
  } catch (const DataError& err) {
    throw DataError(path.string() + ": " + err.what());
  }
}

// ---------------------------------------------------------------------------
// Objective

Var batch_probabilities(Var anchors, Var candidates, double alpha) {
  using namespace ops;
  Var sims = matmul(row_normalize(anchors), transpose(row_normalize(candidates)));
  return row_softmax(scale(sims, alpha));
}

Var mnr_loss(Var anchors, Var candidates, double alpha) {
  using namespace ops;
  const Tensor& a = anchors.value();
  const Tensor& c = candidates.value();
  if (a.rank() != 2 || c.rank() != 2 || a.shape != c.shape) {
    throw NumericError("mnr_loss: anchors " + shape_string(a.shape) + " and candidates " +
                       shape_string(c.shape) + " must both be K x d");
  }
  Var sims = matmul(row_normalize(anchors), transpose(row_normalize(candidates)));
  Var log_p = row_log_softmax(scale(sims, alpha));
  return scale(mean(diagonal(log_p)), -1.0);
}

namespace {

Tensor stack(std::span<const Embedding> rows) {
  if (rows.empty()) throw NumericError("batch: no embeddings");
  const std::size_t d = rows[0].size();
  Tensor t(Shape{rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) throw NumericError("batch: embeddings differ in dimension");
    std::copy(rows[i].begin(), rows[i].end(), t.data.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  return t;
}

}  // namespace

Tensor batch_probabilities(std::span<const Embedding> anchors, std::span<const Embedding> candidates,
                           double alpha) {
  Graph g;
  return batch_probabilities(g.input(stack(anchors)), g.input(stack(candidates)), alpha).value();
}

double mnr_loss(std::span<const Embedding> anchors, std::span<const Embedding> candidates,
                double alpha) {
  Graph g;
  return mnr_loss(g.input(stack(anchors)), g.input(stack(candidates)), alpha).value().item();
}

void write_train_report_csv(std::ostream& out, const TrainReport& report) {
  out << "epoch,mean_loss,val_mrr\n";
  char buf[128];
  for (const auto& e : report.epochs) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f\n", e.epoch, e.mean_loss, e.val_mrr);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "# best_epoch=%zu best_val_mrr=%.6f\n", report.best_epoch,
                report.best_val_mrr);
  out << buf;
}

// ---------------------------------------------------------------------------
// Optimisation loop

namespace {

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;
};

void adam_step(std::vector<Tensor*>& tensors, AdamState& state, const TrainConfig& cfg) {
  if (state.m.empty()) {
    for (Tensor* t : tensors) {
      state.m.emplace_back(t->size(), 0.0);
      state.v.emplace_back(t->size(), 0.0);
    }
  }
  ++state.step;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    Tensor& t = *tensors[k];
    if (t.grad.size() != t.size()) continue;
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = t.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      t.data[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.adam_epsilon);
    }
  }
}

std::vector<TokenSequence> tokenize_side(const std::vector<Exchange>& xs, const Vocabulary& vocab,
                                         std::size_t max_len, bool questions) {
  std::vector<TokenSequence> out;
  out.reserve(xs.size());
  for (const auto& e : xs) {
    try {
      out.push_back(encode_text(questions ? e.question_text : e.answer_text, vocab, max_len));
    } catch (const DataError& err) {
      throw DataError("exchange \"" + e.id + "\": " + err.what());
    }
  }
  return out;
}

Var embed_batch(const BoundEncoder& enc, const std::vector<TokenSequence>& seqs,
                std::span<const std::size_t> members) {
  std::vector<Var> rows;
  rows.reserve(members.size());
  for (std::size_t idx : members) {
    const TokenSequence& s = seqs[idx];
    const std::vector<double> mask(s.length, 1.0);
    rows.push_back(encode_on_graph(enc, std::span(s.ids).first(s.length), mask));
  }
  return ops::concat_rows(rows);
}

}  // namespace

TrainResult train(const CorpusSplit& split, const Vocabulary& vocab, const EncoderConfig& enc_config,
                  const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (split.train.empty()) throw ArgumentError("train: training split is empty");
  if (split.validation.empty()) throw ArgumentError("train: validation split is empty");
  if (split.train.size() < cfg.batch_size) {
    throw ArgumentError("train: " + std::to_string(split.train.size()) +
                        " training pairs cannot fill one batch of " + std::to_string(cfg.batch_size));
  }
  const auto started = std::chrono::steady_clock::now();

  EncoderParams params;
  if (cfg.init_checkpoint) {
    auto [loaded, loaded_vocab] = load_encoder(*cfg.init_checkpoint);
    if (!(loaded.config == enc_config)) {
      throw ArgumentError("train: init checkpoint config differs from the requested encoder config");
    }
    if (!(loaded_vocab == vocab)) {
      throw ArgumentError("train: init checkpoint vocabulary differs from the training vocabulary");
    }
    params = std::move(loaded);
  } else {
    EncoderConfig c = enc_config;
    if (c.vocab_size == 0) c.vocab_size = vocab.size();
    if (c.vocab_size != vocab.size()) {
      throw ArgumentError("train: encoder vocab_size differs from the vocabulary size");
    }
    params = init_encoder(c, cfg.seed);
  }

  const std::size_t max_len = params.config.max_sequence_length;
  const bool question_anchor = cfg.anchor == Anchor::Question;
  const auto anchor_seqs = tokenize_side(split.train, vocab, max_len, question_anchor);
  const auto candidate_seqs = tokenize_side(split.train, vocab, max_len, !question_anchor);

  auto tensors = params.tensors();
  AdamState adam;
  Rng rng(derive_seed(cfg.seed, 0x5348554646ULL));
  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t k = cfg.batch_size;
  const std::size_t n_batches = order.size() / k;

  TrainResult result;
  result.params = params;
  double best = -1.0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double loss_total = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b) {
      const std::span<const std::size_t> members(order.data() + b * k, k);
      try {
        Graph g;
        const BoundEncoder enc = bind_trainable(g, params);
        Var anchors = embed_batch(enc, anchor_seqs, members);
        Var candidates = embed_batch(enc, candidate_seqs, members);
        Var loss = mnr_loss(anchors, candidates, cfg.alpha);
        const double value = loss.value().item();
        if (!std::isfinite(value)) throw NumericError("non-finite loss");
        loss_total += value;
        params.zero_grad();
        g.backward(loss);
        adam_step(tensors, adam, cfg);
        if (!params.all_finite()) throw NumericError("parameters became non-finite");
      } catch (const NumericError& err) {
        throw NumericError("train: epoch " + std::to_string(epoch) + ", batch " + std::to_string(b) +
                           ": " + err.what());
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_total / static_cast<double>(n_batches);
    stats.val_mrr =
        evaluate_retrieval(params, vocab, split.validation, cfg.anchor, kDefaultCutoff, options.workers)
            .mrr;
    result.report.epochs.push_back(stats);
    if (stats.val_mrr > best) {
      best = stats.val_mrr;
      result.params = params;
      result.report.best_epoch = epoch;
      result.report.best_val_mrr = stats.val_mrr;
    }
    if (options.log) {
      char buf[128];
      std::snprintf(buf, sizeof buf, "epoch %zu/%zu  loss %.6f  val_mrr %.6f\n", epoch, cfg.epochs,
                    stats.mean_loss, stats.val_mrr);
      *options.log << buf << std::flush;
    }
  }
  for (Tensor* t : result.params.tensors()) t->grad.clear();
  result.report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

GridResult grid_search(const CorpusSplit& split, const Vocabulary& vocab,
                       const EncoderConfig& enc_config, std::span<const TrainConfig> grid,
                       const TrainOptions& options) {
  if (grid.empty()) throw ArgumentError("grid_search: empty grid");
  GridResult out;
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (options.log) *options.log << "grid point " << (i + 1) << "/" << grid.size() << '\n';
    const auto r = train(split, vocab, enc_config, grid[i], options);
    out.results.emplace_back(grid[i], r.report.best_val_mrr);
    if (r.report.best_val_mrr > best) {
      best = r.report.best_val_mrr;
      out.best_index = i;
      out.best = grid[i];
    }
  }
  return out;
}

}  // namespace qarel
