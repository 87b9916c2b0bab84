#include "qarel/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qarel/analysis.hpp"
#include "qarel/corpus.hpp"
#include "qarel/csv.hpp"
#include "qarel/encoder.hpp"
#include "qarel/error.hpp"
#include "qarel/scoring.hpp"
#include "qarel/synthetic.hpp"
#include "qarel/tokenizer.hpp"
#include "qarel/training.hpp"

namespace fs = std::filesystem;

namespace qarel::cli {

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  bool quiet = false;
  bool seed_given = false;
};

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw DataError("sha256: digest initialisation failed");
  }
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  std::string hex;
  char two[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(two, sizeof two, "%02x", md[i]);
    hex += two;
  }
  return hex;
}

std::string exact(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Flat key = value record of one run. Wall-clock time is reported on stderr
// instead so that identical runs produce identical manifests.
class Manifest {
 public:
  Manifest(std::string command, const Globals& g) {
    set("command", std::move(command));
    set("version", kVersion);
    set("seed", std::to_string(g.seed));
    set("workers", std::to_string(g.workers));
  }

  void set(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }
  void set(const std::string& key, double value) { set(key, exact(value)); }
  void set(const std::string& key, std::size_t value) { set(key, std::to_string(value)); }

  void input(const fs::path& path) { set("input." + path.generic_string(), "sha256:" + sha256_file(path)); }

  void output(const fs::path& path) { set("output", path.generic_string()); }

  void absorb_config(const TrainConfig& cfg) {
    std::ostringstream os;
    write_train_config(os, cfg);
    std::istringstream is(os.str());
    std::string line;
    while (std::getline(is, line)) {
      const auto eq = line.find(" = ");
      set("config." + line.substr(0, eq), line.substr(eq + 3));
    }
  }

  void write(std::ostream& out) const {
    for (const auto& [k, v] : entries_) out << k << " = " << v << '\n';
  }

  void write_file(const fs::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    write(out);
    if (!out) throw DataError("write failure on " + path.string());
  }

  /// Beside `output` as <output>.manifest.
  void write_beside(const fs::path& output) const {
    fs::path p = output;
    p += ".manifest";
    write_file(p);
  }

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  return out;
}

void finish(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw DataError("write failure on " + path.string());
}

struct EncoderFlags {
  EncoderConfig cfg{};
  std::vector<CLI::Option*> options;

  void attach(CLI::App* sub) {
    options.push_back(sub->add_option("--dim", cfg.model_dim, "Model dimension d")->capture_default_str());
    options.push_back(sub->add_option("--layers", cfg.num_layers, "Encoder layers L")->capture_default_str());
    options.push_back(sub->add_option("--heads", cfg.num_heads, "Attention heads H")->capture_default_str());
    options.push_back(sub->add_option("--ff", cfg.ff_dim, "Feed-forward width")->capture_default_str());
    options.push_back(
        sub->add_option("--max-len", cfg.max_sequence_length, "Maximum sequence length")->capture_default_str());
  }

  void record(Manifest& m) const {
    m.set("encoder.vocab_size", cfg.vocab_size);
    m.set("encoder.model_dim", cfg.model_dim);
    m.set("encoder.num_layers", cfg.num_layers);
    m.set("encoder.num_heads", cfg.num_heads);
    m.set("encoder.ff_dim", cfg.ff_dim);
    m.set("encoder.max_sequence_length", cfg.max_sequence_length);
  }
};

std::optional<Anchor> parse_anchor(const std::string& s) {
  if (s == "question") return Anchor::Question;
  if (s == "answer") return Anchor::Answer;
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Subcommands

struct IngestOpts {
  std::string input;
  std::string format = "lines";
  std::string out;
  std::string party;
  std::string role;
  std::string label;
  int legislature = 0;
};

void cmd_ingest(const IngestOpts& o, const Globals& g) {
  const auto fmt = parse_format(o.format);
  if (!fmt) throw ArgumentError("--format must be lines or hansard, got \"" + o.format + "\"");
  ExchangeFilter filter;
  if (!o.party.empty()) {
    filter.party = parse_party(o.party);
    if (!filter.party) throw ArgumentError("--party: unknown party \"" + o.party + "\"");
  }
  if (!o.role.empty()) {
    filter.role = parse_role(o.role);
    if (!filter.role) throw ArgumentError("--role: unknown role \"" + o.role + "\"");
  }
  if (!o.label.empty()) {
    filter.label = parse_label(o.label);
    if (!filter.label) throw ArgumentError("--label: unknown label \"" + o.label + "\"");
  }
  if (o.legislature > 0) filter.legislature = o.legislature;
  const auto all = read_corpus_file(o.input, *fmt);
  const auto kept = filter_exchanges(all, filter);
  write_corpus_file(kept, o.out);

  Manifest m("ingest", g);
  m.set("format", o.format);
  m.set("filter.party", o.party);
  m.set("filter.role", o.role);
  m.set("filter.label", o.label);
  m.set("filter.legislature", o.legislature > 0 ? std::to_string(o.legislature) : std::string());
  m.input(o.input);
  m.set("records_read", all.size());
  m.set("records_written", kept.size());
  m.output(o.out);
  m.write_beside(o.out);
}

struct SplitOpts {
  std::string corpus;
  double train_frac = 0.05;
  double val_frac = 0.01;
  std::string out_dir;
};

void cmd_split(const SplitOpts& o, const Globals& g) {
  const auto ex = read_corpus_file(o.corpus);
  const auto split = split_corpus(ex, o.train_frac, o.val_frac, g.seed);
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  write_corpus_file(split.train, dir / "train.lines");
  write_corpus_file(split.validation, dir / "validation.lines");
  write_corpus_file(split.inference, dir / "inference.lines");

  Manifest m("split", g);
  m.set("train_frac", o.train_frac);
  m.set("val_frac", o.val_frac);
  m.input(o.corpus);
  m.set("train_size", split.train.size());
  m.set("validation_size", split.validation.size());
  m.set("inference_size", split.inference.size());
  m.output(dir);
  m.write_file(dir / "split.manifest");
}

struct VocabOpts {
  std::string corpus;
  std::size_t min_freq = kDefaultMinFreq;
  std::size_t max_size = kDefaultMaxVocab;
  std::string out;
};

void cmd_build_vocab(const VocabOpts& o, const Globals& g) {
  const auto ex = read_corpus_file(o.corpus);
  std::vector<std::string> texts;
  for (const auto& e : ex) {
    texts.push_back(e.question_text);
    texts.push_back(e.answer_text);
  }
  const auto vocab = build_vocab(texts, o.min_freq, o.max_size);
  vocab.save_file(o.out);

  Manifest m("build-vocab", g);
  m.set("min_freq", o.min_freq);
  m.set("max_size", o.max_size);
  m.input(o.corpus);
  m.set("vocab_size", vocab.size());
  m.output(o.out);
  m.write_beside(o.out);
}

struct SynthOpts {
  std::size_t pairs = 600;
  std::size_t topics = 50;
  SyntheticOptions options;
  std::string out;
};

void cmd_synth(const SynthOpts& o, const Globals& g) {
  const auto ex = make_synthetic(o.pairs, o.topics, g.seed, o.options);
  write_corpus_file(ex, o.out);

  Manifest m("synth", g);
  m.set("pairs", o.pairs);
  m.set("topics", o.topics);
  m.set("non_reply_fraction", o.options.non_reply_fraction);
  m.set("intermediate_fraction", o.options.intermediate_fraction);
  m.set("symmetric", o.options.symmetric ? "true" : "false");
  m.set("filler_per_side", o.options.filler_per_side);
  m.set("details", o.options.n_details);
  m.output(o.out);
  m.write_beside(o.out);
}

struct TrainOpts {
  std::string corpus;
  std::string config;
  std::string out_checkpoint;
  std::string init_checkpoint;
  std::string report;
  EncoderFlags encoder;
};

struct LoadedSplit {
  CorpusSplit split;
  Vocabulary vocab;
  bool vocab_from_file = false;
};

LoadedSplit load_split_dir(const fs::path& dir, Manifest& m) {
  LoadedSplit s;
  const fs::path train = dir / "train.lines";
  const fs::path val = dir / "validation.lines";
  const fs::path vocab = dir / "vocab.txt";
  s.split.train = read_corpus_file(train);
  s.split.validation = read_corpus_file(val);
  m.input(train);
  m.input(val);
  if (fs::exists(vocab)) {
    s.vocab = Vocabulary::load_file(vocab);
    s.vocab_from_file = true;
    m.input(vocab);
  } else {
    std::vector<std::string> texts;
    for (const auto& e : s.split.train) {
      texts.push_back(e.question_text);
      texts.push_back(e.answer_text);
    }
    s.vocab = build_vocab(texts);
  }
  return s;
}

void cmd_train(const std::string& name, TrainOpts o, const Globals& g, std::ostream& err) {
  TrainConfig cfg = o.config.empty() ? TrainConfig{} : load_train_config(o.config);
  if (g.seed_given) cfg.seed = g.seed;
  if (!o.init_checkpoint.empty()) cfg.init_checkpoint = o.init_checkpoint;

  Globals resolved = g;
  resolved.seed = cfg.seed;
  Manifest m(name, resolved);
  if (!o.config.empty()) m.input(o.config);
  LoadedSplit data = load_split_dir(o.corpus, m);

  EncoderConfig enc = o.encoder.cfg;
  if (cfg.init_checkpoint) {
    m.input(*cfg.init_checkpoint);
    auto [params, vocab] = load_encoder(*cfg.init_checkpoint);
    enc = params.config;
    data.vocab = std::move(vocab);
    data.vocab_from_file = false;
  } else {
    enc.vocab_size = data.vocab.size();
  }
  m.set("vocab_source", cfg.init_checkpoint ? "init_checkpoint"
                                            : (data.vocab_from_file ? "vocab.txt" : "built from train.lines"));
  m.absorb_config(cfg);
  EncoderFlags recorded;
  recorded.cfg = enc;
  recorded.record(m);

  TrainOptions topts;
  topts.workers = g.workers;
  topts.log = g.quiet ? nullptr : &err;
  const auto result = train(data.split, data.vocab, enc, cfg, topts);
  save_encoder(o.out_checkpoint, result.params, data.vocab);
  if (!o.report.empty()) {
    auto out = open_out(o.report);
    write_train_report_csv(out, result.report);
    finish(out, o.report);
    m.set("report", o.report);
  }
  m.set("best_epoch", result.report.best_epoch);
  m.output(o.out_checkpoint);
  m.write_beside(o.out_checkpoint);
}

struct GridOpts {
  std::string corpus;
  std::string grid;
  std::string out;
  EncoderFlags encoder;
};

void cmd_grid(const GridOpts& o, const Globals& g, std::ostream& err) {
  Manifest m("grid-search", g);
  m.input(o.grid);
  const auto grid = load_grid(o.grid);
  LoadedSplit data = load_split_dir(o.corpus, m);
  EncoderConfig enc = o.encoder.cfg;
  enc.vocab_size = data.vocab.size();
  EncoderFlags recorded;
  recorded.cfg = enc;
  recorded.record(m);

  TrainOptions topts;
  topts.workers = g.workers;
  topts.log = g.quiet ? nullptr : &err;
  const auto result = grid_search(data.split, data.vocab, enc, grid, topts);

  auto out = open_out(o.out);
  csv::write_row(out, {"index", "alpha", "batch_size", "learning_rate", "epochs", "seed", "anchor",
                       "val_mrr", "selected"});
  for (std::size_t i = 0; i < result.results.size(); ++i) {
    const auto& [c, mrr_value] = result.results[i];
    csv::write_row(out, {std::to_string(i), exact(c.alpha), std::to_string(c.batch_size),
                         exact(c.learning_rate), std::to_string(c.epochs), std::to_string(c.seed),
                         c.anchor == Anchor::Question ? "question" : "answer", csv::fixed6(mrr_value),
                         i == result.best_index ? "true" : "false"});
  }
  finish(out, o.out);
  m.set("best_index", result.best_index);
  m.output(o.out);
  m.write_beside(o.out);
}

struct ModelCorpusOpts {
  std::string checkpoint;
  std::string corpus;
  std::string out;
};

void cmd_score(const ModelCorpusOpts& o, const Globals& g) {
  Manifest m("score", g);
  const auto [params, vocab] = load_encoder(o.checkpoint);
  const auto ex = read_corpus_file(o.corpus);
  m.input(o.checkpoint);
  m.input(o.corpus);
  write_scores_csv(score_corpus(params, vocab, ex, g.workers), o.out);
  m.output(o.out);
  m.write_beside(o.out);
}

struct EvalOpts {
  ModelCorpusOpts io;
  std::size_t cutoff = kDefaultCutoff;
  std::string anchor = "question";
};

void cmd_eval(const EvalOpts& o, const Globals& g, std::ostream& out, std::ostream& err) {
  const auto anchor = parse_anchor(o.anchor);
  if (!anchor) throw ArgumentError("--anchor must be question or answer, got \"" + o.anchor + "\"");
  Manifest m("eval-mrr", g);
  m.set("cutoff", o.cutoff);
  m.set("anchor", o.anchor);
  const auto [params, vocab] = load_encoder(o.io.checkpoint);
  const auto ex = read_corpus_file(o.io.corpus);
  m.input(o.io.checkpoint);
  m.input(o.io.corpus);
  const auto r = evaluate_retrieval(params, vocab, ex, *anchor, o.cutoff, g.workers);
  csv::write_row(out, {"n", "mrr", "hit_at_1", "hit_at_5", "hit_at_10"});
  csv::write_row(out, {std::to_string(r.ranks.size()), csv::fixed6(r.mrr), csv::fixed6(r.hit_rate_at.at(1)),
                       csv::fixed6(r.hit_rate_at.at(5)), csv::fixed6(r.hit_rate_at.at(10))});
  if (!o.io.out.empty()) {
    auto f = open_out(o.io.out);
    csv::write_row(f, {"id", "rank", "reciprocal_rank"});
    for (const auto& rr : r.ranks) {
      csv::write_row(f, {rr.exchange_id, std::to_string(rr.rank), csv::fixed6(rr.reciprocal_rank)});
    }
    finish(f, o.io.out);
    m.output(o.io.out);
    m.write_beside(o.io.out);
  } else if (!g.quiet) {
    m.write(err);
  }
}

struct NullOpts {
  ModelCorpusOpts io;
  std::size_t rounds = kDefaultNullRounds;
};

void cmd_null(const NullOpts& o, const Globals& g) {
  Manifest m("null-dist", g);
  m.set("rounds", o.rounds);
  const auto [params, vocab] = load_encoder(o.io.checkpoint);
  const auto ex = read_corpus_file(o.io.corpus);
  m.input(o.io.checkpoint);
  m.input(o.io.corpus);
  const auto nd = null_distribution(params, vocab, ex, o.rounds, g.seed, g.workers);
  auto f = open_out(o.io.out);
  csv::write_row(f, {"round", "question_id", "answer_id", "cosine"});
  const std::size_t n = ex.size();
  for (std::size_t r = 0; r < o.rounds; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      csv::write_row(f, {std::to_string(r), ex[i].id, ex[nd.matchings[r][i]].id,
                         csv::fixed6(nd.cosines[r * n + i])});
    }
  }
  finish(f, o.io.out);
  m.output(o.io.out);
  m.write_beside(o.io.out);
}

struct CurveOpts {
  ModelCorpusOpts io;
  std::size_t bins = 10;
};

void cmd_curve(const CurveOpts& o, const Globals& g) {
  Manifest m("rank-curve", g);
  m.set("bins", o.bins);
  const auto [params, vocab] = load_encoder(o.io.checkpoint);
  const auto ex = read_corpus_file(o.io.corpus);
  m.input(o.io.checkpoint);
  m.input(o.io.corpus);
  const auto curve = rank_validity_curve(params, vocab, ex, o.bins, g.workers);
  auto f = open_out(o.io.out);
  csv::write_row(f, {"anchor", "bin", "low", "high", "n", "p_correct_closest", "mean_rank"});
  auto emit = [&](const char* anchor, const std::vector<CurveBin>& bins) {
    for (std::size_t b = 0; b < bins.size(); ++b) {
      const auto& c = bins[b];
      csv::write_row(f, {anchor, std::to_string(b), csv::fixed6(c.low), csv::fixed6(c.high),
                         std::to_string(c.n), c.p_correct_closest ? csv::fixed6(*c.p_correct_closest) : "",
                         c.mean_rank ? csv::fixed6(*c.mean_rank) : ""});
    }
  };
  emit("question", curve.question_anchor);
  emit("answer", curve.answer_anchor);
  finish(f, o.io.out);
  m.output(o.io.out);
  m.write_beside(o.io.out);
}

struct AnalyzeOpts {
  std::string scores;
  std::string group_by = "party,legislature";
  std::string out;
  std::string tests_out;
};

void write_summary(std::ostream& out, const std::vector<ScoredPair>& scored) {
  std::vector<double> xs;
  for (const auto& s : scored) xs.push_back(s.cosine);
  const auto s = summary_stats(xs);
  csv::write_row(out, {"n", "mean", "std", "skewness", "min", "max"});
  csv::write_row(out, {std::to_string(s.n), csv::fixed6(s.mean), csv::fixed6(s.std),
                       s.skewness ? csv::fixed6(*s.skewness) : "", csv::fixed6(s.min), csv::fixed6(s.max)});
}

void write_tests_file(const std::string& path, const GroupReport& report, Manifest& m) {
  if (path.empty()) return;
  auto f = open_out(path);
  write_tests_csv(f, report);
  finish(f, path);
  m.set("tests_out", path);
}

void cmd_analyze(const AnalyzeOpts& o, const Globals& g, std::ostream& out) {
  Manifest m("analyze", g);
  m.set("group_by", o.group_by);
  const auto fields = parse_group_fields(o.group_by);
  const auto scored = read_scores_csv(o.scores);
  m.input(o.scores);
  const auto report = group_means(scored, fields);
  auto f = open_out(o.out);
  write_groups_csv(f, report);
  finish(f, o.out);
  write_tests_file(o.tests_out, report, m);
  write_summary(out, scored);
  m.output(o.out);
  m.write_beside(o.out);
}

struct ValidityOpts {
  std::string scores;
  std::string out;
  std::string tests_out;
};

void cmd_validity(const ValidityOpts& o, const Globals& g, std::ostream& out) {
  Manifest m("validity", g);
  const auto scored = read_scores_csv(o.scores);
  m.input(o.scores);
  const auto v = validity_report(scored);
  auto f = open_out(o.out);
  write_groups_csv(f, v.report);
  finish(f, o.out);
  write_tests_file(o.tests_out, v.report, m);
  out << "monotone," << (v.monotone ? "true" : "false") << '\n';
  m.set("monotone", v.monotone ? "true" : "false");
  m.output(o.out);
  m.write_beside(o.out);
}

struct CorrelateOpts {
  std::string a;
  std::string b;
};

void cmd_correlate(const CorrelateOpts& o, const Globals& g, std::ostream& out, std::ostream& err) {
  Manifest m("correlate", g);
  const auto a = read_scores_csv(o.a);
  const auto b = read_scores_csv(o.b);
  m.input(o.a);
  m.input(o.b);
  std::map<std::string, double> by_id;
  for (const auto& s : b) by_id[s.exchange_id] = s.cosine;
  if (by_id.size() != a.size()) throw DataError("correlate: the two score files cover different exchanges");
  std::vector<double> xa;
  std::vector<double> xb;
  for (const auto& s : a) {
    const auto it = by_id.find(s.exchange_id);
    if (it == by_id.end()) throw DataError("correlate: exchange \"" + s.exchange_id + "\" missing from " + o.b);
    xa.push_back(s.cosine);
    xb.push_back(it->second);
  }
  const double r = pearson(xa, xb);
  csv::write_row(out, {"n", "pearson"});
  csv::write_row(out, {std::to_string(xa.size()), csv::fixed6(r)});
  if (!g.quiet) m.write(err);
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Question/answer relevance scoring with a biencoder", "qarel"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", kVersion);

  Globals g;
  auto* seed_opt = app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--workers", g.workers, "Worker threads for scoring")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Suppress progress and timing on stderr");

  IngestOpts ingest;
  auto* c_ingest = app.add_subcommand("ingest", "Parse transcripts into the exchange-lines corpus format");
  c_ingest->add_option("--in,--input", ingest.input, "Transcript file")->required();
  c_ingest->add_option("--format", ingest.format, "lines or hansard")->capture_default_str();
  c_ingest->add_option("--out", ingest.out, "Output corpus (.lines)")->required();
  c_ingest->add_option("--party", ingest.party, "Keep only this asker party");
  c_ingest->add_option("--role", ingest.role, "Keep only this asker role");
  c_ingest->add_option("--legislature", ingest.legislature, "Keep only this legislature");
  c_ingest->add_option("--label", ingest.label, "Keep only this reply label");

  SplitOpts split;
  auto* c_split = app.add_subcommand("split", "Seeded train/validation/inference split");
  c_split->add_option("--in,--corpus", split.corpus, "Input corpus")->required();
  c_split->add_option("--train-frac", split.train_frac, "Training fraction")->capture_default_str();
  c_split->add_option("--val-frac", split.val_frac, "Validation fraction")->capture_default_str();
  c_split->add_option("--out-dir", split.out_dir, "Directory for the three partitions")->required();

  VocabOpts vocab;
  auto* c_vocab = app.add_subcommand("build-vocab", "Build a vocabulary from a corpus");
  c_vocab->add_option("--corpus", vocab.corpus, "Training corpus")->required();
  c_vocab->add_option("--min-freq", vocab.min_freq, "Minimum token frequency")->capture_default_str();
  c_vocab->add_option("--max-size", vocab.max_size, "Maximum vocabulary size")->capture_default_str();
  c_vocab->add_option("--out", vocab.out, "Vocabulary file")->required();

  SynthOpts synth;
  auto* c_synth = app.add_subcommand("synth", "Generate a planted synthetic corpus");
  c_synth->add_option("--pairs", synth.pairs, "Number of exchanges")->capture_default_str();
  c_synth->add_option("--topics", synth.topics, "Number of topics")->capture_default_str();
  c_synth->add_option("--non-reply-frac", synth.options.non_reply_fraction, "Fraction of non-replies")
      ->capture_default_str();
  c_synth->add_option("--intermediate-frac", synth.options.intermediate_fraction,
                      "Fraction of intermediate replies")
      ->capture_default_str();
  c_synth->add_flag("--symmetric", synth.options.symmetric, "Same phrasing on both sides");
  c_synth->add_option("--filler", synth.options.filler_per_side, "Filler words per side")->capture_default_str();
  c_synth->add_option("--details", synth.options.n_details, "Detail word pool size")->capture_default_str();
  c_synth->add_option("--out", synth.out, "Output corpus")->required();

  TrainOpts pre;
  auto* c_pre = app.add_subcommand("pretrain", "Train from scratch to produce an initial checkpoint");
  TrainOpts tr;
  auto* c_train = app.add_subcommand("train", "Train or fine-tune the encoder");
  for (auto [sub, opts] : {std::pair{c_pre, &pre}, std::pair{c_train, &tr}}) {
    sub->add_option("--corpus", opts->corpus, "Split directory (train.lines, validation.lines[, vocab.txt])")
        ->required();
    sub->add_option("--config", opts->config, "Training config file");
    sub->add_option("--out-checkpoint", opts->out_checkpoint, "Checkpoint to write")->required();
    sub->add_option("--report", opts->report, "Per-epoch report CSV");
    opts->encoder.attach(sub);
  }
  auto* init_opt = c_train->add_option("--init-checkpoint", tr.init_checkpoint, "Fine-tune from this checkpoint");
  for (auto* o : tr.encoder.options) init_opt->excludes(o);

  GridOpts grid;
  auto* c_grid = app.add_subcommand("grid-search", "Select training settings by validation MRR");
  c_grid->add_option("--corpus", grid.corpus, "Split directory")->required();
  c_grid->add_option("--grid", grid.grid, "Grid file (configs separated by ---)")->required();
  c_grid->add_option("--out", grid.out, "Results CSV")->required();
  grid.encoder.attach(c_grid);

  ModelCorpusOpts score;
  auto* c_score = app.add_subcommand("score", "Cosine score every exchange");
  c_score->add_option("--checkpoint", score.checkpoint, "Encoder checkpoint")->required();
  c_score->add_option("--corpus", score.corpus, "Corpus to score")->required();
  c_score->add_option("--out", score.out, "scores.csv")->required();

  EvalOpts eval;
  auto* c_eval = app.add_subcommand("eval-mrr", "Retrieval MRR and hit rates");
  c_eval->add_option("--checkpoint", eval.io.checkpoint, "Encoder checkpoint")->required();
  c_eval->add_option("--corpus", eval.io.corpus, "Evaluation corpus")->required();
  c_eval->add_option("--cutoff", eval.cutoff, "Ranks beyond this score 0")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  c_eval->add_option("--anchor", eval.anchor, "question or answer")->capture_default_str();
  c_eval->add_option("--out", eval.io.out, "Per-exchange ranks CSV");

  NullOpts null;
  auto* c_null = app.add_subcommand("null-dist", "Cosines of randomly deranged question/answer pairs");
  c_null->add_option("--checkpoint", null.io.checkpoint, "Encoder checkpoint")->required();
  c_null->add_option("--corpus", null.io.corpus, "Corpus")->required();
  c_null->add_option("--rounds", null.rounds, "Derangement rounds")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  c_null->add_option("--out", null.io.out, "null.csv")->required();

  CurveOpts curve;
  auto* c_curve = app.add_subcommand("rank-curve", "Probability the correct counterpart is closest, by cosine bin");
  c_curve->add_option("--checkpoint", curve.io.checkpoint, "Encoder checkpoint")->required();
  c_curve->add_option("--corpus", curve.io.corpus, "Evaluation corpus")->required();
  c_curve->add_option("--bins", curve.bins, "Number of bins")->capture_default_str()->check(CLI::PositiveNumber);
  c_curve->add_option("--out", curve.io.out, "curve.csv")->required();

  AnalyzeOpts analyze;
  auto* c_analyze = app.add_subcommand("analyze", "Group means with pairwise Welch tests");
  c_analyze->add_option("--scores", analyze.scores, "scores.csv")->required();
  c_analyze->add_option("--group-by", analyze.group_by, "Fields: party, role, legislature, label")
      ->capture_default_str();
  c_analyze->add_option("--out", analyze.out, "groups.csv")->required();
  c_analyze->add_option("--tests-out", analyze.tests_out, "Pairwise tests CSV");

  ValidityOpts validity;
  auto* c_validity = app.add_subcommand("validity", "Mean cosine per reply category");
  c_validity->add_option("--scores", validity.scores, "Labeled scores.csv")->required();
  c_validity->add_option("--out", validity.out, "validity.csv")->required();
  c_validity->add_option("--tests-out", validity.tests_out, "Pairwise tests CSV");

  CorrelateOpts corr;
  auto* c_corr = app.add_subcommand("correlate", "Pearson correlation between two score files");
  c_corr->add_option("--a", corr.a, "First scores.csv")->required();
  c_corr->add_option("--b", corr.b, "Second scores.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Name unexpected flags even when a required option is also missing.
    std::vector<std::string> extras;
    for (const auto* sub : app.get_subcommands()) {
      for (const auto& x : sub->remaining()) extras.push_back(x);
    }
    for (const auto& x : app.remaining()) extras.push_back(x);
    if (!extras.empty() && e.get_exit_code() != static_cast<int>(CLI::ExitCodes::ExtrasError)) {
      err << "The following arguments were not expected:";
      for (const auto& x : extras) err << ' ' << x;
      err << "\nRun with --help for more information.\n";
      return kUsage;
    }
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }
  g.seed_given = seed_opt->count() > 0;

  const auto started = std::chrono::steady_clock::now();
  std::string which;
  try {
    if (c_ingest->parsed()) {
      which = "ingest";
      cmd_ingest(ingest, g);
    } else if (c_split->parsed()) {
      which = "split";
      cmd_split(split, g);
    } else if (c_vocab->parsed()) {
      which = "build-vocab";
      cmd_build_vocab(vocab, g);
    } else if (c_synth->parsed()) {
      which = "synth";
      cmd_synth(synth, g);
    } else if (c_pre->parsed()) {
      which = "pretrain";
      cmd_train(which, pre, g, err);
    } else if (c_train->parsed()) {
      which = "train";
      cmd_train(which, tr, g, err);
    } else if (c_grid->parsed()) {
      which = "grid-search";
      cmd_grid(grid, g, err);
    } else if (c_score->parsed()) {
      which = "score";
      cmd_score(score, g);
    } else if (c_eval->parsed()) {
      which = "eval-mrr";
      cmd_eval(eval, g, out, err);
    } else if (c_null->parsed()) {
      which = "null-dist";
      cmd_null(null, g);
    } else if (c_curve->parsed()) {
      which = "rank-curve";
      cmd_curve(curve, g);
    } else if (c_analyze->parsed()) {
      which = "analyze";
      cmd_analyze(analyze, g, out);
    } else if (c_validity->parsed()) {
      which = "validity";
      cmd_validity(validity, g, out);
    } else if (c_corr->parsed()) {
      which = "correlate";
      cmd_correlate(corr, g, out, err);
    }
  } catch (const ArgumentError& e) {
    err << "qarel " << which << ": " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    err << "qarel " << which << ": numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    err << "qarel " << which << ": " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "qarel " << which << ": " << e.what() << '\n';
    return kData;
  }
  if (!g.quiet) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    char buf[96];
    std::snprintf(buf, sizeof buf, "qarel %s: done in %.2f s\n", which.c_str(), secs);
    err << buf;
  }
  return kOk;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  std::vector<const char*> argv;
  argv.push_back("qarel");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace qarel::cli
