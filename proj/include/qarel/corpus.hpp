#pragma once

// Question-answer transcripts: the Exchange record, its two on-disk formats,
// and the seeded train / validation / inference split.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace qarel {

enum class Party { BQ, CPC, LPC, NDP, Other };
enum class Role { Opposition, GovernmentBackbench, Independent };
enum class ReplyLabel { FullReply, IntermediateReply, NonReply };

std::string_view to_string(Party p);
std::string_view to_string(Role r);
std::string_view to_string(ReplyLabel l);

// Exact, case-sensitive parsing of the names produced by to_string.
std::optional<Party> parse_party(std::string_view s);
std::optional<Role> parse_role(std::string_view s);
std::optional<ReplyLabel> parse_label(std::string_view s);

/// Strict YYYY-MM-DD with calendar validation.
std::optional<std::chrono::year_month_day> parse_iso_date(std::string_view s);
std::string format_iso_date(std::chrono::year_month_day d);

struct Exchange {
  std::string id;
  std::string question_text;
  std::string answer_text;
  Party asker_party = Party::Other;
  Role asker_role = Role::Opposition;
  int legislature = 1;
  std::chrono::year_month_day date{};
  std::optional<ReplyLabel> label;

  bool operator==(const Exchange&) const = default;
};

/// Throws DataError if the record violates an Exchange invariant. `where`
/// prefixes the message (e.g. "line 4").
void validate_exchange(const Exchange& e, std::string_view where);

enum class TranscriptFormat {
  ExchangeLines,  ///< one JSON object per line
  HansardLike,    ///< XML-style transcript, see schemas/hansard.xsd
};

std::optional<TranscriptFormat> parse_format(std::string_view s);

/// Reads exchanges in source order. Malformed records raise DataError naming
/// the line (ExchangeLines) or record number (HansardLike) and the field;
/// duplicate ids raise DataError naming the id.
std::vector<Exchange> parse_transcripts(std::istream& source, TranscriptFormat format);

/// Writes the ExchangeLines form. parse_transcripts(save_corpus(x)) == x.
void save_corpus(const std::vector<Exchange>& exchanges, std::ostream& sink);

std::vector<Exchange> read_corpus_file(const std::filesystem::path& path,
                                       TranscriptFormat format = TranscriptFormat::ExchangeLines);
void write_corpus_file(const std::vector<Exchange>& exchanges, const std::filesystem::path& path);

struct CorpusSplit {
  std::vector<Exchange> train;
  std::vector<Exchange> validation;
  std::vector<Exchange> inference;
  std::uint64_t seed = 0;
};

/// Partition sizes: train = floor(train_frac * N), validation =
/// floor(val_frac * N), inference takes the rest. Membership is decided by a
/// seeded Fisher-Yates shuffle; each partition keeps the input's relative
/// order. Throws ArgumentError unless both fractions are non-negative and
/// 0 < train_frac + val_frac < 1.
CorpusSplit split_corpus(const std::vector<Exchange>& exchanges, double train_frac,
                         double val_frac, std::uint64_t seed);

/// Conjunction of optional field constraints; an empty filter matches all.
struct ExchangeFilter {
  std::optional<Party> party;
  std::optional<Role> role;
  std::optional<int> legislature;
  std::optional<ReplyLabel> label;

  bool matches(const Exchange& e) const;
};

std::vector<Exchange> filter_exchanges(const std::vector<Exchange>& exchanges,
                                       const std::function<bool(const Exchange&)>& predicate);
std::vector<Exchange> filter_exchanges(const std::vector<Exchange>& exchanges,
                                       const ExchangeFilter& filter);

}  // namespace qarel
