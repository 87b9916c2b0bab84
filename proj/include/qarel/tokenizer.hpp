#pragma once

// Word-level tokenizer.
//
// Token rule: the text is decoded as UTF-8, lowercased, and split into maximal
// runs of letters and digits; everything else is a separator. Classification
// and case folding use fixed tables (see tokenizer.cpp): ASCII, Latin-1,
// Latin Extended-A, Greek and Cyrillic are folded; punctuation, symbol and
// space blocks separate; any other code point counts as a letter.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace qarel {

inline constexpr std::size_t kDefaultMaxLen = 128;
inline constexpr std::size_t kDefaultMinFreq = 2;
inline constexpr std::size_t kDefaultMaxVocab = 20000;

/// Splits text into lowercase word tokens.
std::vector<std::string> tokenize(std::string_view text);

class Vocabulary {
 public:
  static constexpr int kPadId = 0;
  static constexpr int kUnkId = 1;
  static constexpr std::string_view kPadToken = "<pad>";
  static constexpr std::string_view kUnkToken = "<unk>";

  /// Only the two sentinels.
  Vocabulary();

  /// `tokens` excludes the sentinels; throws DataError on duplicates or on a
  /// token that collides with a sentinel.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return id_to_token_.size(); }
  int pad_id() const { return kPadId; }
  int unk_id() const { return kUnkId; }

  /// unk_id() for out-of-vocabulary tokens.
  int id_of(std::string_view token) const;
  const std::string& token(std::size_t id) const { return id_to_token_.at(id); }
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  /// Line-oriented form: one token per line, line number = id.
  void save(std::ostream& out) const;
  static Vocabulary load(std::istream& in);
  void save_file(const std::filesystem::path& path) const;
  static Vocabulary load_file(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int> token_to_id_;
};

/// PAD, UNK, then every token with frequency >= min_freq by descending
/// frequency (ties: byte-wise lexicographic), truncated to max_size entries.
Vocabulary build_vocab(const std::vector<std::string>& texts, std::size_t min_freq = kDefaultMinFreq,
                       std::size_t max_size = kDefaultMaxVocab);

struct TokenSequence {
  std::vector<int> ids;    ///< exactly max_len entries, PAD-suffixed
  std::size_t length = 0;  ///< non-pad prefix length

  bool operator==(const TokenSequence&) const = default;
};

/// Tokenizes, maps OOV to UNK, truncates to max_len and pads to max_len.
/// Throws DataError when the text has no tokens.
TokenSequence encode_text(std::string_view text, const Vocabulary& vocab,
                          std::size_t max_len = kDefaultMaxLen);

}  // namespace qarel
