#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace qvad {

using WordId = std::uint32_t;
using StopWords = std::unordered_set<std::string>;

inline constexpr WordId kPad = 0;
inline constexpr WordId kBos = 1;
inline constexpr WordId kEos = 2;
inline constexpr WordId kUnk = 3;
inline constexpr std::size_t kReservedTokens = 4;

inline constexpr std::size_t kMaxAdLength = 20;
inline constexpr std::size_t kMaxQueryLength = 10;
inline constexpr std::size_t kMaxKeywords = 10;
inline constexpr std::size_t kMinKeywords = 3;

// Word <-> id map. Ids 0..3 are PAD, BOS, EOS, UNK; corpus words follow in
// descending frequency, ties broken lexicographically.
class Vocab {
 public:
  Vocab();

  WordId id(const std::string& word) const;  // kUnk when absent
  bool contains(const std::string& word) const { return word_to_id_.count(word) != 0; }
  const std::string& word(WordId id) const;
  std::size_t size() const { return id_to_word_.size(); }
  const std::vector<std::string>& words() const { return id_to_word_; }

  // Appends a corpus word; returns its id (existing id if already present).
  WordId add(const std::string& word);

  // One corpus token per line; line n holds id n + 4.
  void save(const std::filesystem::path& path) const;
  static Vocab load(const std::filesystem::path& path);

 private:
  std::unordered_map<std::string, WordId> word_to_id_;
  std::vector<std::string> id_to_word_;
};

struct Record {
  std::vector<std::string> query;     // stop words removed
  std::vector<std::string> keywords;  // deduplicated, file order
  std::vector<std::string> ad_text;
  std::string item;  // optional "item" key; otherwise derived from (k, t)
};

struct ParseIssue {
  std::size_t line = 0;  // 1-based
  std::string message;
};

struct LoadResult {
  std::vector<Record> records;
  std::size_t dropped = 0;  // well-formed but violating length/count caps
  std::vector<ParseIssue> errors;
};

// Reads the JSONL record format {"q": [...], "k": [...], "t": [...]}.
// Stop words are removed from queries before the length cap is applied.
// Throws DataError if the file cannot be read.
LoadResult load_records(const std::filesystem::path& path, const StopWords& stopwords);
// Same parsing rules applied to in-memory lines.
LoadResult parse_records(const std::vector<std::string>& lines, const StopWords& stopwords);

StopWords load_stopwords(const std::filesystem::path& path);
std::vector<std::string> remove_stopwords(const std::vector<std::string>& words,
                                          const StopWords& stopwords);

// max_size counts the reserved tokens. Throws UsageError if max_size < 4 and
// DataError on an empty record list.
Vocab build_vocab(const std::vector<Record>& records, std::size_t max_size);

struct EncodedRecord {
  std::vector<WordId> query;
  std::vector<WordId> keywords;
  std::vector<WordId> target;  // BOS ad_text EOS
};

EncodedRecord encode(const Record& record, const Vocab& vocab);
std::vector<WordId> encode_words(const std::vector<std::string>& words, const Vocab& vocab);
// Inverse of encode_words; BOS/EOS/PAD are dropped.
std::vector<std::string> decode_words(const std::vector<WordId>& ids, const Vocab& vocab);

// Assigns item ids: the record's "item" key if present, otherwise the index of
// the first record sharing its (keywords, ad_text).
std::vector<std::string> item_ids(const std::vector<Record>& records);

}  // namespace qvad
