#include "qvad/corpus.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>

#include "qvad/error.h"

namespace qvad {
namespace {

const char* const kReservedNames[kReservedTokens] = {"<pad>", "<bos>", "<eos>", "<unk>"};

std::vector<std::string> string_array(const nlohmann::json& obj, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) throw DataError(std::string("missing key \"") + key + "\"");
  if (!it->is_array()) throw DataError(std::string("key \"") + key + "\" is not an array");
  std::vector<std::string> out;
  out.reserve(it->size());
  for (const auto& v : *it) {
    if (!v.is_string()) throw DataError(std::string("key \"") + key + "\" holds a non-string");
    out.push_back(v.get<std::string>());
  }
  return out;
}

std::vector<std::string> dedup(const std::vector<std::string>& words) {
  std::vector<std::string> out;
  for (const auto& w : words) {
    if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
  }
  return out;
}

}  // namespace

Vocab::Vocab() {
  for (std::size_t i = 0; i < kReservedTokens; ++i) {
    id_to_word_.emplace_back(kReservedNames[i]);
    word_to_id_.emplace(kReservedNames[i], static_cast<WordId>(i));
  }
}

WordId Vocab::id(const std::string& word) const {
  auto it = word_to_id_.find(word);
  return it == word_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::word(WordId id) const {
  if (id >= id_to_word_.size()) throw DataError("word id out of range: " + std::to_string(id));
  return id_to_word_[id];
}

WordId Vocab::add(const std::string& word) {
  auto it = word_to_id_.find(word);
  if (it != word_to_id_.end()) return it->second;
  const auto id = static_cast<WordId>(id_to_word_.size());
  id_to_word_.push_back(word);
  word_to_id_.emplace(word, id);
  return id;
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary: " + path.string());
  for (std::size_t i = kReservedTokens; i < id_to_word_.size(); ++i) out << id_to_word_[i] << '\n';
  if (!out) throw DataError("failed writing vocabulary: " + path.string());
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read vocabulary: " + path.string());
  Vocab v;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) throw DataError("empty token on vocabulary line " + std::to_string(n));
    if (v.contains(line)) throw DataError("duplicate vocabulary token: " + line);
    v.add(line);
  }
  return v;
}

LoadResult parse_records(const std::vector<std::string>& lines, const StopWords& stopwords) {
  LoadResult result;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string& line = lines[i];
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Record rec;
    try {
      const auto obj = nlohmann::json::parse(line);
      if (!obj.is_object()) throw DataError("record is not a JSON object");
      rec.query = remove_stopwords(string_array(obj, "q"), stopwords);
      rec.keywords = dedup(string_array(obj, "k"));
      rec.ad_text = string_array(obj, "t");
      if (auto it = obj.find("item"); it != obj.end()) {
        rec.item = it->is_string() ? it->get<std::string>() : it->dump();
      }
    } catch (const nlohmann::json::exception& e) {
      result.errors.push_back({i + 1, e.what()});
      continue;
    } catch (const DataError& e) {
      result.errors.push_back({i + 1, e.what()});
      continue;
    }
    if (rec.keywords.size() < kMinKeywords || rec.keywords.size() > kMaxKeywords ||
        rec.query.size() > kMaxQueryLength || rec.ad_text.size() > kMaxAdLength) {
      ++result.dropped;
      continue;
    }
    result.records.push_back(std::move(rec));
  }
  return result;
}

LoadResult load_records(const std::filesystem::path& path, const StopWords& stopwords) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read records: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(std::move(line));
  if (in.bad()) throw DataError("I/O error reading records: " + path.string());
  return parse_records(lines, stopwords);
}

StopWords load_stopwords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read stop words: " + path.string());
  StopWords out;
  std::string word;
  while (in >> word) out.insert(word);
  return out;
}

std::vector<std::string> remove_stopwords(const std::vector<std::string>& words,
                                          const StopWords& stopwords) {
  std::vector<std::string> out;
  for (const auto& w : words) {
    if (!stopwords.count(w)) out.push_back(w);
  }
  return out;
}

Vocab build_vocab(const std::vector<Record>& records, std::size_t max_size) {
  if (max_size < kReservedTokens) {
    throw UsageError("vocabulary size " + std::to_string(max_size) +
                     " is below the reserved token count");
  }
  if (records.empty()) throw DataError("cannot build a vocabulary from zero records");
  std::map<std::string, std::size_t> freq;
  for (const auto& r : records) {
    for (const auto* list : {&r.query, &r.keywords, &r.ad_text}) {
      for (const auto& w : *list) ++freq[w];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  // std::map already orders lexicographically; stable sort keeps that as the
  // tie-break.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocab v;
  for (const auto& [word, count] : ranked) {
    if (v.size() >= max_size) break;
    if (v.contains(word)) continue;  // literal "<unk>" etc. in the corpus
    v.add(word);
  }
  return v;
}

std::vector<WordId> encode_words(const std::vector<std::string>& words, const Vocab& vocab) {
  std::vector<WordId> out;
  out.reserve(words.size());
  for (const auto& w : words) out.push_back(vocab.id(w));
  return out;
}

std::vector<std::string> decode_words(const std::vector<WordId>& ids, const Vocab& vocab) {
  std::vector<std::string> out;
  for (WordId id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    out.push_back(vocab.word(id));
  }
  return out;
}

EncodedRecord encode(const Record& record, const Vocab& vocab) {
  EncodedRecord e;
  e.query = encode_words(record.query, vocab);
  e.keywords = encode_words(record.keywords, vocab);
  e.target.reserve(record.ad_text.size() + 2);
  e.target.push_back(kBos);
  for (WordId id : encode_words(record.ad_text, vocab)) e.target.push_back(id);
  e.target.push_back(kEos);
  return e;
}

std::vector<std::string> item_ids(const std::vector<Record>& records) {
  std::map<std::pair<std::vector<std::string>, std::vector<std::string>>, std::size_t> first;
  std::vector<std::string> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const Record& r = records[i];
    if (!r.item.empty()) {
      out.push_back(r.item);
      continue;
    }
    auto [it, inserted] = first.emplace(std::make_pair(r.keywords, r.ad_text), i);
    out.push_back(std::to_string(it->second));
  }
  return out;
}

}  // namespace qvad
