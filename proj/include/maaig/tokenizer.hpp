#pragma once

// Word-level tokenizer. Normalization lowercases ASCII and isolates every
// punctuation character as its own token; ";" is the instruction separator
// and always maps to the SEP special.

#include <algorithm>
#include <cctype>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "maaig/clip_io.hpp"

namespace maaig {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kSep = 4;
inline constexpr TokenId kCount = 5;
}  // namespace special

inline constexpr std::array<std::string_view, special::kCount> kSpecialTokens = {
    "<pad>", "<bos>", "<eos>", "<unk>", ";"};

inline std::vector<std::string> normalize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out.push_back(' ');
    out += words[i];
  }
  return out;
}

inline std::string normalize_text(std::string_view text) { return join_words(normalize_words(text)); }

struct TokenSequence {
  std::vector<TokenId> ids;
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

class Vocabulary {
 public:
  Vocabulary() { rebuild({}); }

  // `words` are the non-special entries in id order, starting at id 5.
  explicit Vocabulary(std::vector<std::string> words) { rebuild(std::move(words)); }

  std::size_t size() const { return word_of_.size(); }
  const std::vector<std::string>& words() const { return words_; }

  TokenId id_of(const std::string& word) const {
    auto it = id_of_.find(word);
    return it == id_of_.end() ? special::kUnk : it->second;
  }

  const std::string& word_of(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= word_of_.size()) {
      throw std::out_of_range("token id " + std::to_string(id) + " outside vocabulary of size " +
                              std::to_string(size()));
    }
    return word_of_[static_cast<std::size_t>(id)];
  }

  bool contains(const std::string& word) const { return id_of_.contains(word); }

  TokenSequence encode(std::string_view text, bool add_bos_eos) const {
    TokenSequence seq;
    if (add_bos_eos) seq.ids.push_back(special::kBos);
    for (const auto& w : normalize_words(text)) seq.ids.push_back(id_of(w));
    if (add_bos_eos) seq.ids.push_back(special::kEos);
    return seq;
  }

  // Drops PAD/BOS/EOS, renders UNK as "<unk>" and SEP as ";".
  std::string decode(const TokenSequence& seq) const {
    std::vector<std::string> words;
    for (TokenId id : seq.ids) {
      const auto& w = word_of(id);
      if (id == special::kPad || id == special::kBos || id == special::kEos) continue;
      words.push_back(w);
    }
    return join_words(words);
  }

  json to_json() const {
    json specials = json::array();
    for (auto s : kSpecialTokens) specials.push_back(std::string(s));
    return {{"words", words_}, {"specials", specials}};
  }

  static Vocabulary from_json(const json& j) {
    const auto specials = j.at("specials").get<std::vector<std::string>>();
    if (specials.size() != kSpecialTokens.size() ||
        !std::equal(specials.begin(), specials.end(), kSpecialTokens.begin())) {
      throw std::invalid_argument("vocabulary specials do not match the fixed special set");
    }
    return Vocabulary(j.at("words").get<std::vector<std::string>>());
  }

  void save(const std::filesystem::path& path) const { write_text_file(path, to_json().dump(2) + "\n"); }
  static Vocabulary load(const std::filesystem::path& path) {
    return from_json(json::parse(read_text_file(path)));
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.words_ == b.words_; }

 private:
  void rebuild(std::vector<std::string> words) {
    words_ = std::move(words);
    word_of_.clear();
    id_of_.clear();
    for (auto s : kSpecialTokens) {
      id_of_.emplace(std::string(s), static_cast<TokenId>(word_of_.size()));
      word_of_.emplace_back(s);
    }
    for (const auto& w : words_) {
      if (id_of_.contains(w)) throw std::invalid_argument("duplicate vocabulary entry '" + w + "'");
      id_of_.emplace(w, static_cast<TokenId>(word_of_.size()));
      word_of_.push_back(w);
    }
  }

  std::vector<std::string> words_;
  std::vector<std::string> word_of_;
  std::unordered_map<std::string, TokenId> id_of_;
};

// Keeps words with frequency >= min_count, ordered by (frequency desc, word asc).
inline Vocabulary train_vocab(const std::vector<std::string>& corpus, std::size_t min_count) {
  if (corpus.empty()) throw std::invalid_argument("train_vocab: empty corpus");
  std::map<std::string, std::size_t> freq;
  for (const auto& text : corpus)
    for (auto& w : normalize_words(text)) ++freq[w];

  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [w, n] : freq) {
    const bool is_special =
        std::find(kSpecialTokens.begin(), kSpecialTokens.end(), w) != kSpecialTokens.end();
    if (!is_special && n >= min_count) entries.emplace_back(w, n);
  }
  std::stable_sort(entries.begin(), entries.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  for (auto& [w, n] : entries) words.push_back(w);
  return Vocabulary(std::move(words));
}

}  // namespace maaig
