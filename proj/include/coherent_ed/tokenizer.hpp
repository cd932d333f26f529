#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "coherent_ed/errors.hpp"

namespace coherent_ed {

struct SentenceSpan {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive
  std::size_t size() const { return end - begin; }
  bool operator==(const SentenceSpan&) const = default;
};

struct TokenizedText {
  std::vector<std::size_t> ids;
  std::vector<SentenceSpan> sentences;
};

inline bool is_sentence_terminal(std::string_view tok) {
  return tok == "." || tok == "!" || tok == "?";
}

/// Splits raw text into word tokens: whitespace separates, and every ASCII
/// punctuation character becomes its own token.
inline std::vector<std::string> split_words(std::string_view text, bool lowercase = true) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::ispunct(c) && ch != '[' && ch != ']' && ch != '_' && ch != '-') {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(lowercase ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

/// Groups tokens into sentences ending at terminal punctuation. A trailing
/// run without a terminal still forms a sentence.
inline std::vector<SentenceSpan> split_sentences(const std::vector<std::string>& tokens) {
  std::vector<SentenceSpan> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (is_sentence_terminal(tokens[i])) {
      out.push_back({begin, i + 1});
      begin = i + 1;
    }
  }
  if (begin < tokens.size()) out.push_back({begin, tokens.size()});
  return out;
}

/// Word-level tokenizer with a fixed vocabulary.
///
/// Ids 0..3 are the specials [PAD], [UNK], [CLS], [MASK]; learned words
/// follow in descending frequency, ties broken lexicographically.
class Tokenizer {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kCls = 2;
  static constexpr std::size_t kMask = 3;
  static constexpr std::size_t kNumSpecials = 4;

  Tokenizer() { reset({}); }

  explicit Tokenizer(const std::vector<std::string>& words, bool lowercase = true)
      : lowercase_(lowercase) {
    reset(words);
  }

  /// Learns a vocabulary from already-split token sequences.
  static Tokenizer fit(const std::vector<std::vector<std::string>>& corpus, std::size_t min_count = 1,
                       bool lowercase = true) {
    std::map<std::string, std::size_t> counts;
    for (const auto& seq : corpus)
      for (const auto& w : seq) ++counts[lowercase ? lower(w) : w];
    std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
    std::stable_sort(items.begin(), items.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> words;
    for (auto& [w, c] : items) {
      if (c >= min_count && !is_special(w)) words.push_back(w);
    }
    return Tokenizer(words, lowercase);
  }

  std::size_t size() const { return id_to_word_.size(); }
  bool lowercase() const { return lowercase_; }
  const std::vector<std::string>& words() const { return id_to_word_; }

  std::size_t id(std::string_view word) const {
    auto it = word_to_id_.find(std::string(word));
    if (it == word_to_id_.end() && lowercase_) it = word_to_id_.find(lower(word));
    return it == word_to_id_.end() ? kUnk : it->second;
  }
  bool contains(std::string_view word) const { return id(word) != kUnk || word == "[UNK]"; }
  const std::string& word(std::size_t id) const {
    if (id >= id_to_word_.size()) throw IndexError("token id " + std::to_string(id) + " out of range");
    return id_to_word_[id];
  }

  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const {
    std::vector<std::size_t> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  TokenizedText tokenize(std::string_view text) const {
    const auto tokens = split_words(text, lowercase_);
    return {encode(tokens), split_sentences(tokens)};
  }

  std::string detokenize(const std::vector<std::size_t>& ids) const {
    std::string out;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) out.push_back(' ');
      out += word(ids[i]);
    }
    return out;
  }

  /// FNV-1a over the vocabulary in id order; pins tokenizer identity in manifests.
  std::uint64_t hash() const {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&h](unsigned char c) {
      h ^= c;
      h *= 1099511628211ull;
    };
    mix(lowercase_ ? 1 : 0);
    for (const auto& w : id_to_word_) {
      for (char c : w) mix(static_cast<unsigned char>(c));
      mix('\n');
    }
    return h;
  }

  /// One word per line; line number = id. Specials are included.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write vocabulary: " + path);
    for (const auto& w : id_to_word_) out << w << '\n';
  }

  static Tokenizer load(const std::string& path, bool lowercase = true) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open vocabulary: " + path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    if (lines.size() < kNumSpecials || lines[kPad] != "[PAD]" || lines[kUnk] != "[UNK]" ||
        lines[kCls] != "[CLS]" || lines[kMask] != "[MASK]") {
      throw LoadError("vocabulary " + path + " does not start with the special tokens");
    }
    return Tokenizer(std::vector<std::string>(lines.begin() + kNumSpecials, lines.end()), lowercase);
  }

 private:
  static std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
  }
  static bool is_special(const std::string& w) {
    return w == "[PAD]" || w == "[UNK]" || w == "[CLS]" || w == "[MASK]";
  }

  void reset(const std::vector<std::string>& words) {
    id_to_word_ = {"[PAD]", "[UNK]", "[CLS]", "[MASK]"};
    word_to_id_.clear();
    for (std::size_t i = 0; i < id_to_word_.size(); ++i) word_to_id_[id_to_word_[i]] = i;
    for (const auto& w : words) {
      if (word_to_id_.count(w)) throw ContractError("duplicate vocabulary word: " + w);
      word_to_id_[w] = id_to_word_.size();
      id_to_word_.push_back(w);
    }
  }

  bool lowercase_ = true;
  std::vector<std::string> id_to_word_;
  std::unordered_map<std::string, std::size_t> word_to_id_;
};

}  // namespace coherent_ed
