#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "coherent_ed/category_memory.hpp"
#include "coherent_ed/kb.hpp"
#include "coherent_ed/tokenizer.hpp"

namespace coherent_ed {

/// Dense entity indices 0..n-1 in KB order, then MASK = n and PAD = n+1.
class EntityVocabulary {
 public:
  EntityVocabulary() = default;

  explicit EntityVocabulary(std::vector<std::string> ids) : ids_(std::move(ids)) {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (ids_[i].empty()) throw ContractError("entity vocabulary: empty id at " + std::to_string(i));
      if (!index_.emplace(ids_[i], i).second) throw ContractError("entity vocabulary: duplicate id " + ids_[i]);
    }
  }

  static EntityVocabulary from_kb(const KnowledgeBase& kb) {
    std::vector<std::string> ids;
    for (const auto& e : kb.entities()) ids.push_back(e.id);
    return EntityVocabulary(std::move(ids));
  }

  std::size_t size() const { return ids_.size(); }
  std::size_t mask() const { return ids_.size(); }
  std::size_t pad() const { return ids_.size() + 1; }
  /// Rows of the input embedding table (real entities + MASK + PAD).
  std::size_t table_rows() const { return ids_.size() + 2; }

  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  std::size_t index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ReferenceError("entity not in vocabulary: " + id);
    return it->second;
  }
  const std::string& id(std::size_t index) const {
    if (index >= ids_.size()) throw IndexError("entity index " + std::to_string(index) + " out of range");
    return ids_[index];
  }
  const std::vector<std::string>& ids() const { return ids_; }

  void save(const std::string& path) const {
    std::string out;
    for (const auto& id : ids_) out += id + "\n";
    detail::write_file(path, out);
  }
  static EntityVocabulary load(const std::string& path) {
    std::vector<std::string> ids;
    detail::for_each_line(detail::read_file(path), [&](const std::string& s, std::size_t line, std::size_t, bool) {
      if (s.empty()) throw ParseError("empty entity id", line);
      ids.push_back(s);
    });
    return EntityVocabulary(std::move(ids));
  }

  bool operator==(const EntityVocabulary& o) const { return ids_ == o.ids_; }

 private:
  std::vector<std::string> ids_;
  std::map<std::string, std::size_t> index_;
};

/// Category indices of every real entity, by dense entity index.
inline std::vector<std::vector<std::size_t>> entity_category_table(const KnowledgeBase& kb,
                                                                   const EntityVocabulary& ents,
                                                                   const CategoryVocabulary& cats) {
  std::vector<std::vector<std::size_t>> out(ents.size());
  for (std::size_t i = 0; i < ents.size(); ++i) {
    const std::string& id = ents.id(i);
    if (kb.contains(id)) out[i] = cats.indices_for(kb.entity(id));
  }
  return out;
}

struct ScoredCandidate {
  std::size_t entity = 0;  // dense index
  double prior = 0;
};

struct CandidateSet {
  std::size_t mention = 0;
  std::vector<ScoredCandidate> entries;

  bool empty() const { return entries.empty(); }
  bool contains(std::size_t entity) const {
    return std::any_of(entries.begin(), entries.end(), [&](const ScoredCandidate& c) { return c.entity == entity; });
  }

  void validate() const {
    if (entries.size() > kMaxCandidates) {
      throw ContractError("mention " + std::to_string(mention) + " has " + std::to_string(entries.size()) +
                          " candidates (max " + std::to_string(kMaxCandidates) + ")");
    }
    for (std::size_t i = 0; i < entries.size(); ++i) {
      for (std::size_t j = 0; j < i; ++j) {
        if (entries[j].entity == entries[i].entity) {
          throw ContractError("mention " + std::to_string(mention) + " lists a candidate twice");
        }
      }
      if (i > 0 && entries[i].prior > entries[i - 1].prior) {
        throw ContractError("mention " + std::to_string(mention) + " candidate priors not non-increasing");
      }
    }
  }
};

struct EncodedMention {
  std::size_t start = 0;  // document token offsets, end exclusive
  std::size_t end = 0;
  std::size_t sentence = 0;
  std::size_t gold = 0;  // dense index
  CandidateSet candidates;
};

/// A corpus document mapped onto token ids and dense entity indices.
struct EncodedDocument {
  std::string id;
  std::string topic;
  std::vector<std::vector<std::size_t>> sentences;
  std::vector<std::string> sentence_labels;
  std::vector<std::size_t> sentence_begin;
  std::vector<EncodedMention> mentions;

  std::size_t num_tokens() const {
    return sentences.empty() ? 0 : sentence_begin.back() + sentences.back().size();
  }
  std::size_t token(std::size_t offset) const {
    const std::size_t s = sentence_of(offset);
    return sentences[s][offset - sentence_begin[s]];
  }
  std::size_t sentence_of(std::size_t offset) const {
    auto it = std::upper_bound(sentence_begin.begin(), sentence_begin.end(), offset);
    if (it == sentence_begin.begin() || offset >= num_tokens()) {
      throw IndexError("token offset " + std::to_string(offset) + " outside document " + id);
    }
    return static_cast<std::size_t>(it - sentence_begin.begin()) - 1;
  }
};

/// Unknown gold or candidate entities are a corpus/vocabulary mismatch.
inline EncodedDocument encode_document(const Document& doc, const Tokenizer& tok, const EntityVocabulary& ents) {
  validate_document(doc);
  EncodedDocument out;
  out.id = doc.id;
  out.topic = doc.topic;
  std::size_t offset = 0;
  for (const auto& s : doc.sentences) {
    out.sentence_begin.push_back(offset);
    out.sentences.push_back(tok.encode(s.tokens));
    out.sentence_labels.push_back(s.label);
    offset += s.tokens.size();
  }
  auto lookup = [&](const std::string& id, const char* what) {
    if (!ents.contains(id)) throw LoadError("document " + doc.id + ": " + what + " entity " + id + " not in vocabulary");
    return ents.index_of(id);
  };
  for (std::size_t i = 0; i < doc.mentions.size(); ++i) {
    const Mention& m = doc.mentions[i];
    EncodedMention em;
    em.start = m.start;
    em.end = m.end;
    em.sentence = out.sentence_of(m.start);
    em.gold = lookup(m.gold, "gold");
    em.candidates.mention = i;
    for (const auto& c : m.candidates) em.candidates.entries.push_back({lookup(c.entity, "candidate"), c.prior});
    out.mentions.push_back(std::move(em));
  }
  return out;
}

inline std::vector<EncodedDocument> encode_corpus(const Corpus& c, const Tokenizer& tok, const EntityVocabulary& ents) {
  std::vector<EncodedDocument> out;
  out.reserve(c.documents.size());
  for (const auto& d : c.documents) out.push_back(encode_document(d, tok, ents));
  return out;
}

/// Model input layout for one forward pass: topic sentences, a word window
/// and one entity slot per in-window mention, padded to `num_slots`.
struct PreparedInput {
  std::vector<std::size_t> topic_sentences;  // ascending sentence indices
  std::size_t window_begin = 0;
  std::size_t window_end = 0;
  std::vector<std::size_t> word_ids;
  std::vector<std::size_t> slot_mentions;                 // mention index per real slot
  std::vector<std::vector<std::size_t>> slot_positions;  // window-relative word positions
  std::size_t num_slots = 0;                             // real + PAD

  std::size_t length() const { return topic_sentences.size() + word_ids.size() + num_slots; }
  std::optional<std::size_t> slot_of(std::size_t mention) const {
    for (std::size_t i = 0; i < slot_mentions.size(); ++i)
      if (slot_mentions[i] == mention) return i;
    return std::nullopt;
  }
};

namespace detail {

inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
  if (k >= pool.size()) return pool;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

}  // namespace detail

/// Builds the input layout of `doc` for total length L with k topic slots and
/// n_e entity slots. Documents longer than the word budget L - k - n_e are
/// cut to whole sentences grown alternately backward and forward from the
/// focus mention's sentence; topic sentences then come from outside the
/// window first. k larger than the sentence count samples every sentence.
inline PreparedInput prepare_inputs(const EncodedDocument& doc, std::size_t L, std::size_t k, std::size_t n_e,
                                    std::size_t focus_mention, Rng& rng) {
  const std::size_t num_sent = doc.sentences.size();
  const std::size_t kk = std::min(k, num_sent);
  if (L <= kk + n_e) {
    throw ContractError("input length " + std::to_string(L) + " leaves no room for words with k=" +
                        std::to_string(kk) + " and n_e=" + std::to_string(n_e));
  }
  const std::size_t budget = L - kk - n_e;
  const std::size_t total = doc.num_tokens();
  PreparedInput in;
  bool whole = total <= budget;
  if (whole) {
    in.window_end = total;
  } else {
    if (focus_mention >= doc.mentions.size()) {
      throw IndexError("focus mention " + std::to_string(focus_mention) + " out of range");
    }
    const EncodedMention& fm = doc.mentions[focus_mention];
    std::size_t lo = fm.sentence, hi = fm.sentence;
    auto span_of = [&](std::size_t a, std::size_t b) {
      return doc.sentence_begin[b] + doc.sentences[b].size() - doc.sentence_begin[a];
    };
    if (span_of(lo, hi) > budget) {
      const std::size_t sb = doc.sentence_begin[lo], se = sb + doc.sentences[lo].size();
      const std::size_t mid = (fm.start + fm.end) / 2;
      std::size_t begin = mid > budget / 2 ? mid - budget / 2 : 0;
      begin = std::clamp(begin, sb, se - budget);
      in.window_begin = begin;
      in.window_end = begin + budget;
    } else {
      bool back = true;
      for (;;) {
        const bool can_back = lo > 0 && span_of(lo - 1, hi) <= budget;
        const bool can_fwd = hi + 1 < num_sent && span_of(lo, hi + 1) <= budget;
        if (!can_back && !can_fwd) break;
        if ((back && can_back) || !can_fwd) --lo;
        else ++hi;
        back = !back;
      }
      in.window_begin = doc.sentence_begin[lo];
      in.window_end = doc.sentence_begin[hi] + doc.sentences[hi].size();
    }
  }
  for (std::size_t t = in.window_begin; t < in.window_end; ++t) in.word_ids.push_back(doc.token(t));

  std::vector<std::size_t> outside, inside;
  for (std::size_t s = 0; s < num_sent; ++s) {
    const std::size_t b = doc.sentence_begin[s], e = b + doc.sentences[s].size();
    const bool in_window = !whole && b >= in.window_begin && e <= in.window_end;
    (in_window ? inside : outside).push_back(s);
  }
  auto picked = detail::sample_without_replacement(outside, kk, rng);
  if (picked.size() < kk) {
    const auto extra = detail::sample_without_replacement(inside, kk - picked.size(), rng);
    picked.insert(picked.end(), extra.begin(), extra.end());
  }
  std::sort(picked.begin(), picked.end());
  in.topic_sentences = std::move(picked);

  for (std::size_t i = 0; i < doc.mentions.size(); ++i) {
    const EncodedMention& m = doc.mentions[i];
    if (m.start < in.window_begin || m.end > in.window_end) continue;
    in.slot_mentions.push_back(i);
    std::vector<std::size_t> pos;
    for (std::size_t t = m.start; t < m.end; ++t) pos.push_back(t - in.window_begin);
    in.slot_positions.push_back(std::move(pos));
  }
  if (in.slot_mentions.size() > n_e) {
    throw ContractError("document " + doc.id + ": " + std::to_string(in.slot_mentions.size()) +
                        " mentions in window exceed n_e=" + std::to_string(n_e));
  }
  in.num_slots = n_e;
  return in;
}

}  // namespace coherent_ed
