#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "coherent_ed/errors.hpp"

namespace coherent_ed {

inline constexpr std::size_t kMaxCandidates = 30;

struct Entity {
  std::string id;
  std::string name;
  std::string domain;
  std::vector<std::string> categories;  // raw labels
  bool operator==(const Entity&) const = default;
};

struct Triplet {
  std::string head, relation, tail;
  bool operator==(const Triplet&) const = default;
};

struct Candidate {
  std::string entity;
  double prior = 0;
  bool operator==(const Candidate&) const = default;
};

/// Entities with raw category labels, relation triplets (stored only) and an
/// alias table mapping surface forms to prior-ranked candidates.
class KnowledgeBase {
 public:
  void add_entity(Entity e) {
    if (e.id.empty()) throw ContractError("entity id may not be empty");
    if (index_.count(e.id)) throw ContractError("duplicate entity id: " + e.id);
    index_[e.id] = entities_.size();
    entities_.push_back(std::move(e));
  }
  void add_category(const std::string& entity, const std::string& raw) {
    entities_[require(entity)].categories.push_back(raw);
  }
  void add_triplet(Triplet t) {
    require(t.head);
    require(t.tail);
    triplets_.push_back(std::move(t));
  }
  void add_alias(const std::string& surface, Candidate c) {
    require(c.entity);
    aliases_[surface].push_back(std::move(c));
  }

  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  const Entity& entity(const std::string& id) const { return entities_[require(id)]; }
  std::size_t index_of(const std::string& id) const { return require(id); }
  const std::vector<Entity>& entities() const { return entities_; }
  const std::vector<Triplet>& triplets() const { return triplets_; }
  const std::map<std::string, std::vector<Candidate>>& aliases() const { return aliases_; }
  std::size_t size() const { return entities_.size(); }

  /// Candidates for a surface form, highest prior first, at most kMaxCandidates.
  std::vector<Candidate> candidates(const std::string& surface) const {
    auto it = aliases_.find(surface);
    if (it == aliases_.end()) return {};
    auto out = it->second;
    std::stable_sort(out.begin(), out.end(), [](const Candidate& a, const Candidate& b) { return a.prior > b.prior; });
    if (out.size() > kMaxCandidates) out.resize(kMaxCandidates);
    return out;
  }

  bool operator==(const KnowledgeBase& o) const {
    return entities_ == o.entities_ && triplets_ == o.triplets_ && aliases_ == o.aliases_;
  }

 private:
  std::size_t require(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw ReferenceError("unknown entity id: " + id);
    return it->second;
  }

  std::vector<Entity> entities_;
  std::map<std::string, std::size_t> index_;
  std::vector<Triplet> triplets_;
  std::map<std::string, std::vector<Candidate>> aliases_;
};

struct Sentence {
  std::string label;  // topic label, or "-" for none
  std::vector<std::string> tokens;
  bool operator==(const Sentence&) const = default;
};

struct Mention {
  std::size_t start = 0;  // document token offset
  std::size_t end = 0;    // exclusive
  std::string gold;
  std::string surface;
  std::vector<Candidate> candidates;
  bool operator==(const Mention&) const = default;
};

struct Document {
  std::string id;
  std::string topic;
  std::vector<Sentence> sentences;
  std::vector<Mention> mentions;

  std::size_t num_tokens() const {
    std::size_t n = 0;
    for (const auto& s : sentences) n += s.tokens.size();
    return n;
  }
  std::vector<std::string> tokens() const {
    std::vector<std::string> out;
    for (const auto& s : sentences) out.insert(out.end(), s.tokens.begin(), s.tokens.end());
    return out;
  }
  /// Token offset of the first token of sentence `s`.
  std::size_t sentence_begin(std::size_t s) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < s; ++i) n += sentences[i].tokens.size();
    return n;
  }
  std::size_t sentence_of(std::size_t token) const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      n += sentences[i].tokens.size();
      if (token < n) return i;
    }
    throw IndexError("token " + std::to_string(token) + " beyond document " + id);
  }
  bool operator==(const Document&) const = default;
};

struct Corpus {
  std::vector<Document> documents;
  bool operator==(const Corpus&) const = default;
};

/// Checks the structural invariants of a document: spans in bounds, within one
/// sentence and non-overlapping; candidates distinct, non-increasing, at most
/// kMaxCandidates, priors summing to at most 1. With a KB, also checks that
/// every gold and candidate entity exists.
inline void validate_document(const Document& doc, const KnowledgeBase* kb = nullptr) {
  const std::size_t n = doc.num_tokens();
  std::vector<std::pair<std::size_t, std::size_t>> spans;
  for (std::size_t i = 0; i < doc.mentions.size(); ++i) {
    const Mention& m = doc.mentions[i];
    const std::string where = "document " + doc.id + " mention " + std::to_string(i);
    if (m.start >= m.end || m.end > n) throw ContractError(where + ": span out of bounds");
    if (doc.sentence_of(m.start) != doc.sentence_of(m.end - 1)) {
      throw ContractError(where + ": span crosses a sentence boundary");
    }
    spans.emplace_back(m.start, m.end);
    if (m.candidates.size() > kMaxCandidates) throw ContractError(where + ": more than 30 candidates");
    double total = 0;
    for (std::size_t c = 0; c < m.candidates.size(); ++c) {
      total += m.candidates[c].prior;
      if (m.candidates[c].prior < 0) throw ContractError(where + ": negative prior");
      if (c > 0 && m.candidates[c].prior > m.candidates[c - 1].prior) {
        throw ContractError(where + ": candidate priors must be non-increasing");
      }
      for (std::size_t d = 0; d < c; ++d) {
        if (m.candidates[d].entity == m.candidates[c].entity) {
          throw ContractError(where + ": duplicate candidate " + m.candidates[c].entity);
        }
      }
      if (kb && !kb->contains(m.candidates[c].entity)) {
        throw ReferenceError(where + ": unknown candidate entity " + m.candidates[c].entity);
      }
    }
    if (total > 1.0 + 1e-9) throw ContractError(where + ": candidate priors sum above 1");
    if (kb && !kb->contains(m.gold)) throw ReferenceError(where + ": unknown gold entity " + m.gold);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].first < spans[i - 1].second) {
      throw ContractError("document " + doc.id + ": overlapping mention spans");
    }
  }
}

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t tab = line.find('\t', pos);
    out.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
    if (tab == std::string::npos) break;
    pos = tab + 1;
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::size_t parse_size(const std::string& s, std::size_t line, const char* field) {
  std::size_t idx = 0;
  unsigned long long v = 0;
  try {
    if (s.empty() || s[0] == '-') throw std::invalid_argument(s);
    v = std::stoull(s, &idx);
  } catch (const std::exception&) {
    throw ParseError(std::string("bad ") + field + " '" + s + "'", line);
  }
  if (idx != s.size()) throw ParseError(std::string("bad ") + field + " '" + s + "'", line);
  return static_cast<std::size_t>(v);
}

inline double parse_double(const std::string& s, std::size_t line, const char* field) {
  std::size_t idx = 0;
  double v = 0;
  try {
    v = std::stod(s, &idx);
  } catch (const std::exception&) {
    throw ParseError(std::string("bad ") + field + " '" + s + "'", line);
  }
  if (idx != s.size() || !std::isfinite(v)) throw ParseError(std::string("bad ") + field + " '" + s + "'", line);
  return v;
}

inline void require_fields(const std::vector<std::string>& f, std::size_t n, std::size_t line) {
  if (f.size() != n) {
    throw ParseError("record '" + f[0] + "' expects " + std::to_string(n - 1) + " fields, got " +
                         std::to_string(f.size() - 1),
                     line);
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot write " + path);
  out << text;
  if (!out) throw LoadError("write failed: " + path);
}

template <class F>
void for_each_line(const std::string& text, F&& f) {
  std::size_t pos = 0, line = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    const bool terminated = nl != std::string::npos;
    if (!terminated) nl = text.size();
    std::string s = text.substr(pos, nl - pos);
    if (!s.empty() && s.back() == '\r') s.pop_back();
    ++line;
    f(s, line, pos, terminated);
    pos = nl + 1;
  }
}

}  // namespace detail

// ---------------------------------------------------------------- KB file

inline std::string serialize_kb(const KnowledgeBase& kb) {
  std::ostringstream out;
  for (const auto& e : kb.entities()) out << "E\t" << e.id << '\t' << e.name << '\t' << e.domain << '\n';
  for (const auto& e : kb.entities())
    for (const auto& c : e.categories) out << "K\t" << e.id << '\t' << c << '\n';
  for (const auto& t : kb.triplets()) out << "T\t" << t.head << '\t' << t.relation << '\t' << t.tail << '\n';
  for (const auto& [surface, cands] : kb.aliases())
    for (const auto& c : cands) out << "A\t" << surface << '\t' << c.entity << '\t' << detail::format_double(c.prior) << '\n';
  return out.str();
}

inline KnowledgeBase parse_kb(const std::string& text) {
  KnowledgeBase kb;
  detail::for_each_line(text, [&](const std::string& s, std::size_t line, std::size_t, bool) {
    if (s.empty() || s[0] == '#') return;
    const auto f = detail::split_tabs(s);
    try {
      if (f[0] == "E") {
        detail::require_fields(f, 4, line);
        kb.add_entity({f[1], f[2], f[3], {}});
      } else if (f[0] == "K") {
        detail::require_fields(f, 3, line);
        kb.add_category(f[1], f[2]);
      } else if (f[0] == "T") {
        detail::require_fields(f, 4, line);
        kb.add_triplet({f[1], f[2], f[3]});
      } else if (f[0] == "A") {
        detail::require_fields(f, 4, line);
        kb.add_alias(f[1], {f[2], detail::parse_double(f[3], line, "prior")});
      } else {
        throw ParseError("unknown record type '" + f[0] + "'", line);
      }
    } catch (const ReferenceError& e) {
      throw ReferenceError("line " + std::to_string(line) + ": " + e.what());
    } catch (const ContractError& e) {
      throw ParseError(e.what(), line);
    }
  });
  return kb;
}

inline void save_kb(const KnowledgeBase& kb, const std::string& path) { detail::write_file(path, serialize_kb(kb)); }
inline KnowledgeBase load_kb(const std::string& path) { return parse_kb(detail::read_file(path)); }

// ---------------------------------------------------------------- corpus file

inline std::string serialize_corpus(const Corpus& corpus) {
  std::ostringstream out;
  for (const auto& d : corpus.documents) {
    out << "D\t" << d.id << '\t' << d.topic << '\n';
    for (const auto& s : d.sentences) {
      out << "S\t" << s.label << '\t';
      for (std::size_t i = 0; i < s.tokens.size(); ++i) out << (i ? " " : "") << s.tokens[i];
      out << '\n';
    }
    for (const auto& m : d.mentions) {
      out << "M\t" << m.start << '\t' << m.end << '\t' << m.gold << '\t' << m.surface << '\n';
      for (const auto& c : m.candidates) out << "C\t" << c.entity << '\t' << detail::format_double(c.prior) << '\n';
    }
    out << "E\n";
  }
  return out.str();
}

/// Parses the corpus format. With a KB, unknown gold or candidate entities
/// raise ReferenceError.
inline Corpus parse_corpus(const std::string& text, const KnowledgeBase* kb = nullptr) {
  Corpus corpus;
  std::optional<Document> cur;
  std::size_t cur_start_byte = 0;
  auto handle = [&](const std::string& s, std::size_t line, std::size_t byte) {
    if (s.empty() || s[0] == '#') return;
    const auto f = detail::split_tabs(s);
    const std::string& kind = f[0];
    if (kind == "D") {
      detail::require_fields(f, 3, line);
      if (cur) throw ParseError("document " + cur->id + " not closed before new 'D' record", line);
      cur = Document{f[1], f[2], {}, {}};
      cur_start_byte = byte;
      return;
    }
    if (!cur) throw ParseError("record '" + kind + "' outside a document", line);
    if (kind == "S") {
      detail::require_fields(f, 3, line);
      if (!cur->mentions.empty()) throw ParseError("sentence after mention records", line);
      std::istringstream ts(f[2]);
      Sentence sent{f[1], {}};
      for (std::string tok; ts >> tok;) sent.tokens.push_back(tok);
      if (sent.tokens.empty()) throw ParseError("empty sentence", line);
      cur->sentences.push_back(std::move(sent));
    } else if (kind == "M") {
      detail::require_fields(f, 5, line);
      Mention m;
      m.start = detail::parse_size(f[1], line, "span start");
      m.end = detail::parse_size(f[2], line, "span end");
      m.gold = f[3];
      m.surface = f[4];
      cur->mentions.push_back(std::move(m));
    } else if (kind == "C") {
      detail::require_fields(f, 3, line);
      if (cur->mentions.empty()) throw ParseError("candidate before any mention", line);
      cur->mentions.back().candidates.push_back({f[1], detail::parse_double(f[2], line, "prior")});
    } else if (kind == "E") {
      detail::require_fields(f, 1, line);
      try {
        validate_document(*cur, kb);
      } catch (const ReferenceError& e) {
        throw ReferenceError("line " + std::to_string(line) + ": " + e.what());
      } catch (const ContractError& e) {
        throw ParseError(e.what(), line);
      }
      corpus.documents.push_back(std::move(*cur));
      cur.reset();
    } else {
      throw ParseError("unknown record type '" + kind + "'", line);
    }
  };
  detail::for_each_line(text, [&](const std::string& s, std::size_t line, std::size_t byte, bool terminated) {
    if (terminated) return handle(s, line, byte);
    try {
      handle(s, line, byte);
    } catch (const ParseError& e) {
      throw ParseError("truncated corpus: unterminated final record at byte offset " + std::to_string(byte) +
                           " (" + e.what() + ")",
                       0);
    }
  });
  if (cur) {
    throw ParseError("truncated corpus: document " + cur->id + " starting at byte offset " +
                         std::to_string(cur_start_byte) + " is not closed at end of input (byte offset " +
                         std::to_string(text.size()) + ")",
                     0);
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  detail::write_file(path, serialize_corpus(corpus));
}
inline Corpus load_corpus(const std::string& path, const KnowledgeBase* kb = nullptr) {
  return parse_corpus(detail::read_file(path), kb);
}

}  // namespace coherent_ed
