#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <cstdint>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "coherent_ed/kb.hpp"
#include "coherent_ed/tensor.hpp"
#include "coherent_ed/tokenizer.hpp"

namespace coherent_ed {

struct SyntheticConfig {
  std::size_t num_topics = 2;
  std::size_t entities_per_topic = 12;  // unambiguous entities per topic
  std::size_t homonym_groups = 4;       // each group holds one entity per topic
  std::size_t leaves_per_topic = 4;
  std::size_t categories_per_entity = 2;
  std::size_t content_words_per_topic = 40;
  std::size_t templates_per_topic = 24;
  std::size_t sentences_per_doc = 6;
  std::size_t min_mentions = 2;
  std::size_t max_mentions = 3;
  std::size_t distractors = 3;          // extra candidates for unambiguous mentions
  double homonym_only_fraction = 0.5;   // docs whose mention sentence has homonyms only
  /// Docs whose context sentences are neutral filler; their homonyms are
  /// resolvable only through the categories of co-mentioned entities.
  double neutral_context_fraction = 0.0;
  std::size_t train_docs = 2000;
  std::size_t test_docs = 200;
  std::uint64_t seed = 7;

  void validate() const {
    if (num_topics < 2 && homonym_groups > 0) throw ContractError("homonym groups need at least 2 topics");
    if (num_topics == 0) throw ContractError("num_topics must be positive");
    if (leaves_per_topic == 0 || categories_per_entity == 0 || categories_per_entity > leaves_per_topic) {
      throw ContractError("categories_per_entity must be in [1, leaves_per_topic]");
    }
    if (sentences_per_doc < 3) throw ContractError("sentences_per_doc must be at least 3");
    if (min_mentions == 0 || min_mentions > max_mentions) throw ContractError("bad mention count range");
    if (templates_per_topic < 1 || content_words_per_topic < 4) throw ContractError("topic pools too small");
    if (homonym_only_fraction < 0 || homonym_only_fraction > 1) throw ContractError("bad homonym_only_fraction");
    if (neutral_context_fraction < 0 || neutral_context_fraction > 1) {
      throw ContractError("bad neutral_context_fraction");
    }
  }
};

/// Vocabulary and structure of a generated world, recoverable from the config alone.
struct SyntheticWorld {
  struct Topic {
    std::string name;
    std::string region;
    std::vector<std::string> leaves;   // raw leaf label heads, e.g. "Clubs based"
    std::vector<std::string> preps;    // preposition used with each leaf
    std::vector<std::string> content_words;
    std::vector<std::vector<std::string>> templates;  // "#" marks a content-word slot
    std::vector<std::string> entities;  // unambiguous entity ids
  };
  std::vector<Topic> topics;
  std::vector<std::vector<std::string>> homonym_groups;  // entity ids, index = topic
  std::vector<std::string> neutral_words;
  std::vector<std::vector<std::string>> filler_templates;
  std::vector<std::vector<std::string>> mention_templates;  // "@" marks an entity slot

  /// Topic index of an entity id, or npos.
  std::size_t topic_of(const std::string& entity) const {
    for (std::size_t t = 0; t < topics.size(); ++t) {
      if (std::find(topics[t].entities.begin(), topics[t].entities.end(), entity) != topics[t].entities.end()) return t;
    }
    for (const auto& g : homonym_groups)
      for (std::size_t t = 0; t < g.size(); ++t)
        if (g[t] == entity) return t;
    return static_cast<std::size_t>(-1);
  }
  bool is_homonym(const std::string& entity) const {
    for (const auto& g : homonym_groups)
      if (std::find(g.begin(), g.end(), entity) != g.end()) return true;
    return false;
  }
};

namespace detail {

inline const std::array<const char*, 8> kTopicNames = {"finance", "sports", "music", "science",
                                                       "farming", "shipping", "theatre", "mining"};
inline const std::array<const char*, 8> kRegions = {"Avalon", "Borea", "Cantera", "Dunmore",
                                                    "Elstree", "Fennick", "Galway", "Harrow"};
inline const std::array<const char*, 12> kLeafNouns = {"Companies", "Clubs", "Venues", "Festivals",
                                                       "Agencies", "Rivers", "Schools", "Teams",
                                                       "Bands", "Museums", "Parks", "Bridges"};
inline const std::array<const char*, 12> kLeafVerbs = {"established", "based", "located", "held",
                                                       "founded", "named", "run", "built",
                                                       "formed", "opened", "listed", "owned"};
inline const std::array<const char*, 6> kPreps = {"in", "from", "for", "of", "by", "involving"};

inline const std::vector<std::string> kNeutral = {
    "the", "a", "it", "was", "that", "this", "and", "then", "later", "report", "said", "noted",
    "people", "many", "some", "with", "after", "before", "during", "week", "day", "again", "also",
    "there", "today", "often", "still", "news", "local", "one", "met", "joined", "called", "visited"};

inline std::string pseudo_word(Rng& rng, std::set<std::string>& used, std::size_t syllables) {
  static const char* cons[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"};
  static const char* vows[] = {"a", "e", "i", "o", "u"};
  std::uniform_int_distribution<std::size_t> c(0, 13), v(0, 4);
  for (;;) {
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
      w += cons[c(rng)];
      w += vows[v(rng)];
    }
    w += cons[c(rng)];
    if (used.insert(w).second) return w;
  }
}

inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

/// Symmetric Dirichlet(1) draw of size n, sorted descending.
inline std::vector<double> sorted_dirichlet(Rng& rng, std::size_t n) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<double> w(n);
  double total = 0;
  for (auto& x : w) total += (x = g(rng) + 1e-12);
  for (auto& x : w) x /= total;
  std::sort(w.begin(), w.end(), std::greater<>());
  // Guard against rounding pushing the sum above 1.
  double s = std::accumulate(w.begin(), w.end(), 0.0);
  if (s > 1.0) w.back() -= (s - 1.0);
  return w;
}

}  // namespace detail

/// Builds the vocabulary, templates and entity inventory of the synthetic
/// world. Deterministic in cfg.seed.
inline SyntheticWorld build_synthetic_world(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + 1);
  SyntheticWorld w;
  std::set<std::string> used(detail::kNeutral.begin(), detail::kNeutral.end());
  w.neutral_words = detail::kNeutral;

  std::size_t leaf_counter = 0;
  for (std::size_t t = 0; t < cfg.num_topics; ++t) {
    SyntheticWorld::Topic topic;
    topic.name = t < detail::kTopicNames.size() ? detail::kTopicNames[t] : "topic" + std::to_string(t);
    topic.region = t < detail::kRegions.size() ? detail::kRegions[t] : "Region" + std::to_string(t);
    for (std::size_t l = 0; l < cfg.leaves_per_topic; ++l, ++leaf_counter) {
      std::string head = std::string(detail::kLeafNouns[leaf_counter % detail::kLeafNouns.size()]) + " " +
                         detail::kLeafVerbs[(leaf_counter / detail::kLeafNouns.size() + leaf_counter) %
                                            detail::kLeafVerbs.size()];
      if (leaf_counter >= detail::kLeafNouns.size()) head += " " + std::to_string(leaf_counter);
      topic.leaves.push_back(head);
      topic.preps.push_back(detail::kPreps[leaf_counter % detail::kPreps.size()]);
    }
    for (std::size_t i = 0; i < cfg.content_words_per_topic; ++i) {
      topic.content_words.push_back(detail::pseudo_word(rng, used, 2));
    }
    for (std::size_t i = 0; i < cfg.templates_per_topic; ++i) {
      const std::size_t len = 8 + detail::uniform_index(rng, 4);  // 8..11 tokens including "."
      std::vector<std::string> tpl;
      for (std::size_t j = 0; j + 1 < len; ++j) {
        // Roughly two content slots for every neutral word.
        if (detail::uniform_index(rng, 3) == 0) tpl.push_back(w.neutral_words[detail::uniform_index(rng, w.neutral_words.size())]);
        else tpl.push_back("#");
      }
      if (std::count(tpl.begin(), tpl.end(), "#") < 3) tpl[0] = tpl[2] = tpl[4] = "#";
      tpl.push_back(".");
      topic.templates.push_back(std::move(tpl));
    }
    w.topics.push_back(std::move(topic));
  }

  std::size_t entity_counter = 0;
  for (std::size_t t = 0; t < cfg.num_topics; ++t) {
    for (std::size_t e = 0; e < cfg.entities_per_topic; ++e) {
      w.topics[t].entities.push_back("Q" + std::to_string(++entity_counter));
    }
  }
  for (std::size_t g = 0; g < cfg.homonym_groups; ++g) {
    std::vector<std::string> group;
    for (std::size_t t = 0; t < cfg.num_topics; ++t) group.push_back("Q" + std::to_string(++entity_counter));
    w.homonym_groups.push_back(std::move(group));
  }

  for (std::size_t i = 0; i < 12; ++i) {
    const std::size_t len = 9 + detail::uniform_index(rng, 2);
    std::vector<std::string> tpl;
    for (std::size_t j = 0; j + 1 < len; ++j) tpl.push_back(w.neutral_words[detail::uniform_index(rng, w.neutral_words.size())]);
    tpl.push_back(".");
    w.filler_templates.push_back(std::move(tpl));
  }
  const std::vector<std::vector<std::string>> mention_shapes = {
      {"the", "report", "said", "@", "met", "@", "again", "that", "day", "."},
      {"later", "@", "joined", "@", "after", "the", "local", "news", "week", "."},
      {"people", "noted", "that", "@", "and", "@", "met", "again", "today", "."},
      {"there", "@", "visited", "@", "and", "@", "during", "the", "day", "."},
      {"news", "said", "@", "called", "@", "then", "@", "joined", "later", "."},
      {"one", "report", "noted", "@", "with", "@", "and", "also", "@", "today", "."},
  };
  w.mention_templates = mention_shapes;
  return w;
}

/// Pseudo-word surface forms; homonym groups share one surface.
inline std::map<std::string, std::vector<std::string>> synthetic_surfaces(const SyntheticConfig& cfg,
                                                                          const SyntheticWorld& w) {
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + 2);
  std::set<std::string> used(w.neutral_words.begin(), w.neutral_words.end());
  for (const auto& t : w.topics) used.insert(t.content_words.begin(), t.content_words.end());
  std::map<std::string, std::vector<std::string>> out;
  for (const auto& t : w.topics) {
    for (const auto& e : t.entities) {
      std::vector<std::string> name{detail::pseudo_word(rng, used, 3)};
      if (detail::uniform_index(rng, 3) == 0) name.push_back(detail::pseudo_word(rng, used, 1));
      out[e] = name;
    }
  }
  for (const auto& g : w.homonym_groups) {
    const std::string surface = detail::pseudo_word(rng, used, 2);
    for (const auto& e : g) out[e] = {surface};
  }
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& toks) {
  std::string s;
  for (std::size_t i = 0; i < toks.size(); ++i) s += (i ? " " : "") + toks[i];
  return s;
}

/// Knowledge base of the synthetic world: each topic is a category subtree
/// whose leaves are "<Leaf> <prep> <Region>" labels, so every entity's
/// normalized categories are its leaves plus the shared "[PERP] <Region>".
inline KnowledgeBase generate_synthetic_kb(const SyntheticConfig& cfg) {
  const SyntheticWorld w = build_synthetic_world(cfg);
  const auto surfaces = synthetic_surfaces(cfg, w);
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + 3);
  KnowledgeBase kb;
  auto add = [&](const std::string& id, std::size_t t) {
    const auto& topic = w.topics[t];
    Entity e{id, join_tokens(surfaces.at(id)), topic.name, {}};
    std::vector<std::size_t> leaves(topic.leaves.size());
    std::iota(leaves.begin(), leaves.end(), 0);
    std::shuffle(leaves.begin(), leaves.end(), rng);
    leaves.resize(cfg.categories_per_entity);
    std::sort(leaves.begin(), leaves.end());
    for (std::size_t l : leaves) e.categories.push_back(topic.leaves[l] + " " + topic.preps[l] + " " + topic.region);
    kb.add_entity(std::move(e));
  };
  for (std::size_t t = 0; t < w.topics.size(); ++t)
    for (const auto& id : w.topics[t].entities) add(id, t);
  for (const auto& g : w.homonym_groups)
    for (std::size_t t = 0; t < g.size(); ++t) add(g[t], t);

  for (const auto& t : w.topics)
    for (std::size_t i = 1; i < t.entities.size(); ++i) kb.add_triplet({t.entities[i], "related_to", t.entities[0]});

  for (const auto& e : kb.entities()) {
    std::size_t sharing = 0;
    for (const auto& o : kb.entities()) sharing += o.name == e.name;
    kb.add_alias(e.name, {e.id, 1.0 / static_cast<double>(sharing)});
  }
  return kb;
}

namespace detail {

inline Document make_synthetic_document(const SyntheticConfig& cfg, const SyntheticWorld& w,
                                        const KnowledgeBase& kb, const std::string& id, std::size_t topic_idx,
                                        Rng& rng) {
  const auto& topic = w.topics[topic_idx];
  Document doc{id, topic.name, {}, {}};
  const std::size_t topical = cfg.sentences_per_doc - 2;
  const bool neutral =
      cfg.neutral_context_fraction > 0 && std::bernoulli_distribution(cfg.neutral_context_fraction)(rng);
  for (std::size_t s = 0; s < topical; ++s) {
    if (neutral) {
      doc.sentences.push_back({"-", w.filler_templates[uniform_index(rng, w.filler_templates.size())]});
      continue;
    }
    const auto& tpl = topic.templates[uniform_index(rng, topic.templates.size())];
    Sentence sent{topic.name, {}};
    for (const auto& tok : tpl) {
      sent.tokens.push_back(tok == "#" ? topic.content_words[uniform_index(rng, topic.content_words.size())] : tok);
    }
    doc.sentences.push_back(std::move(sent));
  }
  doc.sentences.push_back({"-", w.filler_templates[uniform_index(rng, w.filler_templates.size())]});

  const std::size_t n_mentions = cfg.min_mentions + uniform_index(rng, cfg.max_mentions - cfg.min_mentions + 1);
  const bool homonym_only =
      !w.homonym_groups.empty() && std::bernoulli_distribution(cfg.homonym_only_fraction)(rng) && !neutral;
  // Pick entities: at least one homonym; distinct groups and distinct unambiguous entities.
  std::vector<std::string> chosen;
  std::vector<std::size_t> groups(w.homonym_groups.size());
  std::iota(groups.begin(), groups.end(), 0);
  std::shuffle(groups.begin(), groups.end(), rng);
  std::vector<std::string> plain = topic.entities;
  std::shuffle(plain.begin(), plain.end(), rng);
  std::size_t gi = 0, pi = 0;
  for (std::size_t m = 0; m < n_mentions; ++m) {
    const bool want_homonym = m == 0 || homonym_only || plain.empty();
    if (want_homonym && gi < groups.size()) chosen.push_back(w.homonym_groups[groups[gi++]][topic_idx]);
    else if (pi < plain.size()) chosen.push_back(plain[pi++]);
    else if (gi < groups.size()) chosen.push_back(w.homonym_groups[groups[gi++]][topic_idx]);
  }
  std::shuffle(chosen.begin(), chosen.end(), rng);

  std::vector<const std::vector<std::string>*> fits;
  for (const auto& tpl : w.mention_templates) {
    if (static_cast<std::size_t>(std::count(tpl.begin(), tpl.end(), "@")) == chosen.size()) fits.push_back(&tpl);
  }
  if (fits.empty()) throw ContractError("no mention template with " + std::to_string(chosen.size()) + " slots");
  const auto& tpl = *fits[uniform_index(rng, fits.size())];

  Sentence sent{"-", {}};
  const std::size_t base = doc.num_tokens();
  std::size_t next = 0;
  for (const auto& tok : tpl) {
    if (tok != "@") {
      sent.tokens.push_back(tok);
      continue;
    }
    const std::string& gold = chosen[next++];
    const auto surface = split_words(kb.entity(gold).name);
    Mention m;
    m.start = base + sent.tokens.size();
    m.end = m.start + surface.size();
    m.gold = gold;
    m.surface = kb.entity(gold).name;
    sent.tokens.insert(sent.tokens.end(), surface.begin(), surface.end());

    std::vector<std::string> cand_ids;
    const bool homonym = w.is_homonym(gold);
    if (homonym) {
      for (const auto& g : w.homonym_groups)
        if (std::find(g.begin(), g.end(), gold) != g.end()) cand_ids = g;
    } else {
      cand_ids.push_back(gold);
      std::vector<std::string> pool;
      for (const auto& e : kb.entities())
        if (e.id != gold) pool.push_back(e.id);
      std::shuffle(pool.begin(), pool.end(), rng);
      for (std::size_t d = 0; d < cfg.distractors && d < pool.size(); ++d) cand_ids.push_back(pool[d]);
    }
    const auto priors = sorted_dirichlet(rng, cand_ids.size());
    // Homonyms: the top prior lands on a wrong entity half the time.
    // Unambiguous mentions: gold takes the top prior.
    std::vector<std::string> order;
    if (homonym) {
      std::vector<std::string> wrong;
      for (const auto& c : cand_ids)
        if (c != gold) wrong.push_back(c);
      std::shuffle(wrong.begin(), wrong.end(), rng);
      if (std::bernoulli_distribution(0.5)(rng)) {
        order.push_back(wrong[0]);
        order.push_back(gold);
        order.insert(order.end(), wrong.begin() + 1, wrong.end());
      } else {
        order.push_back(gold);
        order.insert(order.end(), wrong.begin(), wrong.end());
      }
    } else {
      order = cand_ids;
    }
    for (std::size_t c = 0; c < order.size(); ++c) m.candidates.push_back({order[c], priors[c]});
    doc.mentions.push_back(std::move(m));
  }
  doc.sentences.push_back(std::move(sent));
  validate_document(doc, &kb);
  return doc;
}

}  // namespace detail

/// Generates `count` documents, alternating topics, with ids "<prefix>-<n>".
/// `stream` separates the RNG streams of different splits.
inline Corpus generate_documents(const KnowledgeBase& kb, const SyntheticConfig& cfg, std::size_t count,
                                 const std::string& prefix, std::uint64_t stream) {
  const SyntheticWorld w = build_synthetic_world(cfg);
  Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + 1000 + stream);
  Corpus corpus;
  for (std::size_t i = 0; i < count; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s-%05zu", prefix.c_str(), i);
    corpus.documents.push_back(detail::make_synthetic_document(cfg, w, kb, buf, i % w.topics.size(), rng));
  }
  return corpus;
}

struct SyntheticSplits {
  KnowledgeBase kb;
  Corpus train;
  Corpus test;
};

inline SyntheticSplits generate_synthetic(const SyntheticConfig& cfg) {
  SyntheticSplits s;
  s.kb = generate_synthetic_kb(cfg);
  s.train = generate_documents(s.kb, cfg, cfg.train_docs, "train", 0);
  s.test = generate_documents(s.kb, cfg, cfg.test_docs, "test", 1);
  return s;
}

}  // namespace coherent_ed
