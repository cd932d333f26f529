#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "coherent_ed/eval.hpp"
#include "coherent_ed/model.hpp"

namespace coherent_ed {

struct InferenceConfig {
  std::size_t topic_sentences = 4;  // k
  std::size_t top_k = kDefaultTopK;
  bool renormalize = false;      // compare candidate-renormalized log probs
  bool one_shot = false;         // predict every mention from a single pass
  bool oracle_guidance = true;   // resolved slots use their categories; else TopK
  bool zero_topics = false;      // ablation: topic latents replaced by zeros
  bool bypass_memory = false;    // ablation: memory layer skipped
};

inline constexpr Scalar kNegInf = -std::numeric_limits<Scalar>::infinity();

/// Entries outside the candidate set become -inf; nullopt for an empty set.
inline std::optional<std::vector<Scalar>> restrict_logits(std::span<const Scalar> logits, const CandidateSet& cands) {
  if (cands.empty()) return std::nullopt;
  std::vector<Scalar> out(logits.size(), kNegInf);
  for (const auto& c : cands.entries) {
    if (c.entity >= logits.size()) {
      throw IndexError("candidate entity " + std::to_string(c.entity) + " outside " + std::to_string(logits.size()) +
                       " logits");
    }
    out[c.entity] = logits[c.entity];
  }
  return out;
}

/// First index of the maximum.
inline std::size_t argmax(std::span<const Scalar> v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

struct Prediction {
  std::size_t mention = 0;
  std::optional<std::size_t> entity;  // nullopt = NoCandidate
  std::size_t step = 0;
  double log_prob = 0;
};

struct DecodingState {
  enum class Status { Pending, Resolved };
  std::vector<Status> status;
  std::vector<Prediction> resolved;  // per mention, valid once Resolved
  std::size_t step = 0;

  explicit DecodingState(std::size_t n = 0) : status(n, Status::Pending), resolved(n) {
    for (std::size_t i = 0; i < n; ++i) resolved[i].mention = i;
  }
  bool done() const { return step == status.size(); }
  std::size_t pending() const { return status.size() - step; }
};

struct DocumentResult {
  std::vector<Prediction> predictions;  // by mention index
  std::size_t forward_passes = 0;
};

using StepCallback = std::function<void(const DecodingState&)>;

namespace detail {

inline std::uint64_t doc_seed(std::uint64_t seed, const std::string& id) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (unsigned char c : id) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

/// Full-vocabulary log-softmax (or renormalized over the candidates), restricted.
inline std::optional<std::vector<Scalar>> candidate_log_probs(std::span<const Scalar> logits,
                                                              const CandidateSet& cands, bool renormalize) {
  auto restricted = restrict_logits(logits, cands);
  if (!restricted) return std::nullopt;
  std::span<const Scalar> src = renormalize ? std::span<const Scalar>(*restricted) : logits;
  Scalar m = kNegInf;
  for (Scalar x : src) m = std::max(m, x);
  long double z = 0;
  for (Scalar x : src)
    if (x != kNegInf) z += std::exp(static_cast<long double>(x - m));
  const Scalar lz = m + static_cast<Scalar>(std::log(z));
  for (auto& x : *restricted)
    if (x != kNegInf) x -= lz;
  return restricted;
}

}  // namespace detail

using ScoredMentions = std::vector<std::pair<std::size_t, std::optional<std::vector<Scalar>>>>;

/// The mention whose best candidate has the highest log probability, ties to
/// the lower mention index; nullopt when no mention has candidates.
inline std::optional<Prediction> select_resolution(const ScoredMentions& scored) {
  std::optional<Prediction> best;
  for (const auto& [m, lp] : scored) {
    if (!lp) continue;
    const std::size_t e = argmax(*lp);
    const double v = (*lp)[e];
    if (!best || v > best->log_prob || (v == best->log_prob && m < best->mention)) best = Prediction{m, e, 0, v};
  }
  return best;
}

/// Step-by-step coherent disambiguation of one document: each forward pass
/// resolves the pending mention whose best candidate has the highest log
/// probability (ties to the lower mention index). Resolved mentions enter
/// later passes with their predicted entity and its categories.
class InferenceEngine {
 public:
  InferenceEngine(const CoherentEdModel& model, const std::vector<std::vector<std::size_t>>& entity_cats,
                  InferenceConfig cfg, std::uint64_t seed)
      : model_(model), cats_(entity_cats), cfg_(cfg), seed_(seed) {}

  const InferenceConfig& config() const { return cfg_; }

  /// Builds the inputs of the next pass, centred on the first pending mention.
  std::pair<PreparedInput, ModelInput> build_input(const EncodedDocument& doc, const DecodingState& st) const {
    std::size_t focus = 0;
    while (focus < st.status.size() && st.status[focus] != DecodingState::Status::Pending) ++focus;
    if (focus == st.status.size()) focus = 0;
    Rng rng(detail::doc_seed(seed_, doc.id));
    const std::size_t L = model_.config().transformer.max_positions;
    PreparedInput prep = prepare_inputs(doc, L, cfg_.topic_sentences, doc.mentions.size(), focus, rng);
    ModelInput in;
    for (std::size_t s : prep.topic_sentences) in.topic_sentences.push_back(doc.sentences[s]);
    in.word_ids = prep.word_ids;
    for (std::size_t i = 0; i < prep.slot_mentions.size(); ++i) {
      const std::size_t m = prep.slot_mentions[i];
      const Prediction& p = st.resolved[m];
      if (st.status[m] == DecodingState::Status::Resolved && p.entity) {
        in.entities.push_back({*p.entity, prep.slot_positions[i]});
        const auto& c = cats_.at(*p.entity);
        if (!cfg_.oracle_guidance) in.modes.push_back(MemoryMode::top_k(cfg_.top_k));
        else in.modes.push_back(c.empty() ? MemoryMode::skip() : MemoryMode::oracle(c));
      } else {
        in.entities.push_back({model_.mask_index(), prep.slot_positions[i]});
        in.modes.push_back(MemoryMode::top_k(cfg_.top_k));
      }
    }
    for (std::size_t i = prep.slot_mentions.size(); i < prep.num_slots; ++i) {
      in.entities.push_back({model_.pad_index(), {}});
      in.modes.push_back(MemoryMode::skip());
    }
    return {std::move(prep), std::move(in)};
  }

  /// Restricted log probabilities of every pending in-window mention.
  ScoredMentions score(const EncodedDocument& doc, const DecodingState& st, std::size_t* passes = nullptr) const {
    const auto [prep, in] = build_input(doc, st);
    Tape tape = Tape::no_grad();
    ForwardOptions opt;
    opt.zero_topics = cfg_.zero_topics;
    opt.bypass_memory = cfg_.bypass_memory;
    const ForwardResult r = model_.forward(tape, in, opt);
    if (passes) ++*passes;
    ScoredMentions out;
    const std::size_t v = r.logits.dim(1);
    for (std::size_t row = 0; row < r.masked_slots.size(); ++row) {
      const std::size_t m = prep.slot_mentions[r.masked_slots[row]];
      if (st.status[m] != DecodingState::Status::Pending) continue;
      const std::span<const Scalar> logits = r.logits.values().subspan(row * v, v);
      out.emplace_back(m, detail::candidate_log_probs(logits, doc.mentions[m].candidates, cfg_.renormalize));
    }
    return out;
  }

  /// One pass; resolves exactly one pending mention.
  void step(const EncodedDocument& doc, DecodingState& st, std::size_t* passes = nullptr) const {
    if (st.done()) throw ContractError("step: no pending mention");
    auto best = select_resolution(score(doc, st, passes));
    if (!best) {
      // No scored mention has candidates: the first pending one resolves empty.
      std::size_t m = 0;
      while (st.status[m] != DecodingState::Status::Pending) ++m;
      best = Prediction{m, std::nullopt, 0, kNegInf};
    }
    best->step = st.step;
    st.status[best->mention] = DecodingState::Status::Resolved;
    st.resolved[best->mention] = *best;
    ++st.step;
  }

  DocumentResult disambiguate(const EncodedDocument& doc, const StepCallback& on_step = {}) const {
    DocumentResult res;
    DecodingState st(doc.mentions.size());
    if (cfg_.one_shot) {
      while (!st.done()) {
        const std::size_t pass = res.forward_passes;
        const auto scored = score(doc, st, &res.forward_passes);
        bool progressed = false;
        for (const auto& [m, lp] : scored) {
          Prediction p{m, std::nullopt, pass, kNegInf};
          if (lp) {
            p.entity = argmax(*lp);
            p.log_prob = (*lp)[*p.entity];
          }
          st.status[m] = DecodingState::Status::Resolved;
          st.resolved[m] = p;
          ++st.step;
          progressed = true;
        }
        if (!progressed) throw Error("one-shot pass made no progress on document " + doc.id);
        if (on_step) on_step(st);
      }
    } else {
      while (!st.done()) {
        step(doc, st, &res.forward_passes);
        if (on_step) on_step(st);
      }
    }
    res.predictions = st.resolved;
    return res;
  }

 private:
  const CoherentEdModel& model_;
  const std::vector<std::vector<std::size_t>>& cats_;
  InferenceConfig cfg_;
  std::uint64_t seed_;
};

inline std::vector<PredictionRecord> to_records(const EncodedDocument& doc, const DocumentResult& r,
                                               const EntityVocabulary& ents) {
  std::vector<PredictionRecord> out;
  for (const auto& p : r.predictions) {
    PredictionRecord rec{doc.id, p.mention, std::nullopt, p.step, p.log_prob};
    if (p.entity) rec.entity = ents.id(*p.entity);
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace coherent_ed
