#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "coherent_ed/ops.hpp"
#include "coherent_ed/parameters.hpp"

namespace coherent_ed {

struct TransformerConfig {
  std::size_t hidden = 32;
  std::size_t num_heads = 4;
  std::size_t ffn = 64;
  std::size_t layers_lower = 1;
  std::size_t layers_upper = 1;
  std::size_t max_positions = 32;
  double dropout = 0.1;

  std::size_t head_dim() const { return hidden / num_heads; }

  void validate() const {
    if (hidden == 0 || num_heads == 0 || hidden % num_heads != 0) {
      throw ContractError("transformer hidden size " + std::to_string(hidden) + " not divisible by " +
                          std::to_string(num_heads) + " heads");
    }
    if (max_positions < 8) throw ContractError("transformer max_positions must be at least 8");
    if (dropout < 0 || dropout >= 1) throw ContractError("transformer dropout must be in [0, 1)");
  }
};

/// Per-call switches: dropout on/off and an optional sink for attention maps.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
  double dropout_rate = 0.0;
  std::vector<Tensor>* attention_trace = nullptr;  // one [S x S] tensor per layer and head

  Tensor drop(Tape& tape, const Tensor& x) const {
    return dropout_active() ? coherent_ed::dropout(tape, x, dropout_rate, rng, true) : x;
  }
  bool dropout_active() const { return training && rng != nullptr && dropout_rate > 0; }
};

inline constexpr Scalar kMaskedScore = Scalar(-1e30);

/// Additive attention mask: 0 where query i may attend key j, -1e30 elsewhere.
/// Invalid keys (PAD slots) are never attendable; `causal` also blocks j > i.
inline Tensor make_attention_mask(std::span<const std::uint8_t> key_valid, bool causal = false) {
  const std::size_t s = key_valid.size();
  Tensor m({s, s}, 0.0);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j)
      if (!key_valid[j] || (causal && j > i)) m.values()[i * s + j] = kMaskedScore;
  return m;
}

struct Linear {
  Tensor w;  // [in x out]
  Tensor b;  // [out], may be undefined

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                       bool bias = true, Scalar gain = 1) {
    Linear l;
    l.w = store.add(name + ".w", gain == 0 ? Tensor({in, out}, 0.0)
                                           : Tensor::normal({in, out}, gain / Scalar(std::sqrt(double(in))), rng));
    if (bias) l.b = store.add(name + ".b", Tensor({out}, 0.0));
    return l;
  }
  Tensor operator()(Tape& tape, const Tensor& x) const {
    Tensor y = matmul(tape, x, w);
    return b.defined() ? add(tape, y, b) : y;
  }
};

struct LayerNormParams {
  Tensor gain, bias;
  static LayerNormParams create(ParameterStore& store, const std::string& name, std::size_t d) {
    return {store.add(name + ".gain", Tensor({d}, 1.0)), store.add(name + ".bias", Tensor({d}, 0.0))};
  }
  Tensor operator()(Tape& tape, const Tensor& x) const { return layer_norm(tape, x, gain, bias); }
};

/// Pre-norm block: x + Attn(LN(x)), then x + FFN(LN(x)).
struct TransformerBlock {
  LayerNormParams ln1, ln2;
  Linear q, k, v, o, ff1, ff2;
  std::size_t heads = 1;

  static TransformerBlock create(ParameterStore& store, const std::string& name, const TransformerConfig& cfg,
                                 Rng& rng) {
    TransformerBlock b;
    b.heads = cfg.num_heads;
    b.ln1 = LayerNormParams::create(store, name + ".ln1", cfg.hidden);
    b.q = Linear::create(store, name + ".attn.q", cfg.hidden, cfg.hidden, rng);
    b.k = Linear::create(store, name + ".attn.k", cfg.hidden, cfg.hidden, rng, false);
    b.v = Linear::create(store, name + ".attn.v", cfg.hidden, cfg.hidden, rng);
    b.o = Linear::create(store, name + ".attn.o", cfg.hidden, cfg.hidden, rng, true, Scalar(0.5));
    b.ln2 = LayerNormParams::create(store, name + ".ln2", cfg.hidden);
    b.ff1 = Linear::create(store, name + ".ffn.1", cfg.hidden, cfg.ffn, rng);
    b.ff2 = Linear::create(store, name + ".ffn.2", cfg.ffn, cfg.hidden, rng, true, Scalar(0.5));
    return b;
  }

  Tensor attention(Tape& tape, const Tensor& x, const Tensor& mask, const ForwardContext& ctx) const {
    const std::size_t h = x.dim(1), dh = h / heads;
    const Tensor qx = q(tape, x), kx = k(tape, x), vx = v(tape, x);
    const Scalar inv = Scalar(1) / std::sqrt(Scalar(dh));
    std::vector<Tensor> outs;
    outs.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const Tensor qh = slice_cols(tape, qx, hd * dh, dh);
      const Tensor kh = slice_cols(tape, kx, hd * dh, dh);
      const Tensor vh = slice_cols(tape, vx, hd * dh, dh);
      const Tensor scores = add(tape, scale(tape, matmul(tape, qh, transpose(tape, kh)), inv), mask);
      const Tensor probs = softmax(tape, scores, 1);
      if (ctx.attention_trace) ctx.attention_trace->push_back(probs);
      outs.push_back(matmul(tape, ctx.drop(tape, probs), vh));
    }
    return o(tape, heads == 1 ? outs[0] : concat_cols(tape, outs));
  }

  Tensor forward(Tape& tape, const Tensor& x, const Tensor& mask, const ForwardContext& ctx) const {
    Tensor h = add(tape, x, ctx.drop(tape, attention(tape, ln1(tape, x), mask, ctx)));
    const Tensor ff = ff2(tape, gelu(tape, ff1(tape, ln2(tape, h))));
    return add(tape, h, ctx.drop(tape, ff));
  }
};

inline Tensor run_blocks(Tape& tape, Tensor x, const Tensor& mask, const std::vector<TransformerBlock>& blocks,
                         const ForwardContext& ctx) {
  for (const auto& b : blocks) x = b.forward(tape, x, mask, ctx);
  return x;
}

// ---------------------------------------------------------------------------
// Composite input embeddings and the split lower/upper encoder
// ---------------------------------------------------------------------------

enum class SlotType : std::size_t { Word = 0, Entity = 1, Topic = 2 };

struct EntitySlot {
  std::size_t id = 0;
  std::vector<std::size_t> word_positions;  // indices into the word window
};

/// Model input in sequence order [topics, words, entities].
struct InputSpec {
  Tensor topic_latents;  // [k x d_z]; undefined or 0 rows when k = 0
  std::vector<std::size_t> word_ids;
  std::vector<EntitySlot> entities;

  std::size_t num_topics() const { return topic_latents.defined() && topic_latents.rank() == 2 ? topic_latents.dim(0) : 0; }
  std::size_t length() const { return num_topics() + word_ids.size() + entities.size(); }
};

struct HiddenStates {
  Tensor T, W, E;
};

/// Representation, type and absolute-position tables of the ED encoder.
/// The entity table is owned by the model and passed in.
struct EmbeddingParams {
  Tensor words;      // [V_w x H]
  Tensor types;      // [3 x H]
  Tensor positions;  // [L x H]
  Linear topic_proj; // d_z -> H; undefined weights when d_z == H (identity)

  static EmbeddingParams create(ParameterStore& store, const std::string& name, std::size_t vocab,
                                std::size_t d_z, const TransformerConfig& cfg, Rng& rng) {
    EmbeddingParams p;
    p.words = store.add(name + ".word", Tensor::normal({vocab, cfg.hidden}, Scalar(0.5), rng));
    p.types = store.add(name + ".type", Tensor::normal({3, cfg.hidden}, Scalar(0.5), rng));
    p.positions = store.add(name + ".position", Tensor::normal({cfg.max_positions, cfg.hidden}, Scalar(0.5), rng));
    if (d_z != cfg.hidden) p.topic_proj = Linear::create(store, name + ".topic_proj", d_z, cfg.hidden, rng, false);
    return p;
  }
};

/// Each slot = representation + type + position. Topics sit at positions
/// 0..k-1, word i at k+i, and an entity at the mean of its words' positions
/// (PAD entity slots get a zero position term).
inline Tensor compose_input_embeddings(Tape& tape, const InputSpec& spec, const EmbeddingParams& p,
                                       const Tensor& entity_table, std::size_t pad_entity) {
  const std::size_t k = spec.num_topics(), nw = spec.word_ids.size(), ne = spec.entities.size();
  const std::size_t max_pos = p.positions.dim(0);
  if (k + nw + ne > max_pos) {
    throw ContractError("input length " + std::to_string(k + nw + ne) + " exceeds max_positions " +
                        std::to_string(max_pos));
  }
  std::vector<Tensor> parts;
  auto type_rows = [&](SlotType t, std::size_t n) {
    const std::vector<std::size_t> ids(n, static_cast<std::size_t>(t));
    return gather_rows(tape, p.types, ids);
  };
  if (k > 0) {
    const Tensor z = p.topic_proj.w.defined() ? p.topic_proj(tape, spec.topic_latents) : spec.topic_latents;
    std::vector<std::size_t> pos(k);
    for (std::size_t i = 0; i < k; ++i) pos[i] = i;
    parts.push_back(add(tape, add(tape, z, type_rows(SlotType::Topic, k)), gather_rows(tape, p.positions, pos)));
  }
  if (nw > 0) {
    std::vector<std::size_t> pos(nw);
    for (std::size_t i = 0; i < nw; ++i) pos[i] = k + i;
    const Tensor rep = gather_rows(tape, p.words, spec.word_ids);
    parts.push_back(add(tape, add(tape, rep, type_rows(SlotType::Word, nw)), gather_rows(tape, p.positions, pos)));
  }
  if (ne > 0) {
    Tensor avg({ne, max_pos}, 0.0);
    std::vector<std::size_t> ids(ne);
    for (std::size_t i = 0; i < ne; ++i) {
      const EntitySlot& s = spec.entities[i];
      ids[i] = s.id;
      if (s.word_positions.empty()) {
        if (s.id != pad_entity) throw ContractError("entity slot " + std::to_string(i) + " has no word positions");
        continue;
      }
      for (std::size_t wp : s.word_positions) {
        if (wp >= nw) {
          throw ContractError("entity slot " + std::to_string(i) + " word position " + std::to_string(wp) +
                              " outside the word window of " + std::to_string(nw));
        }
        avg.values()[i * max_pos + k + wp] += Scalar(1) / Scalar(s.word_positions.size());
      }
    }
    const Tensor rep = gather_rows(tape, entity_table, ids);
    parts.push_back(add(tape, add(tape, rep, type_rows(SlotType::Entity, ne)), matmul(tape, avg, p.positions)));
  }
  if (parts.empty()) throw ContractError("empty input");
  return parts.size() == 1 ? parts[0] : concat_rows(tape, parts);
}

/// Key validity over the full sequence: PAD entity slots are not attendable.
inline std::vector<std::uint8_t> key_valid_for(const InputSpec& spec, std::size_t pad_entity) {
  std::vector<std::uint8_t> v(spec.num_topics() + spec.word_ids.size(), 1);
  for (const auto& e : spec.entities) v.push_back(e.id != pad_entity);
  return v;
}

inline HiddenStates split_states(Tape& tape, const Tensor& x, std::size_t k, std::size_t nw, std::size_t ne) {
  if (x.dim(0) != k + nw + ne) {
    throw DimensionError("split_states: " + shape_str(x.shape()) + " does not hold " + std::to_string(k) + "+" +
                         std::to_string(nw) + "+" + std::to_string(ne) + " slots");
  }
  const std::size_t h = x.dim(1);
  HiddenStates s;
  s.T = k ? slice_rows(tape, x, 0, k) : Tensor({0, h});
  s.W = nw ? slice_rows(tape, x, k, nw) : Tensor({0, h});
  s.E = ne ? slice_rows(tape, x, k + nw, ne) : Tensor({0, h});
  return s;
}

inline Tensor join_states(Tape& tape, const HiddenStates& s) {
  std::vector<Tensor> parts;
  for (const Tensor* t : {&s.T, &s.W, &s.E})
    if (t->dim(0) > 0) parts.push_back(*t);
  return parts.size() == 1 ? parts[0] : concat_rows(tape, parts);
}

/// Encoder split around the memory layer: lower (M blocks) and upper (N
/// blocks) stacks plus a final LayerNorm applied by the model head.
struct SplitEncoder {
  std::vector<TransformerBlock> lower, upper;
  LayerNormParams final_ln;

  static SplitEncoder create(ParameterStore& store, const std::string& name, const TransformerConfig& cfg, Rng& rng) {
    SplitEncoder enc;
    for (std::size_t i = 0; i < cfg.layers_lower; ++i)
      enc.lower.push_back(TransformerBlock::create(store, name + ".lower." + std::to_string(i), cfg, rng));
    for (std::size_t i = 0; i < cfg.layers_upper; ++i)
      enc.upper.push_back(TransformerBlock::create(store, name + ".upper." + std::to_string(i), cfg, rng));
    enc.final_ln = LayerNormParams::create(store, name + ".final_ln", cfg.hidden);
    return enc;
  }

  HiddenStates run_lower(Tape& tape, const Tensor& x, const Tensor& mask, std::size_t k, std::size_t nw,
                         std::size_t ne, const ForwardContext& ctx = {}) const {
    return split_states(tape, run_blocks(tape, x, mask, lower, ctx), k, nw, ne);
  }

  HiddenStates run_upper(Tape& tape, const Tensor& t, const Tensor& w, const Tensor& e_prime, const Tensor& mask,
                         const ForwardContext& ctx = {}) const {
    const HiddenStates in{t, w, e_prime};
    const Tensor y = run_blocks(tape, join_states(tape, in), mask, upper, ctx);
    return split_states(tape, y, t.dim(0), w.dim(0), e_prime.dim(0));
  }
};

}  // namespace coherent_ed
