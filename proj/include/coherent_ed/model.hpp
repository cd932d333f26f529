#pragma once

#include <set>
#include <string>
#include <vector>

#include "coherent_ed/category_memory.hpp"
#include "coherent_ed/inputs.hpp"
#include "coherent_ed/topic_vae.hpp"
#include "coherent_ed/transformer.hpp"

namespace coherent_ed {

struct ModelConfig {
  TransformerConfig transformer;
  TopicVaeConfig vae;
  std::size_t d_category = 32;
  std::size_t word_vocab_size = 0;
  std::size_t entity_vocab_size = 0;  // real entities, excluding MASK and PAD
  std::size_t num_categories = 0;
  double mask_rate = 0.30;
  double alpha_coef = 0.1;
  double gamma_coef = 10.0;
  bool category_loss_literal = false;

  void validate() const {
    transformer.validate();
    vae.validate();
    if (d_category == 0) throw ContractError("model d_category must be positive");
    if (word_vocab_size <= Tokenizer::kNumSpecials) throw ContractError("model word vocabulary is empty");
    if (entity_vocab_size == 0) throw ContractError("model entity vocabulary is empty");
    if (num_categories == 0) throw ContractError("model needs at least one category");
    if (!(mask_rate > 0 && mask_rate <= 1)) throw ContractError("mask_rate must be in (0, 1]");
    if (!(alpha_coef >= 0) || !(gamma_coef >= 0)) throw ContractError("loss coefficients must be >= 0");
  }
};

struct LossBreakdown {
  double l_disambiguation = 0;
  double l_variational = 0;
  double l_category = 0;
  double total = 0;
};

inline LossBreakdown total_loss(double l_dis, double l_var, double l_cat, double alpha_coef = 0.1,
                                double gamma_coef = 10.0) {
  return {l_dis, l_var, l_cat, l_dis + alpha_coef * l_var + gamma_coef * l_cat};
}

/// Differentiable counterpart of total_loss; an undefined part counts as 0.
inline Tensor total_loss(Tape& tape, const Tensor& l_dis, const Tensor& l_var, const Tensor& l_cat,
                         double alpha_coef, double gamma_coef) {
  Tensor out = l_dis.defined() ? l_dis : Tensor::scalar(0);
  if (l_var.defined() && alpha_coef != 0) out = add(tape, out, scale(tape, l_var, Scalar(alpha_coef)));
  if (l_cat.defined() && gamma_coef != 0) out = add(tape, out, scale(tape, l_cat, Scalar(gamma_coef)));
  return out;
}

inline Tensor disambiguation_loss(Tape& tape, const Tensor& logits, std::span<const std::size_t> gold) {
  if (logits.rank() != 2 || logits.dim(0) != gold.size()) {
    throw ContractError("disambiguation_loss: " + std::to_string(gold.size()) + " gold indices for logits " +
                        shape_str(logits.shape()));
  }
  return cross_entropy(tape, logits, gold);
}

/// Entity slot masking for training: each slot independently with
/// probability `rate`, redrawn until at least one slot is masked.
inline std::vector<std::uint8_t> mask_entities(std::size_t num_slots, double rate, Rng& rng) {
  if (num_slots == 0) throw ContractError("mask_entities: no entity slots");
  if (!(rate > 0 && rate <= 1)) throw ContractError("mask_entities: rate must be in (0, 1]");
  std::bernoulli_distribution coin(rate);
  std::vector<std::uint8_t> m(num_slots);
  for (;;) {
    bool any = false;
    for (auto& x : m) any |= (x = coin(rng)) != 0;
    if (any) return m;
  }
}

/// One forward pass worth of model input. Entity slot ids are dense entity
/// indices, MASK or PAD; one memory mode per slot.
struct ModelInput {
  std::vector<std::vector<std::size_t>> topic_sentences;
  std::vector<std::size_t> word_ids;
  std::vector<EntitySlot> entities;
  std::vector<MemoryMode> modes;
};

struct ForwardOptions {
  bool zero_topics = false;
  bool bypass_memory = false;
  bool with_vae = false;  // compute the ELBO of the topic sentences
  double beta = 0;
  Rng* rng = nullptr;     // latent noise for the ELBO
};

struct ForwardResult {
  Tensor logits;                         // [masked x V_e]
  std::vector<std::size_t> masked_slots; // slot index of each logits row
  Tensor alpha;                          // [masked x |C|] memory scores of masked slots
  Tensor topic_latents;                  // [k x d_z]
  Tensor l_variational;                  // mean ELBO over topic sentences (with_vae only)
  Tensor l_reconstruction, l_kl;
  HiddenStates hidden;                   // final-LayerNorm states of every slot
};

class CoherentEdModel {
 public:
  CoherentEdModel() = default;
  CoherentEdModel(const CoherentEdModel&) = delete;
  CoherentEdModel& operator=(const CoherentEdModel&) = delete;
  CoherentEdModel(CoherentEdModel&&) = default;
  CoherentEdModel& operator=(CoherentEdModel&&) = default;

  CoherentEdModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    const std::size_t h = cfg.transformer.hidden;
    vae_ = TopicVae::create(store_, "vae", cfg.word_vocab_size, cfg.vae, rng);
    entities_ = store_.add("ed.entity", Tensor::normal({cfg.entity_vocab_size + 2, h}, Scalar(0.5), rng));
    emb_ = EmbeddingParams::create(store_, "ed.emb", cfg.word_vocab_size, cfg.vae.d_z, cfg.transformer, rng);
    encoder_ = SplitEncoder::create(store_, "ed.encoder", cfg.transformer, rng);
    memory_ = CategoryMemoryParams::create(store_, "ed.memory", cfg.num_categories, h, cfg.d_category, rng);
    decoder_ = Linear::create(store_, "ed.decoder", h, cfg.entity_vocab_size, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }
  const TopicVae& vae() const { return vae_; }
  const CategoryMemoryParams& memory() const { return memory_; }
  std::size_t mask_index() const { return cfg_.entity_vocab_size; }
  std::size_t pad_index() const { return cfg_.entity_vocab_size + 1; }

  /// Parameters updated in stage 1.
  static bool stage1_trainable(const std::string& name) {
    static const std::set<std::string> names = {"ed.entity", "ed.decoder.w", "ed.decoder.b", "ed.memory.table",
                                                "ed.memory.w_a", "ed.memory.w_b"};
    return names.count(name) > 0;
  }

  ForwardResult forward(Tape& tape, const ModelInput& in, const ForwardOptions& opt = {},
                        const ForwardContext& ctx = {}) const {
    if (in.modes.size() != in.entities.size()) {
      throw ContractError("forward: " + std::to_string(in.modes.size()) + " memory modes for " +
                          std::to_string(in.entities.size()) + " entity slots");
    }
    ForwardResult r;
    const std::size_t k = in.topic_sentences.size();
    if (opt.with_vae && k > 0) {
      if (!opt.rng) throw ContractError("forward: ELBO needs an rng");
      std::vector<Tensor> mus, recs, kls;
      for (const auto& s : in.topic_sentences) {
        const auto sent = vae_.clip(s);
        const GaussianPosterior post = vae_.encode_posterior(tape, sent, ctx);
        mus.push_back(post.mu);
        const LatentSample z = TopicVae::sample_latent(tape, post, *opt.rng);
        recs.push_back(scale(tape, vae_.decode_logprob(tape, sent, z.z, ctx), Scalar(-1)));
        kls.push_back(kl_diag_gaussian(tape, post.mu, post.log_var));
      }
      r.topic_latents = k == 1 ? mus[0] : concat_rows(tape, mus);
      r.l_reconstruction = mean(tape, k == 1 ? reshape(tape, recs[0], {1}) : stack(tape, recs));
      r.l_kl = mean(tape, k == 1 ? reshape(tape, kls[0], {1}) : stack(tape, kls));
      r.l_variational = opt.beta == 0 ? r.l_reconstruction
                                      : add(tape, r.l_reconstruction, scale(tape, r.l_kl, Scalar(opt.beta)));
    } else {
      r.topic_latents = vae_.topic_latents(tape, in.topic_sentences, ctx);
    }
    Tensor latents = r.topic_latents;
    if (opt.zero_topics && k > 0) latents = Tensor({k, cfg_.vae.d_z}, 0.0);

    InputSpec spec{latents, in.word_ids, in.entities};
    const Tensor x = ctx.drop(tape, compose_input_embeddings(tape, spec, emb_, entities_, pad_index()));
    const Tensor mask = make_attention_mask(key_valid_for(spec, pad_index()));
    const std::size_t ne = in.entities.size();
    const HiddenStates lower = encoder_.run_lower(tape, x, mask, k, in.word_ids.size(), ne, ctx);

    std::vector<MemoryMode> modes = in.modes;
    if (opt.bypass_memory) std::fill(modes.begin(), modes.end(), MemoryMode::skip());
    const MemoryLayerOutput mem = memory_layer_forward(tape, lower.E, modes, memory_);
    const HiddenStates upper = encoder_.run_upper(tape, lower.T, lower.W, mem.e_prime, mask, ctx);
    r.hidden.T = upper.T.dim(0) ? encoder_.final_ln(tape, upper.T) : upper.T;
    r.hidden.W = upper.W.dim(0) ? encoder_.final_ln(tape, upper.W) : upper.W;
    r.hidden.E = ne ? encoder_.final_ln(tape, upper.E) : upper.E;

    for (std::size_t i = 0; i < ne; ++i)
      if (in.entities[i].id == mask_index()) r.masked_slots.push_back(i);
    if (r.masked_slots.empty()) {
      r.logits = Tensor({0, cfg_.entity_vocab_size});
      r.alpha = Tensor({0, cfg_.num_categories});
      return r;
    }
    r.logits = decoder_(tape, gather_rows(tape, r.hidden.E, r.masked_slots));
    r.alpha = mem.alpha.defined() ? gather_rows(tape, mem.alpha, r.masked_slots)
                                  : Tensor({0, cfg_.num_categories});
    return r;
  }

 private:
  static Tensor stack(Tape& tape, const std::vector<Tensor>& scalars) {
    std::vector<Tensor> rows;
    rows.reserve(scalars.size());
    for (const auto& s : scalars) rows.push_back(reshape(tape, s, {1, 1}));
    return concat_rows(tape, rows);
  }

  ModelConfig cfg_;
  ParameterStore store_;
  TopicVae vae_;
  Tensor entities_;
  EmbeddingParams emb_;
  SplitEncoder encoder_;
  CategoryMemoryParams memory_;
  Linear decoder_;
};

/// Training example for one document: slots for in-window mentions with
/// masked slots predicting their gold entity.
struct TrainingExample {
  ModelInput input;
  std::vector<std::size_t> gold;                    // per masked slot, in slot order
  std::vector<std::vector<std::size_t>> gold_cats;  // per masked slot
};

/// Masked slots query the full memory; unmasked slots use their gold
/// entity's categories; PAD slots skip the memory.
inline TrainingExample make_training_example(const EncodedDocument& doc, const PreparedInput& prep,
                                             const std::vector<std::uint8_t>& masked,
                                             const std::vector<std::vector<std::size_t>>& entity_cats,
                                             std::size_t mask_index, std::size_t pad_index) {
  if (masked.size() != prep.slot_mentions.size()) throw ContractError("mask size does not match entity slots");
  TrainingExample ex;
  for (std::size_t s : prep.topic_sentences) ex.input.topic_sentences.push_back(doc.sentences[s]);
  ex.input.word_ids = prep.word_ids;
  for (std::size_t i = 0; i < prep.slot_mentions.size(); ++i) {
    const EncodedMention& m = doc.mentions[prep.slot_mentions[i]];
    const auto& cats = entity_cats.at(m.gold);
    if (masked[i]) {
      ex.input.entities.push_back({mask_index, prep.slot_positions[i]});
      ex.input.modes.push_back(MemoryMode::full());
      ex.gold.push_back(m.gold);
      ex.gold_cats.push_back(cats);
    } else {
      ex.input.entities.push_back({m.gold, prep.slot_positions[i]});
      ex.input.modes.push_back(cats.empty() ? MemoryMode::skip() : MemoryMode::oracle(cats));
    }
  }
  for (std::size_t i = prep.slot_mentions.size(); i < prep.num_slots; ++i) {
    ex.input.entities.push_back({pad_index, {}});
    ex.input.modes.push_back(MemoryMode::skip());
  }
  return ex;
}

struct ExampleLoss {
  Tensor total;
  Tensor l_dis, l_var, l_cat;
  LossBreakdown breakdown;
};

/// Loss of one example; l_var is left out when `with_vae` is false.
inline ExampleLoss example_loss(Tape& tape, const CoherentEdModel& model, const TrainingExample& ex, bool with_vae,
                                double beta, Rng& rng, const ForwardContext& ctx = {}, ForwardOptions opt = {}) {
  const ModelConfig& cfg = model.config();
  opt.with_vae = with_vae;
  opt.beta = beta;
  opt.rng = &rng;
  const ForwardResult r = model.forward(tape, ex.input, opt, ctx);
  ExampleLoss out;
  out.l_dis = disambiguation_loss(tape, r.logits, ex.gold);
  out.l_cat = opt.bypass_memory ? Tensor::scalar(0)
                                : category_loss(tape, r.alpha, ex.gold_cats, cfg.category_loss_literal);
  out.l_var = with_vae && r.l_variational.defined() ? r.l_variational : Tensor();
  out.total = total_loss(tape, out.l_dis, out.l_var, out.l_cat, cfg.alpha_coef, cfg.gamma_coef);
  out.breakdown = total_loss(out.l_dis.item(), out.l_var.defined() ? out.l_var.item() : 0.0, out.l_cat.item(),
                             cfg.alpha_coef, cfg.gamma_coef);
  return out;
}

}  // namespace coherent_ed
