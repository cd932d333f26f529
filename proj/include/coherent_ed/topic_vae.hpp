#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "coherent_ed/optim.hpp"
#include "coherent_ed/tokenizer.hpp"
#include "coherent_ed/transformer.hpp"

namespace coherent_ed {

struct TopicVaeConfig {
  std::size_t d_z = 32;
  std::size_t hidden = 32;
  std::size_t num_heads = 4;
  std::size_t ffn = 64;
  std::size_t encoder_layers = 1;
  std::size_t decoder_layers = 1;
  std::size_t max_length = 32;  // encoder positions, including [CLS]
  double dropout = 0.1;

  TransformerConfig block_config() const {
    TransformerConfig c;
    c.hidden = hidden;
    c.num_heads = num_heads;
    c.ffn = ffn;
    c.max_positions = std::max<std::size_t>(max_length, 8);
    c.dropout = dropout;
    return c;
  }

  void validate() const {
    if (d_z == 0) throw ContractError("topic vae d_z must be positive");
    if (max_length < 2) throw ContractError("topic vae max_length must be at least 2");
    block_config().validate();
  }
};

/// Rows are [1 x d_z].
struct GaussianPosterior {
  Tensor mu;
  Tensor log_var;

  std::size_t dim() const { return mu.numel(); }
};

struct LatentSample {
  Tensor z;        // [1 x d_z]
  Tensor epsilon;  // [1 x d_z], constant
  GaussianPosterior posterior;
};

/// Cyclical KL coefficient: linear ramp from 0 to beta_max over the first
/// ramp_fraction of each cycle, then flat.
struct BetaSchedule {
  std::size_t cycle_length = 1000;
  double ramp_fraction = 0.5;
  double beta_max = 1.0;

  void validate() const {
    if (cycle_length == 0) throw ContractError("beta schedule cycle_length must be positive");
    if (!(ramp_fraction > 0 && ramp_fraction <= 1)) throw ContractError("beta schedule ramp_fraction must be in (0, 1]");
    if (!(beta_max >= 0) || !std::isfinite(beta_max)) throw ContractError("beta schedule beta_max must be >= 0");
  }

  double at(std::size_t step) const {
    const double pos = static_cast<double>(step % cycle_length);
    const double ramp = static_cast<double>(cycle_length) * ramp_fraction;
    return beta_max * std::min(1.0, pos / ramp);
  }
};

inline double beta_at_step(const BetaSchedule& schedule, std::size_t step) { return schedule.at(step); }

struct ElboTerms {
  Tensor reconstruction;  // L_E
  Tensor kl;              // L_R
  Tensor total;
  double beta = 0;
};

inline constexpr Scalar kLogVarMin = Scalar(-10);
inline constexpr Scalar kLogVarMax = Scalar(10);

/// Sentence VAE: transformer encoder pooled at [CLS] with separate mean and
/// log-variance heads, and a causal transformer decoder that sees z as a
/// leading memory slot and as an offset on every input embedding.
///
/// The decoder input for tokens x_1..x_T is [mem(z), x_1..x_{T-1}]; row t
/// of its output predicts x_{t+1}.
class TopicVae {
 public:
  TopicVae() = default;

  static TopicVae create(ParameterStore& store, const std::string& name, std::size_t vocab,
                         const TopicVaeConfig& cfg, Rng& rng) {
    cfg.validate();
    if (vocab <= Tokenizer::kCls) throw ContractError("topic vae vocabulary too small");
    TopicVae v;
    v.cfg_ = cfg;
    v.vocab_ = vocab;
    const TransformerConfig bc = cfg.block_config();
    const std::size_t h = cfg.hidden;
    v.enc_words_ = store.add(name + ".enc.word", Tensor::normal({vocab, h}, Scalar(0.5), rng));
    v.enc_pos_ = store.add(name + ".enc.position", Tensor::normal({cfg.max_length, h}, Scalar(0.5), rng));
    for (std::size_t i = 0; i < cfg.encoder_layers; ++i)
      v.enc_blocks_.push_back(TransformerBlock::create(store, name + ".enc.block." + std::to_string(i), bc, rng));
    v.enc_ln_ = LayerNormParams::create(store, name + ".enc.ln", h);
    v.head_mu_ = Linear::create(store, name + ".enc.mu", h, cfg.d_z, rng, true, 0);
    v.head_log_var_ = Linear::create(store, name + ".enc.log_var", h, cfg.d_z, rng, true, 0);

    v.dec_words_ = store.add(name + ".dec.word", Tensor::normal({vocab, h}, Scalar(0.5), rng));
    v.dec_pos_ = store.add(name + ".dec.position", Tensor::normal({cfg.max_length, h}, Scalar(0.5), rng));
    v.z_memory_ = Linear::create(store, name + ".dec.z_memory", cfg.d_z, h, rng);
    v.z_add_ = Linear::create(store, name + ".dec.z_add", cfg.d_z, h, rng, false);
    for (std::size_t i = 0; i < cfg.decoder_layers; ++i)
      v.dec_blocks_.push_back(TransformerBlock::create(store, name + ".dec.block." + std::to_string(i), bc, rng));
    v.dec_ln_ = LayerNormParams::create(store, name + ".dec.ln", h);
    v.out_ = Linear::create(store, name + ".dec.out", h, vocab, rng);
    return v;
  }

  const TopicVaeConfig& config() const { return cfg_; }
  std::size_t vocab_size() const { return vocab_; }
  std::size_t d_z() const { return cfg_.d_z; }
  /// Longest sentence the encoder accepts; longer input is truncated.
  std::size_t max_sentence() const { return cfg_.max_length - 1; }

  GaussianPosterior encode_posterior(Tape& tape, std::span<const std::size_t> tokens,
                                     const ForwardContext& ctx = {}) const {
    if (tokens.empty()) throw ContractError("encode_posterior: empty sentence");
    const std::size_t n = std::min(tokens.size(), max_sentence()) + 1;
    std::vector<std::size_t> ids;
    ids.reserve(n);
    ids.push_back(Tokenizer::kCls);
    for (std::size_t i = 0; i + 1 < n; ++i) ids.push_back(check_token(tokens[i]));
    std::vector<std::size_t> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    Tensor x = add(tape, gather_rows(tape, enc_words_, ids), gather_rows(tape, enc_pos_, pos));
    const std::vector<std::uint8_t> valid(n, 1);
    x = run_blocks(tape, ctx.drop(tape, x), make_attention_mask(valid), enc_blocks_, ctx);
    const Tensor cls = enc_ln_(tape, slice_rows(tape, x, 0, 1));
    return {head_mu_(tape, cls), clamp(tape, head_log_var_(tape, cls), kLogVarMin, kLogVarMax)};
  }

  /// Decoder logits [T x V]; row t scores tokens[t] given tokens[0..t-1] and z.
  Tensor decoder_logits(Tape& tape, std::span<const std::size_t> tokens, const Tensor& z,
                        const ForwardContext& ctx = {}) const {
    if (tokens.empty()) throw ContractError("decode: empty sentence");
    if (tokens.size() > cfg_.max_length) {
      throw ContractError("decode: sentence of " + std::to_string(tokens.size()) + " tokens exceeds " +
                          std::to_string(cfg_.max_length));
    }
    const std::size_t t = tokens.size();
    const Tensor zr = as_row(tape, z);
    const Tensor offset = reshape(tape, z_add_(tape, zr), {cfg_.hidden});
    std::vector<Tensor> rows{z_memory_(tape, zr)};
    if (t > 1) {
      std::vector<std::size_t> prev(tokens.begin(), tokens.end() - 1);
      for (std::size_t id : prev) check_token(id);
      rows.push_back(add(tape, gather_rows(tape, dec_words_, prev), offset));
    }
    std::vector<std::size_t> pos(t);
    for (std::size_t i = 0; i < t; ++i) pos[i] = i;
    Tensor x = add(tape, rows.size() == 1 ? rows[0] : concat_rows(tape, rows), gather_rows(tape, dec_pos_, pos));
    const std::vector<std::uint8_t> valid(t, 1);
    x = run_blocks(tape, ctx.drop(tape, x), make_attention_mask(valid, true), dec_blocks_, ctx);
    return out_(tape, dec_ln_(tape, x));
  }

  /// Sum over t of log p(x_t | x_<t, z).
  Tensor decode_logprob(Tape& tape, std::span<const std::size_t> tokens, const Tensor& z,
                        const ForwardContext& ctx = {}) const {
    for (std::size_t id : tokens) check_token(id);
    const Tensor logits = decoder_logits(tape, tokens, z, ctx);
    return scale(tape, cross_entropy(tape, logits, tokens), -Scalar(tokens.size()));
  }

  /// Regularized ELBO for one sentence with a single reparametrized sample.
  ElboTerms elbo_loss(Tape& tape, std::span<const std::size_t> tokens, double beta, Rng& rng,
                      const ForwardContext& ctx = {}) const {
    const auto sent = clip(tokens);
    const GaussianPosterior post = encode_posterior(tape, sent, ctx);
    const LatentSample s = sample_latent(tape, post, rng);
    ElboTerms e;
    e.beta = beta;
    e.reconstruction = scale(tape, decode_logprob(tape, sent, s.z, ctx), Scalar(-1));
    e.kl = kl_diag_gaussian(tape, post.mu, post.log_var);
    e.total = beta == 0 ? e.reconstruction : add(tape, e.reconstruction, scale(tape, e.kl, Scalar(beta)));
    return e;
  }

  ElboTerms elbo_loss(Tape& tape, std::span<const std::size_t> tokens, const BetaSchedule& schedule,
                      std::size_t step, Rng& rng, const ForwardContext& ctx = {}) const {
    return elbo_loss(tape, tokens, schedule.at(step), rng, ctx);
  }

  /// Posterior mean of one sentence as a d_z vector (no gradient).
  Tensor topic_token(std::span<const std::size_t> tokens) const {
    Tape t = Tape::no_grad();
    return Tensor::vector(encode_posterior(t, clip(tokens)).mu.to_vector());
  }

  /// Stacked posterior means [k x d_z], differentiable into the encoder.
  Tensor topic_latents(Tape& tape, const std::vector<std::vector<std::size_t>>& sentences,
                       const ForwardContext& ctx = {}) const {
    if (sentences.empty()) return Tensor({0, cfg_.d_z});
    std::vector<Tensor> rows;
    rows.reserve(sentences.size());
    for (const auto& s : sentences) rows.push_back(encode_posterior(tape, clip(s), ctx).mu);
    return rows.size() == 1 ? rows[0] : concat_rows(tape, rows);
  }

  /// z = mu + exp(log_var / 2) * eps with eps held constant.
  static LatentSample sample_with_noise(Tape& tape, const GaussianPosterior& p, const Tensor& epsilon) {
    if (epsilon.numel() != p.mu.numel()) throw DimensionError("sample: noise does not match posterior");
    const Tensor eps = epsilon.shape() == p.mu.shape() ? epsilon : Tensor(p.mu.shape(), epsilon.to_vector());
    const Tensor sigma = exp(tape, scale(tape, p.log_var, Scalar(0.5)));
    return {add(tape, p.mu, mul(tape, sigma, eps)), eps, p};
  }

  static LatentSample sample_latent(Tape& tape, const GaussianPosterior& p, Rng& rng) {
    return sample_with_noise(tape, p, Tensor::normal(p.mu.shape(), Scalar(1), rng));
  }

  std::span<const std::size_t> clip(std::span<const std::size_t> tokens) const {
    return tokens.first(std::min(tokens.size(), max_sentence()));
  }

 private:
  std::size_t check_token(std::size_t id) const {
    if (id >= vocab_) {
      throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(vocab_));
    }
    return id;
  }

  Tensor as_row(Tape& tape, const Tensor& z) const {
    if (z.numel() != cfg_.d_z) {
      throw DimensionError("latent of shape " + shape_str(z.shape()) + " for d_z " + std::to_string(cfg_.d_z));
    }
    return z.rank() == 2 ? z : reshape(tape, z, {1, cfg_.d_z});
  }

  TopicVaeConfig cfg_;
  std::size_t vocab_ = 0;
  Tensor enc_words_, enc_pos_, dec_words_, dec_pos_;
  std::vector<TransformerBlock> enc_blocks_, dec_blocks_;
  LayerNormParams enc_ln_, dec_ln_;
  Linear head_mu_, head_log_var_, z_memory_, z_add_, out_;

};

inline LatentSample sample_latent(Tape& tape, const GaussianPosterior& p, Rng& rng) {
  return TopicVae::sample_latent(tape, p, rng);
}

struct VaeTrainOptions {
  std::size_t steps = 500;
  std::size_t batch = 8;
  double lr = 1e-3;
  std::size_t warmup = 20;
  double clip = 1.0;
  BetaSchedule beta;
};

/// Unsupervised ELBO training on tokenized sentences. Returns the mean
/// total loss of every step.
inline std::vector<double> train_topic_vae(const TopicVae& vae, ParameterStore& store,
                                           const std::vector<std::vector<std::size_t>>& sentences,
                                           const VaeTrainOptions& opts, Rng& rng, AdamW* optimizer = nullptr) {
  if (sentences.empty()) throw ContractError("train_topic_vae: no sentences");
  opts.beta.validate();
  AdamW local;
  AdamW& opt = optimizer ? *optimizer : local;
  const WarmupDecaySchedule lr{opts.lr, opts.warmup, opts.steps};
  const ForwardContext ctx{true, &rng, vae.config().dropout, nullptr};
  std::vector<double> history;
  history.reserve(opts.steps);
  std::uniform_int_distribution<std::size_t> pick(0, sentences.size() - 1);
  for (std::size_t step = 0; step < opts.steps; ++step) {
    store.zero_grad();
    const double beta = opts.beta.at(step);
    double acc = 0;
    for (std::size_t b = 0; b < opts.batch; ++b) {
      const auto& s = sentences[pick(rng)];
      if (s.empty()) continue;
      Tape tape;
      const ElboTerms e = vae.elbo_loss(tape, s, beta, rng, ctx);
      const Tensor loss = scale(tape, e.total, Scalar(1) / Scalar(opts.batch));
      acc += static_cast<double>(e.total.item());
      backward(loss, tape);
    }
    clip_grad_norm(store, opts.clip);
    opt.step(store, lr.at(step));
    history.push_back(acc / static_cast<double>(opts.batch));
  }
  return history;
}

}  // namespace coherent_ed
