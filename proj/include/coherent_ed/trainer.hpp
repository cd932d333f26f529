#pragma once

#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "coherent_ed/model.hpp"
#include "coherent_ed/optim.hpp"

namespace coherent_ed {

struct TrainConfig {
  std::size_t topic_sentences = 4;  // k
  std::size_t stage1_epochs = 1;
  std::size_t stage2_epochs = 6;
  std::size_t batch_size = 8;
  double stage1_lr = 5e-4;
  double stage2_lr = 5e-5;
  double warmup_fraction = 0.1;
  double weight_decay = 1e-2;
  double clip_norm = 1.0;
  /// 0 means four epochs' worth of stage-2 steps.
  std::size_t beta_cycle_steps = 0;
  double beta_ramp_fraction = 0.5;
  double beta_max = 1.0;
  std::size_t vae_pretrain_steps = 0;
  std::size_t vae_batch_size = 8;
  double vae_lr = 1e-3;
  /// Caps the optimizer steps of each stage (0 = no cap).
  std::size_t max_steps_per_stage = 0;
  /// Ablation variants trained without topic tokens or without the memory layer.
  bool zero_topics = false;
  bool bypass_memory = false;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (vae_batch_size == 0) throw ConfigError("train.vae_batch_size must be positive");
    if (!(warmup_fraction >= 0 && warmup_fraction < 1)) throw ConfigError("train.warmup_fraction must be in [0, 1)");
    if (!(clip_norm > 0)) throw ConfigError("train.clip_norm must be positive");
    if (!(stage1_lr >= 0) || !(stage2_lr >= 0) || !(vae_lr >= 0)) throw ConfigError("learning rates must be >= 0");
    if (!(weight_decay >= 0)) throw ConfigError("train.weight_decay must be >= 0");
    if (!(beta_ramp_fraction > 0 && beta_ramp_fraction <= 1)) throw ConfigError("train.beta_ramp_fraction must be in (0, 1]");
    if (!(beta_max >= 0)) throw ConfigError("train.beta_max must be >= 0");
  }
};

/// One metrics-log row. Losses are batch means; grad_norm is measured before
/// clipping and clipped_norm after.
struct MetricsRecord {
  std::string stage;  // "vae", "stage1" or "stage2"
  std::size_t step = 0;
  LossBreakdown loss;
  double beta = 0;
  double lr = 0;
  double grad_norm = 0;
  double clipped_norm = 0;
};

inline const char* kMetricsHeader = "stage\tstep\tl_dis\tl_var\tl_cat\ttotal\tbeta\tlr\tgrad_norm\tclipped_norm";

inline std::string format_metrics(const MetricsRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s\t%zu\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g\t%.17g", r.stage.c_str(),
                r.step, r.loss.l_disambiguation, r.loss.l_variational, r.loss.l_category, r.loss.total, r.beta, r.lr,
                r.grad_norm, r.clipped_norm);
  return buf;
}

inline void write_metrics(const std::string& path, const std::vector<MetricsRecord>& log) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : log) out += format_metrics(r) + "\n";
  detail::write_file(path, out);
}

struct TrainResult {
  std::vector<MetricsRecord> log;
  std::size_t stage1_steps = 0;
  std::size_t stage2_steps = 0;
};

/// Called after clipping and before the optimizer update of every ED step.
using StepObserver = std::function<void(const MetricsRecord&, const ParameterStore&)>;

namespace detail {

inline std::size_t stage_steps(std::size_t docs, std::size_t batch, std::size_t epochs, std::size_t cap) {
  const std::size_t per_epoch = (docs + batch - 1) / batch;
  const std::size_t n = per_epoch * epochs;
  return cap > 0 ? std::min(n, cap) : n;
}

}  // namespace detail

/// Runs optional VAE pretraining, then stage 1 (entity embeddings, decoder
/// head and category memory only; no variational loss) and stage 2 (all
/// parameters, all three losses with the cyclical beta).
inline TrainResult train_model(CoherentEdModel& model, const std::vector<EncodedDocument>& docs,
                               const std::vector<std::vector<std::size_t>>& entity_cats, const TrainConfig& tc,
                               std::uint64_t seed, const StepObserver& observer = {}) {
  tc.validate();
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < docs.size(); ++i)
    if (!docs[i].mentions.empty()) usable.push_back(i);
  if (usable.empty()) throw ContractError("train: no document has a mention");
  if (entity_cats.size() != model.config().entity_vocab_size) {
    throw LoadError("train: category table covers " + std::to_string(entity_cats.size()) + " entities, model has " +
                    std::to_string(model.config().entity_vocab_size));
  }

  Rng rng(seed);
  ParameterStore& store = model.parameters();
  const ModelConfig& mc = model.config();
  const std::size_t L = mc.transformer.max_positions;
  TrainResult result;

  if (tc.vae_pretrain_steps > 0) {
    std::vector<std::vector<std::size_t>> sents;
    for (std::size_t i : usable)
      for (const auto& s : docs[i].sentences)
        if (!s.empty()) sents.push_back(s);
    store.set_trainable([](const std::string& n) { return n.rfind("vae.", 0) == 0; });
    VaeTrainOptions vo;
    vo.steps = tc.vae_pretrain_steps;
    vo.batch = tc.vae_batch_size;
    vo.lr = tc.vae_lr;
    vo.warmup = static_cast<std::size_t>(tc.warmup_fraction * static_cast<double>(vo.steps));
    vo.clip = tc.clip_norm;
    vo.beta = BetaSchedule{std::max<std::size_t>(1, vo.steps / 2), tc.beta_ramp_fraction, tc.beta_max};
    AdamW opt(AdamW::Options{0.9, 0.999, 1e-8, tc.weight_decay});
    const auto hist = train_topic_vae(model.vae(), store, sents, vo, rng, &opt);
    for (std::size_t s = 0; s < hist.size(); ++s) {
      MetricsRecord r;
      r.stage = "vae";
      r.step = s;
      r.loss = total_loss(0, hist[s], 0, 1.0, mc.gamma_coef);
      r.beta = vo.beta.at(s);
      r.lr = WarmupDecaySchedule{vo.lr, vo.warmup, vo.steps}.at(s);
      result.log.push_back(r);
    }
  }

  const ForwardContext ctx{true, &rng, mc.transformer.dropout, nullptr};
  auto run_stage = [&](const char* name, std::size_t epochs, double peak, bool stage2) {
    const std::size_t steps = detail::stage_steps(usable.size(), tc.batch_size, epochs, tc.max_steps_per_stage);
    if (steps == 0) return std::size_t{0};
    if (stage2) store.set_trainable([](const std::string&) { return true; });
    else store.set_trainable(&CoherentEdModel::stage1_trainable);
    AdamW opt(AdamW::Options{0.9, 0.999, 1e-8, tc.weight_decay});
    const WarmupDecaySchedule lr{peak, static_cast<std::size_t>(tc.warmup_fraction * static_cast<double>(steps)),
                                 steps};
    const std::size_t per_epoch = (usable.size() + tc.batch_size - 1) / tc.batch_size;
    const BetaSchedule beta{tc.beta_cycle_steps ? tc.beta_cycle_steps : 4 * per_epoch, tc.beta_ramp_fraction,
                            tc.beta_max};
    std::vector<std::size_t> order = usable;
    std::size_t cursor = order.size();
    for (std::size_t step = 0; step < steps; ++step) {
      store.zero_grad();
      const double b = stage2 ? beta.at(step) : 0.0;
      MetricsRecord rec;
      rec.stage = name;
      rec.step = step;
      rec.beta = b;
      rec.lr = lr.at(step);
      std::size_t n = 0;
      double l_dis = 0, l_var = 0, l_cat = 0;
      for (std::size_t bi = 0; bi < tc.batch_size; ++bi) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
        }
        const EncodedDocument& doc = docs[order[cursor++]];
        const std::size_t focus = std::uniform_int_distribution<std::size_t>(0, doc.mentions.size() - 1)(rng);
        const PreparedInput prep = prepare_inputs(doc, L, tc.topic_sentences, doc.mentions.size(), focus, rng);
        if (prep.slot_mentions.empty()) continue;
        const auto masked = mask_entities(prep.slot_mentions.size(), mc.mask_rate, rng);
        const TrainingExample ex =
            make_training_example(doc, prep, masked, entity_cats, model.mask_index(), model.pad_index());
        Tape tape;
        ForwardOptions fo;
        fo.zero_topics = tc.zero_topics;
        fo.bypass_memory = tc.bypass_memory;
        const ExampleLoss el = example_loss(tape, model, ex, stage2, b, rng, ctx, fo);
        backward(scale(tape, el.total, Scalar(1) / Scalar(tc.batch_size)), tape);
        l_dis += el.breakdown.l_disambiguation;
        l_var += el.breakdown.l_variational;
        l_cat += el.breakdown.l_category;
        ++n;
      }
      const double denom = static_cast<double>(std::max<std::size_t>(n, 1));
      rec.loss = total_loss(l_dis / denom, l_var / denom, l_cat / denom, mc.alpha_coef, mc.gamma_coef);
      rec.grad_norm = clip_grad_norm(store, tc.clip_norm);
      rec.clipped_norm = global_grad_norm(store);
      if (observer) observer(rec, store);
      opt.step(store, rec.lr);
      result.log.push_back(rec);
    }
    return steps;
  };
  result.stage1_steps = run_stage("stage1", tc.stage1_epochs, tc.stage1_lr, false);
  result.stage2_steps = run_stage("stage2", tc.stage2_epochs, tc.stage2_lr, true);
  store.set_trainable([](const std::string&) { return true; });
  store.zero_grad();
  return result;
}

}  // namespace coherent_ed
