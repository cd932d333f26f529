#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "coherent_ed/inference.hpp"
#include "coherent_ed/synthetic.hpp"
#include "coherent_ed/trainer.hpp"

namespace coherent_ed {

struct TokenizerOptions {
  std::size_t min_count = 1;
  bool lowercase = true;
};

/// Every setting of a run in one document. Keys are dotted, e.g.
/// "train.stage2_lr"; a "[train]" header prefixes the keys below it.
struct RunConfig {
  std::uint64_t seed = 1;
  SyntheticConfig synthetic;
  TokenizerOptions tokenizer;
  ModelConfig model;
  TrainConfig train;
  InferenceConfig inference;
};

namespace detail {

static_assert(std::is_same_v<std::size_t, std::uint64_t>, "seeds are stored as size_t fields");
using FieldRef = std::variant<std::size_t*, double*, bool*>;

/// Ordered key -> field binding; the single source of the key names.
inline std::vector<std::pair<std::string, FieldRef>> config_fields(RunConfig& c) {
  auto& t = c.model.transformer;
  auto& v = c.model.vae;
  auto& s = c.synthetic;
  auto& tr = c.train;
  auto& in = c.inference;
  return {
      {"seed", &c.seed},
      {"synthetic.num_topics", &s.num_topics},
      {"synthetic.entities_per_topic", &s.entities_per_topic},
      {"synthetic.homonym_groups", &s.homonym_groups},
      {"synthetic.leaves_per_topic", &s.leaves_per_topic},
      {"synthetic.categories_per_entity", &s.categories_per_entity},
      {"synthetic.content_words_per_topic", &s.content_words_per_topic},
      {"synthetic.templates_per_topic", &s.templates_per_topic},
      {"synthetic.sentences_per_doc", &s.sentences_per_doc},
      {"synthetic.min_mentions", &s.min_mentions},
      {"synthetic.max_mentions", &s.max_mentions},
      {"synthetic.distractors", &s.distractors},
      {"synthetic.homonym_only_fraction", &s.homonym_only_fraction},
      {"synthetic.neutral_context_fraction", &s.neutral_context_fraction},
      {"synthetic.train_docs", &s.train_docs},
      {"synthetic.test_docs", &s.test_docs},
      {"synthetic.seed", &s.seed},
      {"tokenizer.min_count", &c.tokenizer.min_count},
      {"tokenizer.lowercase", &c.tokenizer.lowercase},
      {"model.hidden", &t.hidden},
      {"model.num_heads", &t.num_heads},
      {"model.ffn", &t.ffn},
      {"model.layers_lower", &t.layers_lower},
      {"model.layers_upper", &t.layers_upper},
      {"model.max_positions", &t.max_positions},
      {"model.dropout", &t.dropout},
      {"model.d_category", &c.model.d_category},
      {"model.mask_rate", &c.model.mask_rate},
      {"model.alpha_coef", &c.model.alpha_coef},
      {"model.gamma_coef", &c.model.gamma_coef},
      {"model.category_loss_literal", &c.model.category_loss_literal},
      {"vae.d_z", &v.d_z},
      {"vae.hidden", &v.hidden},
      {"vae.num_heads", &v.num_heads},
      {"vae.ffn", &v.ffn},
      {"vae.encoder_layers", &v.encoder_layers},
      {"vae.decoder_layers", &v.decoder_layers},
      {"vae.max_length", &v.max_length},
      {"vae.dropout", &v.dropout},
      {"train.topic_sentences", &tr.topic_sentences},
      {"train.stage1_epochs", &tr.stage1_epochs},
      {"train.stage2_epochs", &tr.stage2_epochs},
      {"train.batch_size", &tr.batch_size},
      {"train.stage1_lr", &tr.stage1_lr},
      {"train.stage2_lr", &tr.stage2_lr},
      {"train.warmup_fraction", &tr.warmup_fraction},
      {"train.weight_decay", &tr.weight_decay},
      {"train.clip_norm", &tr.clip_norm},
      {"train.beta_cycle_steps", &tr.beta_cycle_steps},
      {"train.beta_ramp_fraction", &tr.beta_ramp_fraction},
      {"train.beta_max", &tr.beta_max},
      {"train.vae_pretrain_steps", &tr.vae_pretrain_steps},
      {"train.vae_batch_size", &tr.vae_batch_size},
      {"train.vae_lr", &tr.vae_lr},
      {"train.max_steps_per_stage", &tr.max_steps_per_stage},
      {"train.zero_topics", &tr.zero_topics},
      {"train.bypass_memory", &tr.bypass_memory},
      {"inference.topic_sentences", &in.topic_sentences},
      {"inference.top_k", &in.top_k},
      {"inference.renormalize", &in.renormalize},
      {"inference.one_shot", &in.one_shot},
      {"inference.oracle_guidance", &in.oracle_guidance},
      {"inference.zero_topics", &in.zero_topics},
      {"inference.bypass_memory", &in.bypass_memory},
  };
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline void assign_field(const FieldRef& ref, const std::string& key, const std::string& value) {
  auto bad = [&](const char* what) { return ConfigError(key + ": expected " + what + ", got '" + value + "'"); };
  std::visit(
      [&](auto* p) {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) {
          if (value == "true" || value == "1") *p = true;
          else if (value == "false" || value == "0") *p = false;
          else throw bad("true or false");
        } else if constexpr (std::is_same_v<T, double>) {
          std::size_t idx = 0;
          double d = 0;
          try {
            d = std::stod(value, &idx);
          } catch (const std::exception&) {
            throw bad("a number");
          }
          if (idx != value.size() || !std::isfinite(d)) throw bad("a number");
          *p = d;
        } else {
          std::size_t idx = 0;
          unsigned long long u = 0;
          try {
            if (value.empty() || value[0] == '-') throw std::invalid_argument(value);
            u = std::stoull(value, &idx);
          } catch (const std::exception&) {
            throw bad("a non-negative integer");
          }
          if (idx != value.size()) throw bad("a non-negative integer");
          *p = static_cast<T>(u);
        }
      },
      ref);
}

inline std::string field_text(const FieldRef& ref) {
  return std::visit(
      [](auto* p) -> std::string {
        using T = std::remove_pointer_t<decltype(p)>;
        if constexpr (std::is_same_v<T, bool>) return *p ? "true" : "false";
        else if constexpr (std::is_same_v<T, double>) return format_double(*p);
        else return std::to_string(*p);
      },
      ref);
}

}  // namespace detail

/// Checks every cross-field constraint; errors name the offending field.
inline void validate(const RunConfig& c) {
  auto wrap = [](const char* section, auto&& f) {
    try {
      f();
    } catch (const ConfigError&) {
      throw;
    } catch (const Error& e) {
      throw ConfigError(std::string(section) + ": " + e.what());
    }
  };
  wrap("synthetic", [&] { c.synthetic.validate(); });
  wrap("model", [&] { c.model.transformer.validate(); });
  wrap("vae", [&] { c.model.vae.validate(); });
  if (c.model.d_category == 0) throw ConfigError("model.d_category must be positive");
  if (!(c.model.mask_rate > 0 && c.model.mask_rate <= 1)) throw ConfigError("model.mask_rate must be in (0, 1]");
  if (!(c.model.alpha_coef >= 0)) throw ConfigError("model.alpha_coef must be >= 0");
  if (!(c.model.gamma_coef >= 0)) throw ConfigError("model.gamma_coef must be >= 0");
  if (c.tokenizer.min_count == 0) throw ConfigError("tokenizer.min_count must be positive");
  if (c.inference.top_k == 0) throw ConfigError("inference.top_k must be positive");
  c.train.validate();
}

/// Applies "key = value" lines onto `c`. Unknown keys and repeated keys are errors.
inline void apply_config_text(RunConfig& c, const std::string& text) {
  auto fields = detail::config_fields(c);
  std::map<std::string, detail::FieldRef> index(fields.begin(), fields.end());
  std::map<std::string, std::size_t> seen;
  std::string section;
  detail::for_each_line(text, [&](const std::string& raw, std::size_t line, std::size_t, bool) {
    std::string s = raw.substr(0, raw.find('#'));
    s = detail::trim(s);
    if (s.empty()) return;
    if (s.front() == '[') {
      if (s.back() != ']') throw ParseError("unterminated section header", line);
      section = detail::trim(s.substr(1, s.size() - 2));
      return;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ParseError("expected 'key = value'", line);
    std::string key = detail::trim(s.substr(0, eq));
    const std::string value = detail::trim(s.substr(eq + 1));
    if (!section.empty()) key = section + "." + key;
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown config key '" + key + "' (line " + std::to_string(line) + ")");
    if (auto [pos, fresh] = seen.emplace(key, line); !fresh) {
      throw ConfigError("config key '" + key + "' set twice (lines " + std::to_string(pos->second) + " and " +
                        std::to_string(line) + ")");
    }
    detail::assign_field(it->second, key, value);
  });
}

/// Sets one dotted key, as from a command-line override.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (auto& [k, ref] : detail::config_fields(c)) {
    if (k == key) return detail::assign_field(ref, key, value);
  }
  throw ConfigError("unknown config key '" + key + "'");
}

inline RunConfig parse_run_config(const std::string& text) {
  RunConfig c;
  apply_config_text(c, text);
  validate(c);
  return c;
}

inline RunConfig load_run_config(const std::string& path) { return parse_run_config(detail::read_file(path)); }

/// Canonical text: every key, grouped by section, in binding order.
inline std::string serialize_run_config(const RunConfig& c) {
  RunConfig copy = c;
  std::string out, section;
  for (const auto& [key, ref] : detail::config_fields(copy)) {
    const auto dot = key.find('.');
    const std::string sec = dot == std::string::npos ? "" : key.substr(0, dot);
    const std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += name + " = " + detail::field_text(ref) + "\n";
  }
  return out;
}

inline void save_run_config(const RunConfig& c, const std::string& path) {
  detail::write_file(path, serialize_run_config(c));
}

}  // namespace coherent_ed
