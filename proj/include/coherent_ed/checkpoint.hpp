#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "coherent_ed/config.hpp"

namespace coherent_ed {

/// Everything inference needs, as stored in one checkpoint directory:
///   params.ckpt             parameter container
///   config.txt              canonical RunConfig
///   words.txt               tokenizer vocabulary
///   entities.txt            entity vocabulary
///   categories.txt          category vocabulary
///   entity_categories.tsv   category indices per entity
///   vae.manifest            topic-VAE shape and tokenizer hash
struct Checkpoint {
  RunConfig config;
  Tokenizer tokenizer;
  EntityVocabulary entities;
  CategoryVocabulary categories;
  std::vector<std::vector<std::size_t>> entity_categories;
  CoherentEdModel model;
};

/// Completes the data-dependent sizes of the model config.
inline ModelConfig model_config_for(const RunConfig& rc, const Tokenizer& tok, const EntityVocabulary& ents,
                                    const CategoryVocabulary& cats) {
  ModelConfig mc = rc.model;
  mc.word_vocab_size = tok.size();
  mc.entity_vocab_size = ents.size();
  mc.num_categories = cats.size();
  return mc;
}

namespace detail {

inline std::string vae_manifest(const ModelConfig& mc, const Tokenizer& tok) {
  const auto& v = mc.vae;
  char buf[512];
  std::snprintf(buf, sizeof buf,
                "tokenizer_hash %016llx\nword_vocab %zu\nd_z %zu\nhidden %zu\nnum_heads %zu\nffn %zu\n"
                "encoder_layers %zu\ndecoder_layers %zu\nmax_length %zu\n",
                static_cast<unsigned long long>(tok.hash()), tok.size(), v.d_z, v.hidden, v.num_heads, v.ffn,
                v.encoder_layers, v.decoder_layers, v.max_length);
  return buf;
}

}  // namespace detail

inline void save_checkpoint(const std::string& dir, const RunConfig& rc, const Tokenizer& tok,
                            const EntityVocabulary& ents, const CategoryVocabulary& cats,
                            const std::vector<std::vector<std::size_t>>& entity_cats, const CoherentEdModel& model) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw LoadError("cannot create checkpoint directory " + dir + ": " + ec.message());
  const fs::path d(dir);
  write_tensors((d / "params.ckpt").string(), model.parameters());
  save_run_config(rc, (d / "config.txt").string());
  tok.save((d / "words.txt").string());
  ents.save((d / "entities.txt").string());
  cats.save((d / "categories.txt").string());
  std::string table;
  for (std::size_t i = 0; i < entity_cats.size(); ++i) {
    table += ents.id(i);
    for (std::size_t c : entity_cats[i]) table += "\t" + std::to_string(c);
    table += "\n";
  }
  detail::write_file((d / "entity_categories.tsv").string(), table);
  detail::write_file((d / "vae.manifest").string(), detail::vae_manifest(model.config(), tok));
}

inline Checkpoint load_checkpoint(const std::string& dir) {
  namespace fs = std::filesystem;
  const fs::path d(dir);
  if (!fs::is_directory(d)) throw LoadError("checkpoint directory not found: " + dir);
  for (const char* f : {"params.ckpt", "config.txt", "words.txt", "entities.txt", "categories.txt",
                        "entity_categories.tsv", "vae.manifest"}) {
    if (!fs::exists(d / f)) throw LoadError("checkpoint " + dir + " lacks " + f);
  }
  Checkpoint ck;
  ck.config = load_run_config((d / "config.txt").string());
  ck.tokenizer = Tokenizer::load((d / "words.txt").string(), ck.config.tokenizer.lowercase);
  ck.entities = EntityVocabulary::load((d / "entities.txt").string());
  ck.categories = CategoryVocabulary::load((d / "categories.txt").string());
  ck.entity_categories.resize(ck.entities.size());
  std::size_t row = 0;
  detail::for_each_line(detail::read_file((d / "entity_categories.tsv").string()),
                        [&](const std::string& s, std::size_t line, std::size_t, bool) {
                          const auto f = detail::split_tabs(s);
                          if (row >= ck.entities.size() || f[0] != ck.entities.id(row)) {
                            throw ParseError("entity category table out of step with entities.txt", line);
                          }
                          for (std::size_t i = 1; i < f.size(); ++i) {
                            const std::size_t c = detail::parse_size(f[i], line, "category index");
                            if (c >= ck.categories.size()) throw ParseError("category index out of range", line);
                            ck.entity_categories[row].push_back(c);
                          }
                          ++row;
                        });
  if (row != ck.entities.size()) throw LoadError("entity category table covers " + std::to_string(row) + " entities");
  const ModelConfig mc = model_config_for(ck.config, ck.tokenizer, ck.entities, ck.categories);
  if (detail::read_file((d / "vae.manifest").string()) != detail::vae_manifest(mc, ck.tokenizer)) {
    throw LoadError("vae.manifest does not match the tokenizer or VAE configuration in " + dir);
  }
  ck.model = CoherentEdModel(mc, ck.config.seed);
  load_into((d / "params.ckpt").string(), ck.model.parameters());
  return ck;
}

}  // namespace coherent_ed
