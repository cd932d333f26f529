#pragma once

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coherent_ed/checkpoint.hpp"

namespace coherent_ed {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitData = 2, kExitRuntime = 3 };

/// Domain owning each category: the most common domain among entities that
/// carry it (ties to the lexicographically first), "-" when unused.
inline std::vector<std::string> category_topics(const KnowledgeBase& kb, const CategoryVocabulary& cats) {
  std::vector<std::map<std::string, std::size_t>> votes(cats.size());
  for (const auto& e : kb.entities())
    for (std::size_t c : cats.indices_for(e)) ++votes[c][e.domain];
  std::vector<std::string> out;
  for (const auto& v : votes) {
    std::string best = "-";
    std::size_t n = 0;
    for (const auto& [topic, count] : v)
      if (count > n) best = topic, n = count;
    out.push_back(best);
  }
  return out;
}

inline Tokenizer fit_tokenizer(const Corpus& corpus, const TokenizerOptions& opt) {
  std::vector<std::vector<std::string>> raw;
  for (const auto& d : corpus.documents)
    for (const auto& s : d.sentences) raw.push_back(s.tokens);
  return Tokenizer::fit(raw, opt.min_count, opt.lowercase);
}

/// Disambiguates every document of `corpus` with a loaded checkpoint.
inline std::vector<PredictionRecord> run_inference(const Checkpoint& ck, const Corpus& corpus,
                                                   const InferenceConfig& cfg, std::uint64_t seed) {
  const auto docs = encode_corpus(corpus, ck.tokenizer, ck.entities);
  const InferenceEngine engine(ck.model, ck.entity_categories, cfg, seed);
  std::vector<PredictionRecord> out;
  for (const auto& d : docs) {
    const auto recs = to_records(d, engine.disambiguate(d), ck.entities);
    out.insert(out.end(), recs.begin(), recs.end());
  }
  return out;
}

namespace detail {

struct CliState {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
};

inline RunConfig resolve_config(const CliState& s, RunConfig base = {}) {
  RunConfig rc = base;
  if (!s.config_path.empty()) apply_config_text(rc, read_file(s.config_path));
  for (const auto& kv : s.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(rc, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
  }
  std::optional<std::uint64_t> seed = s.seed;
  if (const char* env = std::getenv("COHERENTED_SEED"); env && *env) {
    const std::string v = env;
    if (v.find_first_not_of("0123456789") != std::string::npos) {
      throw ConfigError("COHERENTED_SEED must be a non-negative integer, got '" + v + "'");
    }
    seed = std::stoull(v);
  }
  if (seed) {
    rc.seed = *seed;
    rc.synthetic.seed = *seed;
  }
  validate(rc);
  return rc;
}

inline std::string join_path(const std::string& dir, const char* name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw LoadError("cannot create directory " + dir + ": " + ec.message());
}

inline std::string vector_text(std::span<const Scalar> v) {
  std::string out;
  char buf[32];
  for (Scalar x : v) {
    std::snprintf(buf, sizeof buf, "\t%.9g", double(x));
    out += buf;
  }
  return out;
}

}  // namespace detail

/// Runs one CLI invocation; args exclude the program name.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"CoherentED: entity disambiguation with topic tokens and category memory", "coherent-ed"};
  app.require_subcommand(1);
  detail::CliState st;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", st.config_path, "Run configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", st.overrides, "Override one config key (key=value)");
    sub->add_option("--seed", st.seed, "Master seed");
  };

  std::string out_dir, kb_path, train_path, corpus_path, ckpt_dir, pred_path, gold_path, report_path, dataset = "corpus";

  auto* gen = app.add_subcommand("gen-data", "Write a synthetic KB with train and test corpora");
  common(gen);
  gen->add_option("--out", out_dir, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train a model and write a checkpoint");
  common(train);
  train->add_option("--kb", kb_path, "Knowledge base file")->required()->check(CLI::ExistingFile);
  train->add_option("--train", train_path, "Training corpus")->required()->check(CLI::ExistingFile);
  train->add_option("--out", ckpt_dir, "Checkpoint directory")->required();

  auto* infer = app.add_subcommand("infer", "Disambiguate a corpus with a checkpoint");
  common(infer);
  infer->add_option("--checkpoint", ckpt_dir, "Checkpoint directory")->required();
  infer->add_option("--corpus", corpus_path, "Corpus to disambiguate")->required()->check(CLI::ExistingFile);
  infer->add_option("--out", pred_path, "Prediction file")->required();

  auto* eval = app.add_subcommand("eval", "Score predictions against a gold corpus");
  eval->add_option("--gold", gold_path, "Gold corpus")->required()->check(CLI::ExistingFile);
  eval->add_option("--pred", pred_path, "Prediction file")->required()->check(CLI::ExistingFile);
  eval->add_option("--out", report_path, "Report file (default: stdout)");
  eval->add_option("--dataset", dataset, "Dataset name in the report");
  eval->add_option("--seed", st.seed, "Accepted for uniformity; eval is deterministic");

  auto* dump = app.add_subcommand("dump-embeddings", "Write category-memory rows and sentence topic vectors");
  common(dump);
  dump->add_option("--checkpoint", ckpt_dir, "Checkpoint directory")->required();
  dump->add_option("--corpus", corpus_path, "Corpus whose sentences are embedded")->required()->check(CLI::ExistingFile);
  dump->add_option("--kb", kb_path, "Knowledge base, for the topic of each category")->check(CLI::ExistingFile);
  dump->add_option("--out", out_dir, "Output directory")->required();

  std::vector<std::string> argv_store{"coherent-ed"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (gen->parsed()) {
      const RunConfig rc = detail::resolve_config(st);
      detail::ensure_dir(out_dir);
      const auto s = generate_synthetic(rc.synthetic);
      save_kb(s.kb, detail::join_path(out_dir, "kb.tsv"));
      save_corpus(s.train, detail::join_path(out_dir, "train.tsv"));
      save_corpus(s.test, detail::join_path(out_dir, "test.tsv"));
      err << "wrote " << s.kb.entities().size() << " entities, " << s.train.documents.size() << " train and "
          << s.test.documents.size() << " test documents to " << out_dir << "\n";
    } else if (train->parsed()) {
      const RunConfig rc = detail::resolve_config(st);
      const KnowledgeBase kb = load_kb(kb_path);
      const Corpus corpus = load_corpus(train_path, &kb);
      const Tokenizer tok = fit_tokenizer(corpus, rc.tokenizer);
      const auto ents = EntityVocabulary::from_kb(kb);
      const auto cats = build_category_vocab(kb);
      const auto table = entity_category_table(kb, ents, cats);
      CoherentEdModel model(model_config_for(rc, tok, ents, cats), rc.seed);
      const auto docs = encode_corpus(corpus, tok, ents);
      const auto res = train_model(model, docs, table, rc.train, rc.seed + 1);
      save_checkpoint(ckpt_dir, rc, tok, ents, cats, table, model);
      write_metrics(detail::join_path(ckpt_dir, "metrics.tsv"), res.log);
      err << "trained " << res.stage1_steps << " stage-1 and " << res.stage2_steps << " stage-2 steps; checkpoint "
          << ckpt_dir << "\n";
    } else if (infer->parsed()) {
      const Checkpoint ck = load_checkpoint(ckpt_dir);
      const RunConfig rc = detail::resolve_config(st, ck.config);
      const Corpus corpus = load_corpus(corpus_path);
      const auto preds = run_inference(ck, corpus, rc.inference, rc.seed);
      save_predictions(preds, pred_path);
      err << "wrote " << preds.size() << " predictions to " << pred_path << "\n";
    } else if (eval->parsed()) {
      const Corpus gold = load_corpus(gold_path);
      const std::string text = format_report(micro_f1(load_predictions(pred_path), gold, dataset));
      if (report_path.empty()) out << text;
      else detail::write_file(report_path, text);
    } else if (dump->parsed()) {
      const Checkpoint ck = load_checkpoint(ckpt_dir);
      detail::resolve_config(st, ck.config);
      detail::ensure_dir(out_dir);
      std::vector<std::string> topics(ck.categories.size(), "-");
      if (!kb_path.empty()) topics = category_topics(load_kb(kb_path), ck.categories);
      const Tensor& table = ck.model.memory().table;
      const std::size_t d = table.dim(1);
      std::string cat_text;
      for (std::size_t c = 0; c < ck.categories.size(); ++c) {
        cat_text += std::to_string(c) + "\t" + ck.categories.label(c) + "\t" + topics[c] +
                    detail::vector_text(table.values().subspan(c * d, d)) + "\n";
      }
      detail::write_file(detail::join_path(out_dir, "categories.tsv"), cat_text);
      const Corpus corpus = load_corpus(corpus_path);
      std::string sent_text;
      for (const auto& doc : corpus.documents) {
        for (std::size_t s = 0; s < doc.sentences.size(); ++s) {
          const auto ids = ck.tokenizer.encode(doc.sentences[s].tokens);
          std::string vec;
          if (!ids.empty()) {
            const Tensor z = ck.model.vae().topic_token(ids);
            vec = detail::vector_text(z.values());
          }
          sent_text += doc.id + "\t" + std::to_string(s) + "\t" + doc.sentences[s].label + "\t" + doc.topic + vec + "\n";
        }
      }
      detail::write_file(detail::join_path(out_dir, "sentences.tsv"), sent_text);
      err << "wrote " << ck.categories.size() << " category rows and sentence vectors to " << out_dir << "\n";
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const LoadError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const ReferenceError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace coherent_ed
