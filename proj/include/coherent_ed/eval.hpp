#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "coherent_ed/kb.hpp"

namespace coherent_ed {

/// One line of a prediction file: entity nullopt is NoCandidate ("NIL").
struct PredictionRecord {
  std::string doc;
  std::size_t mention = 0;
  std::optional<std::string> entity;
  std::size_t step = 0;
  double log_prob = 0;

  bool operator==(const PredictionRecord&) const = default;
};

inline const char* kPredictionHeader = "doc\tmention\tentity\tstep\tlog_prob";

inline std::string serialize_predictions(const std::vector<PredictionRecord>& recs) {
  std::string out = std::string(kPredictionHeader) + "\n";
  for (const auto& r : recs) {
    out += r.doc + "\t" + std::to_string(r.mention) + "\t" + r.entity.value_or("NIL") + "\t" + std::to_string(r.step) +
           "\t" + (std::isfinite(r.log_prob) ? detail::format_double(r.log_prob) : std::string("-inf")) + "\n";
  }
  return out;
}

inline std::vector<PredictionRecord> parse_predictions(const std::string& text) {
  std::vector<PredictionRecord> out;
  detail::for_each_line(text, [&](const std::string& s, std::size_t line, std::size_t, bool) {
    if (s.empty() || s[0] == '#' || s == kPredictionHeader) return;
    const auto f = detail::split_tabs(s);
    if (f.size() != 5) throw ParseError("prediction record expects 5 fields, got " + std::to_string(f.size()), line);
    PredictionRecord r;
    r.doc = f[0];
    if (r.doc.empty()) throw ParseError("empty document id", line);
    r.mention = detail::parse_size(f[1], line, "mention index");
    if (f[2] != "NIL") r.entity = f[2];
    r.step = detail::parse_size(f[3], line, "step");
    r.log_prob = f[4] == "-inf" ? -std::numeric_limits<double>::infinity() : detail::parse_double(f[4], line, "log prob");
    out.push_back(std::move(r));
  });
  return out;
}

inline void save_predictions(const std::vector<PredictionRecord>& recs, const std::string& path) {
  detail::write_file(path, serialize_predictions(recs));
}
inline std::vector<PredictionRecord> load_predictions(const std::string& path) {
  return parse_predictions(detail::read_file(path));
}

struct EvalCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;

  double precision() const { return tp + fp ? double(tp) / double(tp + fp) : 0.0; }
  double recall() const { return tp + fn ? double(tp) / double(tp + fn) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
  EvalCounts& operator+=(const EvalCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct MentionOutcome {
  std::string doc;
  std::size_t mention = 0;
  std::string gold;
  std::optional<std::string> predicted;
  bool correct() const { return predicted && *predicted == gold; }
};

struct EvalReport {
  std::vector<std::pair<std::string, EvalCounts>> datasets;
  EvalCounts total;
  std::vector<MentionOutcome> mentions;
};

/// InKB micro F1. A correct prediction is a TP; a wrong entity is an FP and
/// an FN; NoCandidate, or no prediction at all, is an FN only.
inline EvalCounts score_corpus(const std::vector<PredictionRecord>& preds, const Corpus& gold,
                               std::vector<MentionOutcome>* rows = nullptr) {
  std::map<std::pair<std::string, std::size_t>, const PredictionRecord*> by_key;
  for (const auto& p : preds) {
    if (!by_key.emplace(std::make_pair(p.doc, p.mention), &p).second) {
      throw ContractError("two predictions for " + p.doc + " mention " + std::to_string(p.mention));
    }
  }
  std::map<std::string, const Document*> docs;
  for (const auto& d : gold.documents) docs.emplace(d.id, &d);
  for (const auto& p : preds) {
    auto it = docs.find(p.doc);
    if (it == docs.end() || p.mention >= it->second->mentions.size()) {
      throw ContractError("prediction for unknown mention " + p.doc + " " + std::to_string(p.mention));
    }
  }
  EvalCounts c;
  for (const auto& d : gold.documents) {
    for (std::size_t i = 0; i < d.mentions.size(); ++i) {
      MentionOutcome o{d.id, i, d.mentions[i].gold, std::nullopt};
      auto it = by_key.find({d.id, i});
      if (it != by_key.end()) o.predicted = it->second->entity;
      if (o.correct()) ++c.tp;
      else {
        ++c.fn;
        if (o.predicted) ++c.fp;
      }
      if (rows) rows->push_back(std::move(o));
    }
  }
  return c;
}

inline EvalReport micro_f1(const std::vector<PredictionRecord>& preds, const Corpus& gold,
                           const std::string& dataset = "corpus") {
  EvalReport r;
  r.total = score_corpus(preds, gold, &r.mentions);
  r.datasets.emplace_back(dataset, r.total);
  return r;
}

/// Merges per-dataset reports into one with micro-averaged totals.
inline EvalReport merge_reports(const std::vector<EvalReport>& parts) {
  EvalReport out;
  for (const auto& p : parts) {
    out.datasets.insert(out.datasets.end(), p.datasets.begin(), p.datasets.end());
    out.total += p.total;
    out.mentions.insert(out.mentions.end(), p.mentions.begin(), p.mentions.end());
  }
  return out;
}

inline std::string format_report(const EvalReport& r, bool with_mentions = true) {
  std::string out = "dataset\ttp\tfp\tfn\tprecision\trecall\tf1\n";
  auto row = [&](const std::string& name, const EvalCounts& c) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s\t%zu\t%zu\t%zu\t%.6f\t%.6f\t%.6f\n", name.c_str(), c.tp, c.fp, c.fn,
                  c.precision(), c.recall(), c.f1());
    out += buf;
  };
  for (const auto& [name, c] : r.datasets) row(name, c);
  row("micro", r.total);
  if (with_mentions) {
    out += "\ndoc\tmention\tgold\tpredicted\tcorrect\n";
    for (const auto& m : r.mentions) {
      out += m.doc + "\t" + std::to_string(m.mention) + "\t" + m.gold + "\t" + m.predicted.value_or("NIL") + "\t" +
             (m.correct() ? "1" : "0") + "\n";
    }
  }
  return out;
}

}  // namespace coherent_ed
