#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "coherent_ed/kb.hpp"
#include "coherent_ed/ops.hpp"
#include "coherent_ed/parameters.hpp"

namespace coherent_ed {

inline constexpr std::string_view kPrepToken = "[PERP]";
inline constexpr std::size_t kDefaultTopK = 10;

/// Splits a raw category label at the prepositions {in, from, for, of, by,
/// involving} into a head label and one "[PERP] <phrase>" label per
/// prepositional phrase. Matching is case-insensitive on whole words; empty
/// pieces are dropped and duplicates removed, keeping first occurrence.
inline std::vector<std::string> normalize_category_label(std::string_view raw) {
  static const std::vector<std::string> preps = {"in", "from", "for", "of", "by", "involving"};
  std::vector<std::string> words;
  {
    std::string cur;
    for (char c : raw) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!cur.empty()) words.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
  }
  if (words.empty()) throw ContractError("empty category label");

  auto is_prep = [&](const std::string& w) {
    std::string lw(w);
    for (char& c : lw) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return std::find(preps.begin(), preps.end(), lw) != preps.end();
  };

  std::vector<std::string> pieces;
  std::string current;
  bool in_phrase = false;
  auto emit = [&] {
    if (!current.empty()) pieces.push_back(in_phrase ? std::string(kPrepToken) + " " + current : current);
    current.clear();
  };
  for (const auto& w : words) {
    if (is_prep(w)) {
      emit();
      in_phrase = true;
      continue;
    }
    if (!current.empty()) current.push_back(' ');
    current += w;
  }
  emit();

  std::vector<std::string> out;
  for (auto& p : pieces) {
    if (std::find(out.begin(), out.end(), p) == out.end()) out.push_back(std::move(p));
  }
  return out;
}

/// Sorted, dense mapping between normalized category labels and indices.
class CategoryVocabulary {
 public:
  CategoryVocabulary() = default;

  /// Builds from arbitrary labels: deduplicated and sorted lexicographically.
  explicit CategoryVocabulary(std::vector<std::string> labels) {
    std::sort(labels.begin(), labels.end());
    labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
    labels_ = std::move(labels);
    for (std::size_t i = 0; i < labels_.size(); ++i) index_[labels_[i]] = i;
  }

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  bool contains(const std::string& label) const { return index_.count(label) > 0; }
  std::size_t index_of(const std::string& label) const {
    auto it = index_.find(label);
    if (it == index_.end()) throw ReferenceError("category not in vocabulary: " + label);
    return it->second;
  }
  const std::string& label(std::size_t i) const {
    if (i >= labels_.size()) throw IndexError("category index " + std::to_string(i) + " out of range");
    return labels_[i];
  }
  const std::vector<std::string>& labels() const { return labels_; }

  /// Sorted vocabulary indices of an entity's normalized categories.
  std::vector<std::size_t> indices_for(const Entity& e) const {
    std::vector<std::size_t> out;
    for (const auto& raw : e.categories)
      for (const auto& l : normalize_category_label(raw)) out.push_back(index_of(l));
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// One label per line; line number = index.
  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw LoadError("cannot write category vocabulary: " + path);
    for (const auto& l : labels_) out << l << '\n';
  }
  static CategoryVocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open category vocabulary: " + path);
    std::vector<std::string> labels;
    for (std::string line; std::getline(in, line);) labels.push_back(line);
    if (!std::is_sorted(labels.begin(), labels.end()) ||
        std::adjacent_find(labels.begin(), labels.end()) != labels.end()) {
      throw LoadError("category vocabulary " + path + " is not strictly sorted");
    }
    return CategoryVocabulary(std::move(labels));
  }

 private:
  std::vector<std::string> labels_;
  std::map<std::string, std::size_t> index_;
};

inline CategoryVocabulary build_category_vocab(const KnowledgeBase& kb) {
  std::vector<std::string> labels;
  for (const auto& e : kb.entities())
    for (const auto& raw : e.categories)
      for (auto& l : normalize_category_label(raw)) labels.push_back(std::move(l));
  return CategoryVocabulary(std::move(labels));
}

/// How one entity slot uses the memory.
struct MemoryMode {
  enum class Kind { Skip, Full, TopK, Oracle };
  Kind kind = Kind::Skip;
  std::size_t k = kDefaultTopK;
  std::vector<std::size_t> indices;

  static MemoryMode skip() { return {}; }
  static MemoryMode full() { return {Kind::Full, 0, {}}; }
  static MemoryMode top_k(std::size_t k = kDefaultTopK) { return {Kind::TopK, k, {}}; }
  static MemoryMode oracle(std::vector<std::size_t> indices) { return {Kind::Oracle, 0, std::move(indices)}; }
};

/// Embedding table C, projections W_A (no bias) and W_B, and the residual
/// LayerNorm. Shapes: C [|C| x d_cat], W_A [d_cat x d_ent], W_B [d_ent x d_cat].
struct CategoryMemoryParams {
  Tensor table;
  Tensor w_a;
  Tensor w_b;
  Tensor ln_gain;
  Tensor ln_bias;

  std::size_t num_categories() const { return table.dim(0); }
  std::size_t d_category() const { return table.dim(1); }
  std::size_t d_entity() const { return w_a.dim(1); }

  static CategoryMemoryParams create(ParameterStore& store, const std::string& prefix, std::size_t num_categories,
                                     std::size_t d_entity, std::size_t d_category, Rng& rng) {
    CategoryMemoryParams p;
    p.table = store.add(prefix + ".table", Tensor::normal({num_categories, d_category}, Scalar(0.02), rng));
    p.w_a = store.add(prefix + ".w_a", Tensor::normal({d_category, d_entity}, Scalar(1.0 / std::sqrt(double(d_entity))), rng));
    p.w_b = store.add(prefix + ".w_b", Tensor::normal({d_entity, d_category}, Scalar(1.0 / std::sqrt(double(d_category))), rng));
    p.ln_gain = store.add(prefix + ".ln.gain", Tensor({d_entity}, 1.0));
    p.ln_bias = store.add(prefix + ".ln.bias", Tensor({d_entity}, 0.0));
    return p;
  }
};

struct CategoryQueryResult {
  Tensor alpha;       // [1 x |C|]
  Tensor aggregated;  // [1 x d_ent]
  std::vector<std::size_t> selected_indices;
};

namespace detail {

inline std::vector<std::size_t> top_k_indices(std::span<const Scalar> row, std::size_t k) {
  std::vector<std::size_t> idx(row.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return row[a] > row[b] || (row[a] == row[b] && a < b); });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline void check_oracle(const MemoryMode& mode, std::size_t num_categories) {
  if (mode.indices.empty()) throw ContractError("Oracle memory mode needs at least one category index");
  for (std::size_t i : mode.indices) {
    if (i >= num_categories) {
      throw ContractError("oracle category index " + std::to_string(i) + " outside vocabulary of " +
                          std::to_string(num_categories));
    }
  }
}

struct MemoryWeights {
  Tensor alpha;    // [n x |C|]
  Tensor weights;  // [n x |C|]
  std::vector<std::vector<std::size_t>> selected;
};

/// Scores every row of `e` against the table and builds per-row aggregation weights.
inline MemoryWeights memory_weights(Tape& tape, const Tensor& e, const CategoryMemoryParams& p,
                                    const std::vector<MemoryMode>& modes) {
  const std::size_t n = e.dim(0), c = p.num_categories();
  if (c == 0) throw ContractError("category memory table is empty");
  const Tensor e_hat = matmul(tape, e, transpose(tape, p.w_a));
  MemoryWeights out;
  out.alpha = sigmoid(tape, matmul(tape, e_hat, transpose(tape, p.table)));
  Tensor mask({n, c}, 0.0);
  Tensor indicator({n, c}, 0.0);
  out.selected.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const MemoryMode& m = modes[i];
    auto& sel = out.selected[i];
    switch (m.kind) {
      case MemoryMode::Kind::Skip:
        break;
      case MemoryMode::Kind::Full:
        sel.resize(c);
        std::iota(sel.begin(), sel.end(), 0);
        break;
      case MemoryMode::Kind::TopK:
        sel = top_k_indices(out.alpha.values().subspan(i * c, c), m.k);
        break;
      case MemoryMode::Kind::Oracle:
        check_oracle(m, c);
        sel = m.indices;
        std::sort(sel.begin(), sel.end());
        sel.erase(std::unique(sel.begin(), sel.end()), sel.end());
        for (std::size_t j : sel) indicator.values()[i * c + j] = 1;
        continue;
    }
    for (std::size_t j : sel) mask.values()[i * c + j] = 1;
  }
  out.weights = add(tape, mul(tape, out.alpha, mask), indicator);
  return out;
}

}  // namespace detail

/// Queries the memory with a single entity state e [1 x d_ent] (or [d_ent]).
inline CategoryQueryResult query_memory(Tape& tape, const Tensor& e_masked, const CategoryMemoryParams& p,
                                        const MemoryMode& mode) {
  if (mode.kind == MemoryMode::Kind::Skip) throw ContractError("query_memory needs Full, TopK or Oracle mode");
  const Tensor e = e_masked.rank() == 1 ? reshape(tape, e_masked, {1, e_masked.numel()}) : e_masked;
  auto w = detail::memory_weights(tape, e, p, {mode});
  CategoryQueryResult r;
  r.alpha = w.alpha;
  r.aggregated = matmul(tape, matmul(tape, w.weights, p.table), transpose(tape, p.w_b));
  r.selected_indices = std::move(w.selected[0]);
  return r;
}

struct MemoryLayerOutput {
  Tensor e_prime;  // [n x d_ent]
  Tensor alpha;    // [n x |C|] scores for every slot (Skip rows are computed but unused)
  std::vector<std::vector<std::size_t>> selected;
};

/// E1' = LayerNorm(H + E1) on non-Skip slots; Skip slots pass through.
inline MemoryLayerOutput memory_layer_forward(Tape& tape, const Tensor& e1, const std::vector<MemoryMode>& modes,
                                              const CategoryMemoryParams& p) {
  detail::require_matrix("memory_layer_forward", e1);
  if (modes.size() != e1.dim(0)) {
    throw DimensionError("memory_layer_forward: " + std::to_string(modes.size()) + " modes for " +
                         shape_str(e1.shape()));
  }
  MemoryLayerOutput out;
  const bool any_active = std::any_of(modes.begin(), modes.end(),
                                      [](const MemoryMode& m) { return m.kind != MemoryMode::Kind::Skip; });
  if (!any_active || e1.dim(0) == 0) {
    out.e_prime = e1;
    out.selected.resize(modes.size());
    return out;
  }
  auto w = detail::memory_weights(tape, e1, p, modes);
  const Tensor h = matmul(tape, matmul(tape, w.weights, p.table), transpose(tape, p.w_b));
  const Tensor normed = layer_norm(tape, add(tape, h, e1), p.ln_gain, p.ln_bias);
  std::vector<std::uint8_t> keep(modes.size());
  for (std::size_t i = 0; i < modes.size(); ++i) keep[i] = modes[i].kind != MemoryMode::Kind::Skip;
  out.e_prime = select_rows(tape, keep, normed, e1);
  out.alpha = w.alpha;
  out.selected = std::move(w.selected);
  return out;
}

/// Category supervision. Default: mean elementwise binary cross-entropy of the
/// alpha rows against gold indicators. With `literal`, the linear form
/// -(1/|C|) sum_j alpha_ij * I_ij averaged over rows.
inline Tensor category_loss(Tape& tape, const Tensor& alpha_rows, const std::vector<std::vector<std::size_t>>& gold,
                            bool literal = false) {
  detail::require_matrix("category_loss", alpha_rows);
  const std::size_t n = alpha_rows.dim(0), c = alpha_rows.dim(1);
  if (gold.size() != n) {
    throw ContractError("category_loss: " + std::to_string(gold.size()) + " gold sets for " + std::to_string(n) +
                        " rows");
  }
  if (n == 0) return Tensor::scalar(0);
  std::vector<Scalar> labels(n * c, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j : gold[i]) {
      if (j >= c) throw ContractError("gold category " + std::to_string(j) + " outside vocabulary");
      labels[i * c + j] = 1;
    }
  }
  if (!literal) return binary_cross_entropy(tape, alpha_rows, labels);
  const Tensor ind(alpha_rows.shape(), std::move(labels));
  return scale(tape, mean(tape, mul(tape, alpha_rows, ind)), Scalar(-1));
}

}  // namespace coherent_ed
