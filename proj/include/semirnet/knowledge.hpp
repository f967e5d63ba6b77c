#pragma once

#include <algorithm>
#include <cctype>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "semirnet/error.hpp"
#include "semirnet/io.hpp"
#include "semirnet/tensor.hpp"

namespace semirnet {

inline constexpr std::size_t kConceptDim = 300;

/// Lowercase, trim, spaces to underscores (ConceptNet URI convention).
inline std::string normalize_concept(std::string_view word) {
  word = io::trim(word);
  std::string out;
  out.reserve(word.size());
  bool in_space = false;
  for (char ch : word) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == ' ' || c == '\t') {
      if (!in_space) out.push_back('_');
      in_space = true;
      continue;
    }
    in_space = false;
    out.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
  }
  return out;
}

struct ConceptUri {
  std::string language;  // empty for bare words
  std::string term;
};

/// Splits "/c/en/ice_cream/n/..." into ("en", "ice_cream"); bare words
/// pass through with an empty language.
inline ConceptUri parse_concept_uri(std::string_view text) {
  text = io::trim(text);
  if (text.starts_with("/c/")) {
    const auto parts = io::split_on(text.substr(3), '/');
    if (parts.size() >= 2) return {std::string(parts[0]), normalize_concept(parts[1])};
    return {parts.empty() ? std::string() : std::string(parts[0]), std::string()};
  }
  return {std::string(), normalize_concept(text)};
}

// --- embeddings ----------------------------------------------------------

/// Word -> concept vector map. Lookups are case-folded.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t dimension, std::string language)
      : dimension_(dimension), language_(std::move(language)) {}

  void insert(const std::string& word, std::vector<double> vec) {
    if (vec.size() != dimension_) {
      throw FormatError("embedding for '" + word + "' has dimension " + std::to_string(vec.size()) +
                        ", table dimension is " + std::to_string(dimension_));
    }
    vectors_[normalize_concept(word)] = std::move(vec);
  }

  const std::vector<double>* find(std::string_view word) const {
    auto it = vectors_.find(normalize_concept(word));
    return it == vectors_.end() ? nullptr : &it->second;
  }

  std::size_t dimension() const noexcept { return dimension_; }
  const std::string& language() const noexcept { return language_; }
  std::size_t size() const noexcept { return vectors_.size(); }
  const std::map<std::string, std::vector<double>>& entries() const noexcept { return vectors_; }

 private:
  std::size_t dimension_ = kConceptDim;
  std::string language_ = "en";
  std::map<std::string, std::vector<double>> vectors_;
};

/// Reads Numberbatch text: optional "<count> <dim>" header, then
/// "/c/<lang>/<word> v1 ... vdim" or "<word> v1 ... vdim" lines.
/// URIs tagged with another language are skipped.
inline EmbeddingTable load_numberbatch(const std::filesystem::path& path, const std::string& language,
                                       std::size_t expected_dim = kConceptDim) {
  std::ifstream in = io::open_input(path, ErrorKind::kConfig);
  EmbeddingTable table(expected_dim, language);
  const std::string src = path.string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto fields = io::split_whitespace(line);
    if (fields.empty()) continue;
    if (lineno == 1 && fields.size() == 2 && io::parse_int(fields[0]) && io::parse_int(fields[1])) {
      const auto dim = *io::parse_int(fields[1]);
      if (dim != static_cast<long long>(expected_dim)) {
        throw FormatError(src + ": header declares dimension " + std::to_string(dim) + ", expected " +
                          std::to_string(expected_dim));
      }
      continue;
    }
    const ConceptUri uri = parse_concept_uri(fields[0]);
    if (uri.term.empty()) throw ParseError(src, lineno, "unreadable concept key");
    if (!uri.language.empty() && uri.language != language) continue;
    if (fields.size() - 1 != expected_dim) {
      throw FormatError(src + ":" + std::to_string(lineno) + ": vector has " +
                        std::to_string(fields.size() - 1) + " values, expected " +
                        std::to_string(expected_dim));
    }
    std::vector<double> vec;
    vec.reserve(expected_dim);
    for (std::size_t i = 1; i < fields.size(); ++i) {
      const auto x = io::parse_double(fields[i]);
      if (!x) throw ParseError(src, lineno, "malformed value '" + std::string(fields[i]) + "'");
      vec.push_back(*x);
    }
    table.insert(uri.term, std::move(vec));
  }
  return table;
}

/// Writes a header line and one /c/<lang>/<word> line per entry.
inline std::string format_numberbatch(const EmbeddingTable& table) {
  std::string out = std::to_string(table.size()) + " " + std::to_string(table.dimension()) + "\n";
  for (const auto& [word, vec] : table.entries()) {
    out += "/c/" + table.language() + "/" + word;
    for (double v : vec) out += " " + io::format_double(v);
    out += "\n";
  }
  return out;
}

// --- edges ---------------------------------------------------------------

struct ConceptEdge {
  std::string start;
  std::string relation;
  std::string end;
  double weight = 1.0;

  friend bool operator==(const ConceptEdge&, const ConceptEdge&) = default;
};

inline std::string normalize_relation(std::string_view rel) {
  rel = io::trim(rel);
  if (rel.starts_with("/r/")) rel.remove_prefix(3);
  return std::string(rel);
}

/// Reads a `start,relation,end,weight` CSV with a header row.
inline std::vector<ConceptEdge> load_edge_dump(const std::filesystem::path& path) {
  std::ifstream in = io::open_input(path, ErrorKind::kConfig);
  const std::string src = path.string();
  std::vector<ConceptEdge> edges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno == 1) {
      if (normalize_concept(line) != "start,relation,end,weight") {
        throw FormatError(src + ": missing header row 'start,relation,end,weight'");
      }
      continue;
    }
    if (io::trim(line).empty()) continue;
    const auto fields = io::split_on(line, ',');
    if (fields.size() != 4) throw ParseError(src, lineno, "expected 4 comma-separated fields");
    const auto weight = io::parse_double(io::trim(fields[3]));
    if (!weight) throw ParseError(src, lineno, "malformed weight");
    if (!(*weight >= 0.0)) throw ParseError(src, lineno, "negative edge weight");
    ConceptEdge e{parse_concept_uri(fields[0]).term, normalize_relation(fields[1]),
                  parse_concept_uri(fields[2]).term, *weight};
    if (e.start.empty() || e.end.empty()) throw ParseError(src, lineno, "empty concept");
    edges.push_back(std::move(e));
  }
  if (lineno == 0) throw FormatError(src + ": empty edge dump (header row required)");
  return edges;
}

inline std::string format_edge_dump(const std::vector<ConceptEdge>& edges) {
  std::string out = "start,relation,end,weight\n";
  for (const auto& e : edges) {
    out += e.start + "," + e.relation + "," + e.end + "," + io::format_double(e.weight) + "\n";
  }
  return out;
}

/// Undirected adjacency over concept edges. Immutable after construction.
class EdgeIndex {
 public:
  struct Neighbor {
    std::string concept_name;
    std::string relation;
    double weight;
  };

  EdgeIndex() = default;
  explicit EdgeIndex(const std::vector<ConceptEdge>& edges) {
    for (const auto& e : edges) {
      const std::string a = normalize_concept(e.start);
      const std::string b = normalize_concept(e.end);
      if (a.empty() || b.empty() || a == b) continue;
      adjacency_[a].push_back({b, e.relation, e.weight});
      adjacency_[b].push_back({a, e.relation, e.weight});
    }
  }

  const std::vector<Neighbor>& neighbors(const std::string& normalized) const {
    static const std::vector<Neighbor> kNone;
    auto it = adjacency_.find(normalized);
    return it == adjacency_.end() ? kNone : it->second;
  }

 private:
  std::unordered_map<std::string, std::vector<Neighbor>> adjacency_;
};

inline const std::set<std::string>& default_relation_filter() {
  static const std::set<std::string> kRelations{"RelatedTo", "IsA", "Synonym", "HasProperty", "UsedFor"};
  return kRelations;
}

// --- concept sets --------------------------------------------------------

/// A word and its related concepts, sorted by weight descending with
/// lexicographic tie-break. Entry 0 is always the word itself.
struct ConceptSet {
  std::string source;
  std::vector<std::pair<std::string, double>> concepts;
};

inline ConceptSet expand_concepts(std::string_view word, const EdgeIndex& edges, std::size_t k,
                                  const std::set<std::string>& relation_filter) {
  const std::string norm = normalize_concept(word);
  std::map<std::string, double> best;  // neighbor -> max weight over passing edges
  for (const auto& n : edges.neighbors(norm)) {
    if (!relation_filter.contains(n.relation)) continue;
    auto [it, inserted] = best.emplace(n.concept_name, n.weight);
    if (!inserted) it->second = std::max(it->second, n.weight);
  }
  std::vector<std::pair<std::string, double>> ranked(best.begin(), best.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& x, const auto& y) {
    if (x.second != y.second) return x.second > y.second;
    return x.first < y.first;
  });
  if (ranked.size() > k) ranked.resize(k);

  double max_weight = 0.0;
  for (const auto& [c, w] : best) max_weight = std::max(max_weight, w);
  ConceptSet out{norm, {}};
  out.concepts.emplace_back(norm, max_weight + 1.0);
  out.concepts.insert(out.concepts.end(), ranked.begin(), ranked.end());
  return out;
}

/// Stacked table vectors for the concepts of a set. Concepts missing from
/// the table are dropped; if none remain, a single zero row flagged OOV.
struct EmbeddedConcepts {
  Tensor rows;
  std::vector<std::string> concepts;  // one per row; empty when oov
  bool oov = false;
};

inline EmbeddedConcepts embed_concept_set(const ConceptSet& cs, const EmbeddingTable& table) {
  const std::size_t d = table.dimension();
  std::vector<double> data;
  EmbeddedConcepts out;
  for (const auto& [name, weight] : cs.concepts) {
    if (const auto* vec = table.find(name)) {
      data.insert(data.end(), vec->begin(), vec->end());
      out.concepts.push_back(name);
    }
  }
  if (out.concepts.empty()) {
    out.rows = Tensor({1, d});
    out.oov = true;
  } else {
    out.rows = Tensor::matrix(out.concepts.size(), d, std::move(data));
  }
  return out;
}

// --- stopwords -----------------------------------------------------------

inline const std::set<std::string>& default_stopwords() {
  static const std::set<std::string> kWords{
      "a",     "about", "above", "after", "again", "all",   "am",    "an",    "and",   "any",
      "are",   "as",    "at",    "be",    "been",  "being", "but",   "by",    "can",   "could",
      "did",   "do",    "does",  "doing", "for",   "from",  "had",   "has",   "have",  "having",
      "he",    "her",   "here",  "hers",  "him",   "his",   "how",   "i",     "if",    "in",
      "into",  "is",    "it",    "it's",  "its",   "just",  "me",    "my",    "of",    "on",
      "or",    "our",   "ours",  "she",   "so",    "than",  "that",  "the",   "their", "them",
      "then",  "there", "these", "they",  "this",  "those", "to",    "too",   "us",    "was",
      "we",    "were",  "what",  "when",  "where", "which", "while", "who",   "why",   "will",
      "with",  "would", "you",   "your",  "yours", "i'm",   "im",    "rt",    "via",   "amp"};
  return kWords;
}

inline std::set<std::string> load_word_list(const std::filesystem::path& path) {
  std::ifstream in = io::open_input(path, ErrorKind::kConfig);
  std::set<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const std::string w = normalize_concept(line);
    if (!w.empty() && w[0] != '#') out.insert(w);
  }
  return out;
}

/// Source of per-word concept matrices for the word-level similarity.
class ConceptSource {
 public:
  virtual ~ConceptSource() = default;
  virtual EmbeddedConcepts lookup(const std::string& word) const = 0;
  virtual std::size_t dimension() const = 0;
};

/// Expands words through an edge index and embeds them with a table.
class KnowledgeBase : public ConceptSource {
 public:
  KnowledgeBase(EmbeddingTable table, EdgeIndex edges, std::size_t k,
                std::set<std::string> relation_filter = default_relation_filter())
      : table_(std::move(table)), edges_(std::move(edges)), k_(k), filter_(std::move(relation_filter)) {}

  ConceptSet expand(const std::string& word) const { return expand_concepts(word, edges_, k_, filter_); }

  EmbeddedConcepts lookup(const std::string& word) const override {
    return embed_concept_set(expand(word), table_);
  }

  std::size_t dimension() const override { return table_.dimension(); }
  const EmbeddingTable& table() const noexcept { return table_; }

 private:
  EmbeddingTable table_;
  EdgeIndex edges_;
  std::size_t k_;
  std::set<std::string> filter_;
};

/// Stacks the concept rows of every non-stopword word into one matrix
/// (OOV zero rows included; the similarity module excludes them).
inline Tensor concept_matrix(const std::vector<std::string>& words, const ConceptSource& source,
                             const std::set<std::string>& stopwords) {
  const std::size_t d = source.dimension();
  std::vector<double> data;
  std::size_t rows = 0;
  for (const auto& w : words) {
    if (stopwords.contains(w)) continue;
    const EmbeddedConcepts e = source.lookup(w);
    if (e.oov) continue;
    data.insert(data.end(), e.rows.values().begin(), e.rows.values().end());
    rows += e.rows.rows();
  }
  if (rows == 0) return Tensor({1, d});
  return Tensor::matrix(rows, d, std::move(data));
}

}  // namespace semirnet
