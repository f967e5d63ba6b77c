#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semirnet/error.hpp"
#include "semirnet/io.hpp"
#include "semirnet/knowledge.hpp"

namespace semirnet {

/// Serializes the expanded and embedded concept set of every word as JSON
/// lines, one per distinct normalized word in sorted order.
inline std::string build_concept_cache(const std::vector<std::string>& words, const KnowledgeBase& kb) {
  std::map<std::string, bool> unique;
  for (const auto& w : words) {
    const std::string n = normalize_concept(w);
    if (!n.empty()) unique[n] = true;
  }
  std::string out;
  for (const auto& [word, _] : unique) {
    const ConceptSet cs = kb.expand(word);
    const EmbeddedConcepts emb = embed_concept_set(cs, kb.table());
    nlohmann::json j;
    j["word"] = word;
    nlohmann::json concepts = nlohmann::json::array();
    for (const auto& [c, w] : cs.concepts) concepts.push_back({c, w});
    j["concepts"] = concepts;
    j["oov"] = emb.oov;
    j["embedded"] = emb.concepts;
    nlohmann::json rows = nlohmann::json::array();
    if (!emb.oov) {
      for (std::size_t r = 0; r < emb.rows.rows(); ++r) {
        auto row = emb.rows.row(r);
        rows.push_back(std::vector<double>(row.begin(), row.end()));
      }
    }
    j["rows"] = rows;
    out += j.dump();
    out += '\n';
  }
  return out;
}

/// Prebuilt word -> concept matrix lookup read from a knowledge-build file.
class ConceptCache : public ConceptSource {
 public:
  ConceptCache(std::size_t dimension) : dimension_(dimension) {}

  static ConceptCache load(const std::filesystem::path& path, std::size_t dimension = kConceptDim) {
    std::ifstream in = io::open_input(path, ErrorKind::kConfig);
    ConceptCache cache(dimension);
    const std::string src = path.string();
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (io::trim(line).empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(src, lineno, std::string("invalid JSON: ") + e.what());
      }
      try {
        EmbeddedConcepts emb;
        emb.oov = j.at("oov").get<bool>();
        emb.concepts = j.at("embedded").get<std::vector<std::string>>();
        const auto rows = j.at("rows").get<std::vector<std::vector<double>>>();
        if (emb.oov) {
          emb.rows = Tensor({1, dimension});
        } else {
          if (rows.empty() || rows.size() != emb.concepts.size()) {
            throw ParseError(src, lineno, "row count does not match embedded concepts");
          }
          std::vector<double> data;
          for (const auto& r : rows) {
            if (r.size() != dimension) {
              throw FormatError(src + ":" + std::to_string(lineno) + ": row dimension " +
                                std::to_string(r.size()) + ", expected " + std::to_string(dimension));
            }
            data.insert(data.end(), r.begin(), r.end());
          }
          emb.rows = Tensor::matrix(rows.size(), dimension, std::move(data));
        }
        cache.entries_[j.at("word").get<std::string>()] = std::move(emb);
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(src, lineno, std::string("bad record: ") + e.what());
      }
    }
    return cache;
  }

  EmbeddedConcepts lookup(const std::string& word) const override {
    auto it = entries_.find(normalize_concept(word));
    if (it != entries_.end()) return it->second;
    EmbeddedConcepts oov;
    oov.rows = Tensor({1, dimension_});
    oov.oov = true;
    return oov;
  }

  std::size_t dimension() const override { return dimension_; }
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  std::size_t dimension_;
  std::map<std::string, EmbeddedConcepts> entries_;
};

}  // namespace semirnet
