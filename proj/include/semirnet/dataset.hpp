#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "semirnet/encoders.hpp"
#include "semirnet/error.hpp"
#include "semirnet/io.hpp"
#include "semirnet/knowledge.hpp"

namespace semirnet {

/// One labeled image-text post.
struct Sample {
  std::string id;
  std::vector<std::string> text;
  std::vector<std::string> caption;
  std::vector<std::string> image_attrs;
  std::optional<std::vector<double>> image_vec;
  int label = 0;  // 1 = ironic
};

enum class Split { kTrain, kVal, kTest };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

struct Dataset {
  std::vector<Sample> samples;
  Split split = Split::kTrain;

  std::array<std::size_t, 2> label_counts() const {
    std::array<std::size_t, 2> c{0, 0};
    for (const auto& s : samples) ++c[static_cast<std::size_t>(s.label)];
    return c;
  }
  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
};

inline Sample sample_from_json(const nlohmann::json& j) {
  Sample s;
  s.id = j.at("id").get<std::string>();
  s.text = tokenize(j.at("text").get<std::string>());
  if (j.contains("caption") && !j["caption"].is_null()) s.caption = tokenize(j["caption"].get<std::string>());
  if (j.contains("image_attrs") && !j["image_attrs"].is_null()) {
    for (const auto& a : j["image_attrs"]) {
      const std::string n = normalize_concept(a.get<std::string>());
      if (!n.empty()) s.image_attrs.push_back(n);
    }
  }
  if (j.contains("image_vec") && !j["image_vec"].is_null()) {
    s.image_vec = j["image_vec"].get<std::vector<double>>();
  }
  const auto& label = j.at("label");
  if (!label.is_number_integer()) throw DataError("label must be 0 or 1");
  s.label = label.get<int>();
  if (s.label != 0 && s.label != 1) throw DataError("label must be 0 or 1, got " + std::to_string(s.label));
  return s;
}

/// Reads UTF-8 JSON lines. Any malformed record is a data error naming
/// the line; ids must be unique.
inline Dataset load_dataset(const std::filesystem::path& path, Split split) {
  std::ifstream in = io::open_input(path, ErrorKind::kData);
  Dataset ds;
  ds.split = split;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (io::trim(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
    Sample s;
    try {
      s = sample_from_json(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + e.what());
    } catch (const DataError& e) {
      throw DataError(where + e.what());
    }
    if (!ids.insert(s.id).second) throw DataError(where + "duplicate id '" + s.id + "'");
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline nlohmann::json sample_to_json(const Sample& s) {
  const auto join = [](const std::vector<std::string>& words) {
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return out;
  };
  nlohmann::json j;
  j["id"] = s.id;
  j["text"] = join(s.text);
  j["caption"] = join(s.caption);
  j["image_attrs"] = s.image_attrs;
  if (s.image_vec) j["image_vec"] = *s.image_vec;
  j["label"] = s.label;
  return j;
}

inline std::string format_dataset(const Dataset& ds) {
  std::string out;
  for (const auto& s : ds.samples) out += sample_to_json(s).dump() + "\n";
  return out;
}

}  // namespace semirnet
