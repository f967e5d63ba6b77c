#pragma once

#include <cctype>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "semirnet/autodiff.hpp"
#include "semirnet/error.hpp"
#include "semirnet/io.hpp"
#include "semirnet/rng.hpp"
#include "semirnet/tensor.hpp"

namespace semirnet {

using TokenId = std::size_t;

/// Lowercases and splits on anything that is not a word character.
/// Bytes >= 0x80 are kept so UTF-8 words survive intact.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c == '_' || c == '\'' || c >= 0x80) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

/// Token <-> id map with reserved ids PAD=0, UNK=1, MASK=2.
class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kUnk = 1;
  static constexpr TokenId kMask = 2;

  Vocab() {
    add("[PAD]");
    add("[UNK]");
    add("[MASK]");
  }

  TokenId add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const TokenId id = tokens_.size();
    ids_.emplace(token, id);
    tokens_.push_back(token);
    return id;
  }

  TokenId id_of(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }

  const std::string& token(TokenId id) const { return tokens_.at(id); }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  std::vector<TokenId> encode(const std::vector<std::string>& words) const {
    std::vector<TokenId> ids;
    ids.reserve(words.size());
    for (const auto& w : words) ids.push_back(id_of(w));
    return ids;
  }

  /// Rebuilds from a full token list; the first three must be the reserved ones.
  static Vocab from_tokens(const std::vector<std::string>& tokens) {
    Vocab v;
    if (tokens.size() < 3 || tokens[0] != "[PAD]" || tokens[1] != "[UNK]" || tokens[2] != "[MASK]") {
      throw FormatError("vocab: reserved tokens missing or reordered");
    }
    for (std::size_t i = 3; i < tokens.size(); ++i) {
      if (v.add(tokens[i]) != i) throw FormatError("vocab: duplicate token '" + tokens[i] + "'");
    }
    return v;
  }

 private:
  std::unordered_map<std::string, TokenId> ids_;
  std::vector<std::string> tokens_;
};

/// Replaces exactly round(n * ratio) distinct non-PAD positions with MASK,
/// drawn uniformly without replacement.
inline std::vector<TokenId> apply_text_mask(std::vector<TokenId> tokens, double ratio, Rng& rng) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument("apply_text_mask: ratio must be in [0,1]");
  std::vector<std::size_t> positions;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] != Vocab::kPad) positions.push_back(i);
  }
  const auto count = static_cast<std::size_t>(std::round(static_cast<double>(positions.size()) * ratio));
  // Partial Fisher-Yates: the first `count` slots become a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + rng.below(positions.size() - i);
    std::swap(positions[i], positions[j]);
    tokens[positions[i]] = Vocab::kMask;
  }
  return tokens;
}

// --- precomputed feature files -------------------------------------------

using FeatureMap = std::map<std::string, std::vector<double>>;

/// Reads `<id>\t<dim>\t<v1> <v2> ... <vdim>` lines. Blank lines are skipped.
inline FeatureMap load_precomputed_features(const std::filesystem::path& path) {
  std::ifstream in = io::open_input(path, ErrorKind::kData);
  FeatureMap out;
  std::string line;
  std::size_t lineno = 0;
  long long first_dim = -1;
  const std::string src = path.string();
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (io::trim(line).empty()) continue;
    const auto fields = io::split_on(line, '\t');
    if (fields.size() != 3) throw ParseError(src, lineno, "expected 3 tab-separated fields");
    const std::string id(fields[0]);
    if (id.empty()) throw ParseError(src, lineno, "empty id");
    const auto dim = io::parse_int(fields[1]);
    if (!dim || *dim <= 0) throw ParseError(src, lineno, "invalid dimension field");
    const auto values = io::split_whitespace(fields[2]);
    if (static_cast<long long>(values.size()) != *dim) {
      throw ParseError(src, lineno, "declared dim " + std::to_string(*dim) + " but found " +
                                        std::to_string(values.size()) + " values");
    }
    if (first_dim < 0) {
      first_dim = *dim;
    } else if (*dim != first_dim) {
      throw FormatError(src + ":" + std::to_string(lineno) + ": inconsistent dim " +
                        std::to_string(*dim) + " (first record has " + std::to_string(first_dim) + ")");
    }
    std::vector<double> vec;
    vec.reserve(values.size());
    for (auto v : values) {
      const auto x = io::parse_double(v);
      if (!x) throw ParseError(src, lineno, "malformed value '" + std::string(v) + "'");
      vec.push_back(*x);
    }
    if (!out.emplace(id, std::move(vec)).second) {
      throw FormatError(src + ":" + std::to_string(lineno) + ": duplicate id '" + id + "'");
    }
  }
  return out;
}

inline std::string format_precomputed_features(const FeatureMap& features) {
  std::string out;
  for (const auto& [id, vec] : features) {
    out += id;
    out += '\t';
    out += std::to_string(vec.size());
    out += '\t';
    for (std::size_t i = 0; i < vec.size(); ++i) {
      if (i) out += ' ';
      out += io::format_double(vec[i]);
    }
    out += '\n';
  }
  return out;
}

// --- encoders ------------------------------------------------------------

/// Trainable parameters of one embedding + mean-pool + projection path,
/// as recorded on a tape.
struct TokenEncoderVars {
  Var embedding;  // |V| x d_e
  Var weight;     // d_h x d_e
  Var bias;       // d_h
};

/// Projection of a precomputed feature vector into d_h.
struct VectorEncoderVars {
  Var weight;  // d_h x source_dim
  Var bias;    // d_h
};

/// Embeds the first max_len tokens, mean-pools over non-PAD positions,
/// projects and applies relu.
inline Var encode_text(const std::vector<TokenId>& tokens, const TokenEncoderVars& params,
                       std::size_t max_len) {
  std::vector<std::size_t> ids;
  const std::size_t limit = std::min(tokens.size(), max_len);
  for (std::size_t i = 0; i < limit; ++i) {
    if (tokens[i] != Vocab::kPad) ids.push_back(tokens[i]);
  }
  if (ids.empty()) throw InvalidArgument("encode_text: empty token sequence");
  const Var pooled = ops::gather_mean(params.embedding, std::move(ids));
  return ops::relu(ops::linear(params.weight, params.bias, pooled));
}

using ImageInput = std::variant<std::vector<TokenId>, Tensor>;

struct ImageEncoderVars {
  TokenEncoderVars attributes;
  std::optional<VectorEncoderVars> precomputed;
};

/// Attribute words go through the token path; a precomputed vector is
/// linearly projected (with relu) to d_h.
inline Var encode_image(const ImageInput& input, const ImageEncoderVars& params, std::size_t max_len) {
  if (const auto* words = std::get_if<std::vector<TokenId>>(&input)) {
    return encode_text(*words, params.attributes, max_len);
  }
  const Tensor& vec = std::get<Tensor>(input);
  if (!params.precomputed) {
    throw ShapeError("encode_image: precomputed vector supplied but the model has no image projection");
  }
  const Tensor& w = params.precomputed->weight.value();
  if (vec.rank() != 1 || vec.size() != w.cols()) {
    throw ShapeError("encode_image: precomputed vector has dimension " + std::to_string(vec.size()) +
                     ", expected " + std::to_string(w.cols()));
  }
  Tape& tape = *params.precomputed->weight.tape;
  const Var x = tape.constant(vec);
  return ops::relu(ops::linear(params.precomputed->weight, params.precomputed->bias, x));
}

}  // namespace semirnet
