#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "semirnet/config.hpp"
#include "semirnet/error.hpp"
#include "semirnet/io.hpp"
#include "semirnet/model.hpp"

namespace semirnet {

// Model file layout (all integers little-endian):
//   "SIRN" | u32 version
//   u64 len | config text (key-sorted key=value lines)
//   u64 len | vocab tokens, newline separated
//   u32 count | count x { u32 name_len | name | u32 rank | rank x u64 dim | f64 values... }

namespace detail {

class ByteWriter {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(std::string_view s) { out_.append(s); }
  void blob(std::string_view s) {
    u64(s.size());
    bytes(s);
  }
  std::string take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string blob() {
    const auto n = u64();
    return std::string(bytes(n));
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) throw FormatError("model file: truncated (bad magic/version or incomplete write)");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_model(const ModelState& state) {
  detail::ByteWriter w;
  w.bytes("SIRN");
  w.u32(kModelFormatVersion);
  w.blob(canonical_config_text(state.config, state.flags, state.provenance));
  std::string vocab;
  for (const auto& t : state.vocab.tokens()) {
    vocab += t;
    vocab += '\n';
  }
  w.blob(vocab);

  std::map<std::string, Tensor> tensors = state.params;
  tensors.emplace("mapping.matrix", state.mapping.mapping);
  tensors.emplace("mapping.running_mean", state.mapping.running_mean);
  tensors.emplace("mapping.running_cov", state.mapping.running_cov);
  tensors.emplace("mapping.fits", Tensor::scalar(static_cast<double>(state.mapping.fits)));
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

inline ModelState deserialize_model(std::string_view bytes) {
  if (bytes.size() < 8 || bytes.substr(0, 4) != "SIRN") throw FormatError("model file: bad magic/version");
  detail::ByteReader r(bytes.substr(4));
  if (r.u32() != kModelFormatVersion) throw FormatError("model file: bad magic/version");

  ModelState state;
  auto kv = parse_config_text(r.blob());
  std::tie(state.config, state.flags) = model_config_from_text(kv);
  for (const auto& [k, v] : kv) {
    if (!k.starts_with("model.") && !k.starts_with("train.")) state.provenance[k] = v;
  }

  std::vector<std::string> tokens;
  const std::string vocab = r.blob();
  std::size_t start = 0;
  while (start < vocab.size()) {
    const auto nl = vocab.find('\n', start);
    if (nl == std::string::npos) throw FormatError("model file: unterminated vocab entry");
    tokens.push_back(vocab.substr(start, nl - start));
    start = nl + 1;
  }
  state.vocab = Vocab::from_tokens(tokens);

  const std::uint32_t count = r.u32();
  std::map<std::string, Tensor> tensors;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name(r.bytes(r.u32()));
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 4) throw FormatError("model file: tensor '" + name + "' has invalid rank");
    Shape shape;
    std::uint64_t total = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = r.u64();
      if (d == 0 || d > (std::uint64_t{1} << 32)) throw FormatError("model file: tensor '" + name + "' has invalid shape");
      shape.push_back(static_cast<std::size_t>(d));
      total *= d;
      if (total > (std::uint64_t{1} << 34)) throw FormatError("model file: tensor '" + name + "' too large");
    }
    std::vector<double> values(static_cast<std::size_t>(total));
    for (auto& v : values) v = r.f64();
    tensors.emplace(name, Tensor(std::move(shape), std::move(values)));
  }
  if (!r.at_end()) throw FormatError("model file: trailing bytes");

  const auto take = [&](const std::string& name) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("model file: missing tensor '" + name + "'");
    Tensor t = std::move(it->second);
    tensors.erase(it);
    return t;
  };
  state.mapping.mapping = take("mapping.matrix");
  state.mapping.running_mean = take("mapping.running_mean");
  state.mapping.running_cov = take("mapping.running_cov");
  state.mapping.fits = static_cast<std::size_t>(take("mapping.fits").item());
  state.mapping.momentum = state.config.momentum;
  state.mapping.eps = state.config.eps;
  state.mapping.mode = MappingMode::kInfer;

  for (const auto& [name, shape] : parameter_layout(state.config, state.vocab.size())) {
    Tensor t = take(name);
    if (t.shape() != shape) {
      throw FormatError("model file: tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                        shape_string(shape));
    }
    state.params.emplace(name, std::move(t));
  }
  if (!tensors.empty()) throw FormatError("model file: unexpected tensor '" + tensors.begin()->first + "'");
  return state;
}

inline void save_model(const std::filesystem::path& path, const ModelState& state) {
  io::write_file_atomic(path, serialize_model(state));
}

inline ModelState load_model(const std::filesystem::path& path) {
  return deserialize_model(io::read_file(path, ErrorKind::kConfig));
}

}  // namespace semirnet
