#pragma once

// Checkpoint layout (all integers and floats little-endian):
//
//   "stochattn-checkpoint <version>\n"
//   "<key>=<value>\n"            one line per ModelConfig field
//   "params <count>\n"
//   per parameter:
//     u32 name length, name bytes, u32 rank, u64 dims[rank], f64 data[numel]

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>

#include "stochattn/errors.hpp"
#include "stochattn/model.hpp"

namespace stochattn {

inline constexpr int kCheckpointVersion = 1;
inline constexpr const char* kCheckpointMagic = "stochattn-checkpoint";

namespace detail {

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, 8);
}

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char bytes[4];
  for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes, 4);
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw CheckpointError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char bytes[4];
  if (!in.read(reinterpret_cast<char*>(bytes), 4)) throw CheckpointError("checkpoint truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | bytes[i];
  return v;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const TransformerClassifier& model) {
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  for (const auto& [k, v] : model.config().to_key_values()) out << k << '=' << v << '\n';
  const auto params = model.parameters();
  out << "params " << params.size() << '\n';
  for (const auto& p : params) {
    detail::put_u32(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    detail::put_u32(out, static_cast<std::uint32_t>(p.tensor.rank()));
    for (auto d : p.tensor.shape()) detail::put_u64(out, d);
    for (double v : p.tensor.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
}

inline void save_checkpoint(const TransformerClassifier& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  write_checkpoint(out, model);
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

/// Fields a caller requires the stored model to have.
struct CheckpointExpectations {
  std::optional<std::size_t> vocab_size;
  std::optional<std::size_t> num_classes;
};

inline TransformerClassifier read_checkpoint(std::istream& in, const CheckpointExpectations& expect = {}) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("empty checkpoint");
  const std::string magic = std::string(kCheckpointMagic) + ' ';
  if (line.rfind(magic, 0) != 0) throw CheckpointError("not a stochattn checkpoint");
  if (line != magic + std::to_string(kCheckpointVersion)) {
    throw CheckpointError("unsupported checkpoint version '" + line.substr(magic.size()) + "' (expected " +
                          std::to_string(kCheckpointVersion) + ")");
  }
  ModelConfig config;
  std::size_t count = 0;
  std::set<std::string> seen_keys;
  for (;;) {
    if (!std::getline(in, line)) throw CheckpointError("checkpoint header truncated");
    if (line.rfind("params ", 0) == 0) {
      count = detail::parse_unsigned("params", line.substr(7));
      break;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw CheckpointError("corrupt checkpoint header line '" + line + "'");
    const std::string key = line.substr(0, eq);
    try {
      if (!config.apply(key, line.substr(eq + 1))) throw CheckpointError("unknown checkpoint config key '" + key + "'");
    } catch (const ConfigError& e) {
      throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
    }
    seen_keys.insert(key);
  }
  if (seen_keys.size() != config.to_key_values().size()) throw CheckpointError("checkpoint header is missing config keys");
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint holds an invalid config: ") + e.what());
  }
  if (expect.vocab_size && *expect.vocab_size != config.vocab_size) {
    throw CheckpointError("checkpoint vocab_size " + std::to_string(config.vocab_size) + " does not match expected " +
                          std::to_string(*expect.vocab_size));
  }
  if (expect.num_classes && *expect.num_classes != config.num_classes) {
    throw CheckpointError("checkpoint num_classes " + std::to_string(config.num_classes) +
                          " does not match expected " + std::to_string(*expect.num_classes));
  }

  RngStream unused(0);
  TransformerClassifier model = TransformerClassifier::init(config, unused);
  auto params = model.parameters();
  if (count != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(count) + " parameters, config implies " +
                          std::to_string(params.size()));
  }
  std::map<std::string, Tensor> by_name;
  for (auto& p : params) by_name.emplace(p.name, p.tensor);
  std::set<std::string> loaded;
  for (std::size_t i = 0; i < count; ++i) {
    const auto name_len = detail::get_u32(in);
    if (name_len > 4096) throw CheckpointError("corrupt parameter name length");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw CheckpointError("checkpoint truncated");
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw CheckpointError("unexpected parameter '" + name + "' in checkpoint");
    if (!loaded.insert(name).second) throw CheckpointError("duplicate parameter '" + name + "' in checkpoint");
    const auto rank = detail::get_u32(in);
    if (rank > 8) throw CheckpointError("corrupt rank for parameter '" + name + "'");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get_u64(in);
    Tensor& target = it->second;
    if (shape != target.shape()) {
      throw CheckpointError("parameter '" + name + "' has shape " + shape_string(shape) + ", config implies " +
                            shape_string(target.shape()));
    }
    auto data = target.mutable_data();
    for (double& v : data) v = std::bit_cast<double>(detail::get_u64(in));
  }
  if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes after checkpoint data");
  return model;
}

inline TransformerClassifier load_checkpoint(const std::filesystem::path& path,
                                             const CheckpointExpectations& expect = {}) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  return read_checkpoint(in, expect);
}

}  // namespace stochattn
