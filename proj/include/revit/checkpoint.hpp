#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "revit/optimizer.hpp"

// File layout:
//   "RVT1"                      4-byte magic
//   uint64 little-endian        length of the metadata document
//   JSON metadata               {"model", "run", "tensors": [{name, shape, offset, nbytes}], "optimizer"}
//   blob                        little-endian float32 tensors, offsets relative to blob start

namespace revit {

inline constexpr char kCheckpointMagic[4] = {'R', 'V', 'T', '1'};

template <typename T>
struct Checkpoint {
  ModelConfig model;
  nlohmann::json run = nlohmann::json::object();
  ModelParams<T> params;
  std::optional<OptimizerState<T>> optimizer;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

inline std::uint32_t get_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}

constexpr const char* kMomentPrefix = "optimizer.m/";
constexpr const char* kVelocityPrefix = "optimizer.v/";

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& ck) {
  NamedTensors<T> all = ck.params.named();
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    for (std::size_t i = 0; i < o.names.size(); ++i) all.emplace_back(detail::kMomentPrefix + o.names[i], o.m[i]);
    for (std::size_t i = 0; i < o.names.size(); ++i) all.emplace_back(detail::kVelocityPrefix + o.names[i], o.v[i]);
  }
  nlohmann::json index = nlohmann::json::array();
  std::string blob;
  for (const auto& [name, t] : all) {
    const std::size_t offset = blob.size();
    for (T v : t.data()) detail::put_u32(blob, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    index.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}, {"nbytes", blob.size() - offset}});
  }
  nlohmann::json meta{{"model", ck.model}, {"run", ck.run}, {"tensors", index}, {"optimizer", nullptr}};
  if (ck.optimizer) {
    const auto& o = *ck.optimizer;
    meta["optimizer"] = {{"step", o.t}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps},
                         {"weight_decay", o.weight_decay}};
  }
  const std::string doc = meta.dump();
  std::string out(kCheckpointMagic, 4);
  detail::put_u64(out, doc.size());
  out += doc;
  out += blob;
  return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& ck) {
  const std::string bytes = serialize_checkpoint(ck);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> parse_checkpoint(const std::vector<unsigned char>& bytes, const std::string& source = "checkpoint") {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw FormatError(source + ": bad magic");
  const std::uint64_t len = detail::get_u64(bytes.data() + 4);
  if (len > bytes.size() - 12) throw FormatError(source + ": truncated metadata");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": malformed metadata: " + e.what());
  }
  const unsigned char* blob = bytes.data() + 12 + len;
  const std::size_t blob_size = bytes.size() - 12 - len;

  Checkpoint<T> ck;
  try {
    from_json(meta.at("model"), ck.model);
    ck.model.validate();
    ck.run = meta.value("run", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": bad metadata: " + e.what());
  } catch (const ValidationError& e) {
    throw FormatError(source + ": bad model config: " + e.what());
  }
  ck.params = make_params<T>(ck.model);
  std::map<std::string, Tensor<T>> targets;
  for (const auto& [name, t] : ck.params.named()) targets.emplace(name, t);

  std::map<std::string, bool> seen;
  try {
    const bool has_opt = meta.contains("optimizer") && !meta["optimizer"].is_null();
    if (has_opt) {
      const auto& o = meta["optimizer"];
      auto names = ck.params.named();
      OptimizerState<T> st = make_optimizer(names, o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                                            o.at("eps").get<double>(), o.at("weight_decay").get<double>());
      st.t = o.at("step").get<std::size_t>();
      for (std::size_t i = 0; i < st.names.size(); ++i) {
        targets.emplace(detail::kMomentPrefix + st.names[i], st.m[i]);
        targets.emplace(detail::kVelocityPrefix + st.names[i], st.v[i]);
      }
      ck.optimizer = std::move(st);
    }

    for (const auto& entry : meta.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      auto it = targets.find(name);
      if (it == targets.end()) throw FormatError(source + ": unknown tensor '" + name + "'");
      if (seen[name]) throw FormatError(source + ": duplicate tensor '" + name + "'");
      seen[name] = true;
      const auto shape = entry.at("shape").get<Shape>();
      Tensor<T> dst = it->second;
      if (shape != dst.shape())
        throw FormatError(source + ": tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                          shape_str(dst.shape()));
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto nbytes = entry.at("nbytes").get<std::size_t>();
      if (nbytes != dst.numel() * 4) throw FormatError(source + ": tensor '" + name + "' byte count mismatch");
      if (offset > blob_size || nbytes > blob_size - offset)
        throw FormatError(source + ": truncated blob for tensor '" + name + "'");
      auto d = dst.data();
      for (std::size_t k = 0; k < d.size(); ++k)
        d[k] = static_cast<T>(std::bit_cast<float>(detail::get_u32(blob + offset + 4 * k)));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": bad tensor index: " + e.what());
  }
  for (const auto& [name, t] : targets)
    if (!seen[name]) throw FormatError(source + ": missing tensor '" + name + "'");
  return ck;
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint<T>(bytes, path.string());
}

}  // namespace revit
