#pragma once

// Single-file checkpoint container.
//
//   bytes 0..7    magic "CAECKPT\0"
//   bytes 8..11   container version (little-endian u32)
//   bytes 12..19  header length H (little-endian u64)
//   next H bytes  JSON header: kind, scalar type, architecture fingerprint,
//                 free-form metadata, and a tensor table (name, shape, offset)
//   remainder     raw little-endian tensor blobs in table order
//
// Writes go to a temporary sibling file that is renamed into place.

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "cae/nn.hpp"

namespace cae {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'E', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
constexpr const char* scalar_name() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
  return std::is_same_v<T, float> ? "f32" : "f64";
}

struct CheckpointHeader {
  std::string kind;
  std::string fingerprint;
  nlohmann::json meta;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const CheckpointHeader& header, const StateRefs<T>& tensors) {
  nlohmann::json h;
  h["version"] = kCheckpointVersion;
  h["kind"] = header.kind;
  h["scalar"] = scalar_name<T>();
  h["fingerprint"] = header.fingerprint;
  h["meta"] = header.meta;
  nlohmann::json table = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    table.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
    offset += t->size() * sizeof(T);
  }
  h["tensors"] = table;
  const std::string text = h.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    const std::uint32_t version = kCheckpointVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : tensors)
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(T)));
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Reads the header only.
inline nlohmann::json read_checkpoint_header(const std::filesystem::path& path, std::uint64_t* blob_start = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  in.read(magic, sizeof magic);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw DataError(path.string() + " is not a checkpoint (bad magic or truncated)");
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  if (len > std::filesystem::file_size(path)) throw DataError(path.string() + ": truncated checkpoint header");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path.string() + ": truncated checkpoint header");
  if (blob_start) *blob_start = sizeof magic + sizeof version + sizeof len + len;
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": corrupt checkpoint header: " + e.what());
  }
}

// Loads every tensor in `tensors` by name. The kind and fingerprint must match
// exactly; extra tensors in the file are ignored.
template <typename T>
nlohmann::json load_checkpoint(const std::filesystem::path& path, const std::string& kind, const std::string& fingerprint,
                               const StateRefs<T>& tensors) {
  std::uint64_t blob_start = 0;
  const nlohmann::json h = read_checkpoint_header(path, &blob_start);
  if (h.value("kind", "") != kind)
    throw VersionError(path.string() + ": checkpoint kind '" + h.value("kind", "") + "', expected '" + kind + "'");
  if (h.value("scalar", "") != scalar_name<T>())
    throw VersionError(path.string() + ": checkpoint scalar type " + h.value("scalar", "") + ", expected " +
                       scalar_name<T>());
  if (h.value("fingerprint", "") != fingerprint)
    throw VersionError(path.string() + ": architecture mismatch: checkpoint has '" + h.value("fingerprint", "") +
                       "', model is '" + fingerprint + "'");

  std::map<std::string, nlohmann::json> table;
  for (const auto& entry : h.at("tensors")) table[entry.at("name").get<std::string>()] = entry;

  std::ifstream in(path, std::ios::binary);
  const auto file_size = std::filesystem::file_size(path);
  for (const auto& [name, t] : tensors) {
    auto it = table.find(name);
    if (it == table.end()) throw VersionError(path.string() + ": missing tensor " + name);
    const auto shape = it->second.at("shape").template get<Shape>();
    if (shape != t->shape())
      throw VersionError(path.string() + ": tensor " + name + " has shape " + to_string(shape) + ", expected " +
                         to_string(t->shape()));
    const std::uint64_t offset = blob_start + it->second.at("offset").template get<std::uint64_t>();
    const std::uint64_t bytes = t->size() * sizeof(T);
    if (offset + bytes > file_size) throw DataError(path.string() + ": truncated checkpoint");
    in.seekg(static_cast<std::streamoff>(offset));
    in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(bytes));
    if (!in) throw DataError(path.string() + ": truncated checkpoint");
  }
  return h.at("meta");
}

}  // namespace cae
