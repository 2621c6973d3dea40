#pragma once

// Shared plumbing for the two on-disk containers (RVOL volumes and model
// checkpoints): one UTF-8 JSON header line, a newline, then little-endian
// raw values.

#include <algorithm>
#include <cstdio>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <string>
#include <vector>

#include "vaemmd/error.hpp"

namespace vaemmd::binio {

template <typename V>
void append_le(std::string& out, V value) {
  unsigned char bytes[sizeof(V)];
  std::memcpy(bytes, &value, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  out.append(reinterpret_cast<const char*>(bytes), sizeof(V));
}

template <typename V>
V read_le(const char* p) {
  unsigned char bytes[sizeof(V)];
  std::memcpy(bytes, p, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(V));
  V v;
  std::memcpy(&v, bytes, sizeof(V));
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorCode::kMissingArtifact, "file not found: " + path.string());
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, "write failed: " + path.string());
}

/// Splits "header\npayload"; the header must parse as a JSON object.
inline std::pair<nlohmann::json, std::string_view> split_header(const std::string& bytes, const std::string& what) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) fail(ErrorCode::kFormat, what + ": missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, what + ": malformed header: " + e.what());
  }
  if (!header.is_object()) fail(ErrorCode::kFormat, what + ": header is not a JSON object");
  return {header, std::string_view(bytes).substr(nl + 1)};
}

inline uint64_t fnv1a64(std::string_view bytes) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace vaemmd::binio
