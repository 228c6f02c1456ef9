#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "scorediff/core/error.hpp"

namespace scorediff {

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path.string());
    f.write(bytes.data(), std::streamsize(bytes.size()));
    if (!f) throw IoError("short write to " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), {});
}

}  // namespace scorediff
