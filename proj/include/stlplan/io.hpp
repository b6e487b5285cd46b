#ifndef STLPLAN_IO_HPP
#define STLPLAN_IO_HPP

#include "stlplan/errors.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace stlplan::io {

using json = nlohmann::json;

// All artifact files are written via temp + rename; interrupted runs never
// leave truncated output behind.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + tmp.string());
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw IoError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw UsageError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_json_atomic(const std::filesystem::path& path, const json& j, int indent = 2) {
  write_file_atomic(path, j.dump(indent) + "\n");
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw UsageError("invalid JSONL in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

inline void write_jsonl_atomic(const std::filesystem::path& path, const std::vector<json>& rows) {
  std::string buf;
  for (const auto& r : rows) {
    buf += r.dump();
    buf += "\n";
  }
  write_file_atomic(path, buf);
}

}  // namespace stlplan::io

#endif
