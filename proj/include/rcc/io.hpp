#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <nlohmann/json.hpp>

#include "rcc/error.hpp"

namespace rcc::io {

using nlohmann::json;

/// Shortest round-trip decimal form.
inline std::string format_double(double value) {
  char buffer[32];
  const auto [end, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  if (ec != std::errc{}) fail(ErrorKind::Invariant, "cannot format double");
  return std::string(buffer, end);
}

inline double parse_double(std::string_view text) {
  double value = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || end != text.data() + text.size()) {
    fail(ErrorKind::Parse, "not a number: '" + std::string(text) + "'");
  }
  return value;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorKind::Io, "cannot create directory " + path.parent_path().string());
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorKind::Io, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot rename " + tmp.string() + ": " + ec.message());
}

inline std::vector<json> parse_jsonl(std::string_view text, std::string_view origin = "<memory>") {
  std::vector<json> records;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) {
      try {
        records.push_back(json::parse(line));
      } catch (const json::exception& e) {
        fail(ErrorKind::Io, std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    start = end + 1;
  }
  return records;
}

inline std::vector<json> read_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(read_text(path), path.string());
}

inline std::string to_jsonl(const std::vector<json>& records) {
  std::string out;
  for (const auto& record : records) {
    out += record.dump();
    out += '\n';
  }
  return out;
}

inline void write_jsonl(const std::filesystem::path& path, const std::vector<json>& records) {
  write_atomic(path, to_jsonl(records));
}

/// Field access that reports the missing key instead of a bare json error.
template <typename T>
T field(const json& record, const char* key) {
  if (!record.contains(key)) fail(ErrorKind::Io, std::string("record missing field '") + key + "'");
  try {
    return record.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorKind::Io, std::string("bad field '") + key + "': " + e.what());
  }
}

}  // namespace rcc::io
