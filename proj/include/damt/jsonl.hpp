#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "damt/error.hpp"

namespace damt {

using Json = nlohmann::json;

inline std::optional<Json> try_parse_json(std::string_view text,
                                          std::string* err = nullptr) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    if (err) *err = "invalid JSON";
    return std::nullopt;
  }
  return j;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string() + " for reading");
  return in;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  return out;
}

// Calls `fn(line_number, line)` for every line; blank lines are skipped.
inline void for_each_line(const std::filesystem::path& path,
                          const std::function<void(long, const std::string&)>& fn) {
  std::ifstream in = open_input(path);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    fn(line_no, line);
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out = open_output(path);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error("failed writing " + path.string());
}

// Write-then-rename so concurrent readers never observe a partial file.
inline void write_file_atomic(const std::filesystem::path& path,
                              std::string_view content) {
  static std::atomic<unsigned long> counter{0};
  std::filesystem::path tmp = path;
  tmp += ".tmp." + std::to_string(counter.fetch_add(1)) + "." +
         std::to_string(reinterpret_cast<uintptr_t>(&counter) & 0xFFFF);
  write_file(tmp, content);
  std::filesystem::rename(tmp, path);
}

}  // namespace damt
