#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mathbook/error.hpp"

namespace mathbook {

using json = nlohmann::json;

inline std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeAbort("cannot write " + path.string());
  out << text;
}

inline json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": parse error: " + e.what());
  }
}

/// Blank lines are skipped; a malformed line is reported with its 1-based number.
inline std::vector<json> read_json_lines(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open " + path.string());
  std::vector<json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw ValidationError(path.string() + ":" + std::to_string(lineno) +
                            ": parse error: " + e.what());
    }
  }
  return rows;
}

/// Appending writer for JSON Lines logs. One compact object per line.
class JsonLinesWriter {
 public:
  JsonLinesWriter() = default;
  explicit JsonLinesWriter(const std::filesystem::path& path) { open(path); }

  void open(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw RuntimeAbort("cannot write " + path.string());
  }

  bool is_open() const { return out_.is_open(); }

  void write(const json& row) {
    if (!out_.is_open()) return;
    out_ << row.dump() << '\n';
  }

  void flush() { out_.flush(); }

 private:
  std::ofstream out_;
};

template <typename T>
T require_field(const json& obj, const char* key, const std::string& context) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ValidationError(context + ": missing field '" + key + "'");
  }
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(context + ": field '" + key + "' has wrong type: " + e.what());
  }
}

}  // namespace mathbook
