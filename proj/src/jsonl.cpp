// Copyright 2026 kdiag authors
// SPDX-License-Identifier: Apache-2.0

#include "kdiag/jsonl.hpp"

#include <fstream>
#include <sstream>

#include "kdiag/errors.hpp"
#include "kdiag/text.hpp"

namespace kdiag::jsonl {

namespace {

std::vector<RecordError> for_each_line(
    std::istream& in, const std::function<void(size_t, const nlohmann::json&)>& fn) {
  std::vector<RecordError> errors;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) {
      errors.push_back({line_no, "not a JSON object"});
      continue;
    }
    fn(line_no, obj);
  }
  return errors;
}

}  // namespace

std::vector<RecordError> for_each_record(
    const std::filesystem::path& path,
    const std::function<void(size_t, const nlohmann::json&)>& fn) {
  std::ifstream in(path);
  if (!in) throw_io("cannot open input file: " + path.string());
  return for_each_line(in, fn);
}

std::vector<RecordError> for_each_record_text(
    const std::string& body,
    const std::function<void(size_t, const nlohmann::json&)>& fn) {
  std::istringstream in(body);
  return for_each_line(in, fn);
}

std::vector<nlohmann::json> read_all(const std::filesystem::path& path) {
  std::vector<nlohmann::json> records;
  auto errors = for_each_record(
      path, [&](size_t, const nlohmann::json& obj) { records.push_back(obj); });
  if (!errors.empty()) {
    throw_io(path.string() + ": malformed record at line " +
             std::to_string(errors.front().line));
  }
  return records;
}

std::string to_lines(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& rec : records) {
    out += rec.dump();
    out += '\n';
  }
  return out;
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path dir = path.parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw_io("cannot open output file: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw_io("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw_io("rename failed: " + tmp.string() + " -> " + path.string());
}

void write_records_atomic(const std::filesystem::path& path,
                          const std::vector<nlohmann::json>& records) {
  write_atomic(path, to_lines(records));
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io("cannot open file: " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

}  // namespace kdiag::jsonl
