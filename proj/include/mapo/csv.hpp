#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace mapo::csv {

/// Minimal comma-separated table; fields never contain commas or quotes in
/// this project's formats, so no escaping is implemented (or accepted).
struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 if absent
};

Table read(const std::filesystem::path& path);
Table parse(const std::string& text);
std::string serialize(const Table& table);
void write(const std::filesystem::path& path, const Table& table);

}  // namespace mapo::csv
