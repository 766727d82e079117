#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kpiforge {

// Line-oriented key-value configuration shared by schema files, generator
// specs and project configs:
//
//   # comment
//   [section]
//   key = value
//
// Keys before the first section header belong to the unnamed section "".
// Values are trimmed; a value wrapped in double quotes keeps inner spaces.
// Entry order is preserved.
class KvFile {
 public:
  struct Entry {
    std::string section;
    std::string key;
    std::string value;
    std::size_t line = 0;
  };

  static KvFile parse(std::string_view text, std::string origin = "<memory>");
  static KvFile load(const std::filesystem::path& path);

  const std::string& origin() const noexcept { return origin_; }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Entry> section(std::string_view name) const;
  // Every declared section in first-appearance order, empty ones included.
  std::vector<std::string> section_names() const;
  bool has_section(std::string_view name) const;

  const Entry* find(std::string_view section, std::string_view key) const;
  std::optional<std::string> get(std::string_view section, std::string_view key) const;

  std::optional<double> get_real(std::string_view section, std::string_view key) const;
  std::optional<std::int64_t> get_int(std::string_view section, std::string_view key) const;
  std::optional<std::uint64_t> get_count(std::string_view section, std::string_view key) const;
  std::optional<bool> get_bool(std::string_view section, std::string_view key) const;

  // "file:line" for diagnostics.
  std::string where(const Entry& entry) const;

 private:
  void note_section(const std::string& name);

  std::string origin_;
  std::vector<Entry> entries_;
  std::vector<std::string> sections_;
};

std::string_view trim(std::string_view text) noexcept;
std::vector<std::string> split_list(std::string_view text, char delimiter = ',');

// Strict locale-independent number parsing; the whole string must be consumed.
std::optional<double> parse_real(std::string_view text) noexcept;
std::optional<std::int64_t> parse_int(std::string_view text) noexcept;

}  // namespace kpiforge
