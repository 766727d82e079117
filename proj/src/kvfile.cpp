#include "kpiforge/kvfile.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "kpiforge/error.hpp"

namespace kpiforge {

std::string_view trim(std::string_view text) noexcept {
  constexpr std::string_view kSpace = " \t\r\n";
  const auto first = text.find_first_not_of(kSpace);
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(kSpace);
  return text.substr(first, last - first + 1);
}

std::vector<std::string> split_list(std::string_view text, char delimiter) {
  std::vector<std::string> items;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(delimiter, start);
    const auto item = trim(text.substr(start, pos == std::string_view::npos ? text.npos : pos - start));
    if (!item.empty()) items.emplace_back(item);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return items;
}

std::optional<double> parse_real(std::string_view text) noexcept {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value,
                                         std::chars_format::general);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  if (!std::isfinite(value)) return std::nullopt;
  return value;
}

std::optional<std::int64_t> parse_int(std::string_view text) noexcept {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  std::int64_t value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) return std::nullopt;
  return value;
}

KvFile KvFile::parse(std::string_view text, std::string origin) {
  KvFile file;
  file.origin_ = std::move(origin);
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view raw = text.substr(pos, end == std::string_view::npos ? text.npos : end - pos);
    ++line_no;
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;

    // Comments start at '#' or ';' outside a quoted value.
    bool quoted = false;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (raw[i] == '"') quoted = !quoted;
      if (!quoted && (raw[i] == '#' || raw[i] == ';')) {
        raw = raw.substr(0, i);
        break;
      }
    }
    const auto line = trim(raw);
    if (line.empty()) continue;

    const std::string where = file.origin_ + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) {
        throw Error(ErrorCode::InvalidConfig, "malformed section header", where);
      }
      section = std::string(trim(line.substr(1, line.size() - 2)));
      file.note_section(section);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::InvalidConfig, "expected 'key = value'", where);
    }
    const auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error(ErrorCode::InvalidConfig, "empty key", where);
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') {
      value = value.substr(1, value.size() - 2);
    }
    for (const auto& existing : file.entries_) {
      if (existing.section == section && existing.key == key) {
        throw Error(ErrorCode::InvalidConfig, "duplicate key '" + std::string(key) + "'", where);
      }
    }
    file.note_section(section);
    file.entries_.push_back({section, std::string(key), std::string(value), line_no});
  }
  return file;
}

KvFile KvFile::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open file", path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

std::vector<KvFile::Entry> KvFile::section(std::string_view name) const {
  std::vector<Entry> out;
  for (const auto& entry : entries_) {
    if (entry.section == name) out.push_back(entry);
  }
  return out;
}

std::vector<std::string> KvFile::section_names() const { return sections_; }

bool KvFile::has_section(std::string_view name) const {
  return std::find(sections_.begin(), sections_.end(), name) != sections_.end();
}

void KvFile::note_section(const std::string& name) {
  if (!has_section(name)) sections_.push_back(name);
}

const KvFile::Entry* KvFile::find(std::string_view section, std::string_view key) const {
  for (const auto& entry : entries_) {
    if (entry.section == section && entry.key == key) return &entry;
  }
  return nullptr;
}

std::optional<std::string> KvFile::get(std::string_view section, std::string_view key) const {
  if (const auto* entry = find(section, key)) return entry->value;
  return std::nullopt;
}

std::string KvFile::where(const Entry& entry) const {
  return origin_ + ":" + std::to_string(entry.line);
}

std::optional<double> KvFile::get_real(std::string_view section, std::string_view key) const {
  const auto* entry = find(section, key);
  if (entry == nullptr) return std::nullopt;
  const auto value = parse_real(entry->value);
  if (!value) {
    throw Error(ErrorCode::InvalidConfig, "'" + entry->key + "' expects a number", where(*entry));
  }
  return value;
}

std::optional<std::int64_t> KvFile::get_int(std::string_view section, std::string_view key) const {
  const auto* entry = find(section, key);
  if (entry == nullptr) return std::nullopt;
  const auto value = parse_int(entry->value);
  if (!value) {
    throw Error(ErrorCode::InvalidConfig, "'" + entry->key + "' expects an integer", where(*entry));
  }
  return value;
}

std::optional<std::uint64_t> KvFile::get_count(std::string_view section, std::string_view key) const {
  const auto value = get_int(section, key);
  if (!value) return std::nullopt;
  if (*value < 0) {
    throw Error(ErrorCode::InvalidConfig, "'" + std::string(key) + "' must be non-negative",
                where(*find(section, key)));
  }
  return static_cast<std::uint64_t>(*value);
}

std::optional<bool> KvFile::get_bool(std::string_view section, std::string_view key) const {
  const auto* entry = find(section, key);
  if (entry == nullptr) return std::nullopt;
  const auto& v = entry->value;
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  throw Error(ErrorCode::InvalidConfig, "'" + entry->key + "' expects true/false", where(*entry));
}

}  // namespace kpiforge
