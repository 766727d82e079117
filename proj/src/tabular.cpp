#include "kpiforge/tabular.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "kpiforge/error.hpp"
#include "kpiforge/hash.hpp"
#include "kpiforge/kvfile.hpp"
#include "kpiforge/rng.hpp"

namespace kpiforge {

std::string_view to_string(ColumnKind kind) noexcept {
  return kind == ColumnKind::numeric ? "numeric" : "categorical";
}

std::string_view to_string(ColumnRole role) noexcept {
  switch (role) {
    case ColumnRole::feature: return "feature";
    case ColumnRole::target: return "target";
    case ColumnRole::ignored: return "ignored";
  }
  return "feature";
}

std::string_view to_string(MissingPolicy policy) noexcept {
  return policy == MissingPolicy::reject ? "reject" : "impute";
}

std::string_view to_string(TaskKind task) noexcept {
  return task == TaskKind::classification ? "classification" : "regression";
}

std::string format_real(double value) {
  char buffer[64];
  const auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  return std::string(buffer, ec == std::errc{} ? ptr : buffer);
}

// ---------------------------------------------------------------- Schema

Schema::Schema(std::vector<ColumnSpec> columns) : columns_(std::move(columns)) {
  std::unordered_set<std::string> seen;
  std::optional<std::size_t> target;
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    const auto& spec = columns_[i];
    if (spec.name.empty()) throw Error(ErrorCode::InvalidSchema, "column names must be nonempty");
    if (!seen.insert(spec.name).second) {
      throw Error(ErrorCode::DuplicateColumn, "column '" + spec.name + "' declared twice");
    }
    if (spec.role == ColumnRole::target) {
      if (target) {
        throw Error(ErrorCode::InvalidSchema, "more than one target column ('" +
                                                  columns_[*target].name + "', '" + spec.name + "')");
      }
      target = i;
    } else if (spec.role == ColumnRole::feature) {
      features_.push_back(i);
    }
  }
  if (!target) throw Error(ErrorCode::InvalidSchema, "schema declares no target column");
  target_ = *target;
}

Schema Schema::from_kv(const KvFile& file) {
  std::vector<ColumnSpec> specs;
  for (const auto& entry : file.entries()) {
    if (entry.section != "columns") {
      throw Error(ErrorCode::InvalidSchema, "unexpected key outside [columns]", file.where(entry));
    }
    const auto fields = split_list(entry.value);
    if (fields.size() < 2 || fields.size() > 3) {
      throw Error(ErrorCode::InvalidSchema, "expected 'kind, role[, policy]' for column '" + entry.key + "'",
                  file.where(entry));
    }
    ColumnSpec spec;
    spec.name = entry.key;
    if (fields[0] == "numeric") {
      spec.kind = ColumnKind::numeric;
    } else if (fields[0] == "categorical") {
      spec.kind = ColumnKind::categorical;
    } else {
      throw Error(ErrorCode::InvalidSchema, "unknown kind '" + fields[0] + "'", file.where(entry));
    }
    if (fields[1] == "feature") {
      spec.role = ColumnRole::feature;
    } else if (fields[1] == "target") {
      spec.role = ColumnRole::target;
    } else if (fields[1] == "ignored") {
      spec.role = ColumnRole::ignored;
    } else {
      throw Error(ErrorCode::InvalidSchema, "unknown role '" + fields[1] + "'", file.where(entry));
    }
    if (fields.size() == 3) {
      if (fields[2] == "reject") {
        spec.missing_policy = MissingPolicy::reject;
      } else if (fields[2] == "impute") {
        spec.missing_policy = MissingPolicy::impute;
      } else {
        throw Error(ErrorCode::InvalidSchema, "unknown missing policy '" + fields[2] + "'", file.where(entry));
      }
    }
    specs.push_back(std::move(spec));
  }
  try {
    return Schema(std::move(specs));
  } catch (const Error& e) {
    throw Error(e.code(), e.detail(), file.origin());
  }
}

Schema Schema::load(const std::filesystem::path& path) { return from_kv(KvFile::load(path)); }

std::string Schema::to_kv() const {
  std::ostringstream out;
  out << "[columns]\n";
  for (const auto& spec : columns_) {
    out << spec.name << " = " << to_string(spec.kind) << ", " << to_string(spec.role);
    if (spec.missing_policy != MissingPolicy::reject) out << ", " << to_string(spec.missing_policy);
    out << '\n';
  }
  return out.str();
}

std::optional<std::size_t> Schema::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < columns_.size(); ++i) {
    if (columns_[i].name == name) return i;
  }
  return std::nullopt;
}

TaskKind Schema::task() const noexcept {
  return columns_.empty() || columns_[target_].kind == ColumnKind::categorical ? TaskKind::classification
                                                                              : TaskKind::regression;
}

// ---------------------------------------------------------------- Column / Table

std::size_t Column::missing_count() const noexcept {
  return static_cast<std::size_t>(std::count(missing.begin(), missing.end(), std::uint8_t{1}));
}

bool Column::operator==(const Column& other) const {
  if (spec != other.spec || dictionary != other.dictionary || missing != other.missing ||
      values.size() != other.values.size()) {
    return false;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (std::bit_cast<std::uint64_t>(values[i]) != std::bit_cast<std::uint64_t>(other.values[i])) return false;
  }
  return true;
}

Table::Table(Schema schema, std::vector<Column> columns) : schema_(std::move(schema)), columns_(std::move(columns)) {
  if (columns_.size() != schema_.size()) {
    throw Error(ErrorCode::SchemaMismatch, "column count does not match schema");
  }
  n_rows_ = columns_.empty() ? 0 : columns_.front().values.size();
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    auto& col = columns_[c];
    if (col.spec != schema_.columns()[c]) {
      throw Error(ErrorCode::SchemaMismatch, "column '" + col.spec.name + "' does not match its schema entry");
    }
    if (col.missing.empty() && !col.values.empty()) col.missing.assign(col.values.size(), 0);
    if (col.values.size() != n_rows_ || col.missing.size() != n_rows_) {
      throw Error(ErrorCode::SchemaMismatch, "column '" + col.spec.name + "' has inconsistent length");
    }
    for (std::size_t r = 0; r < n_rows_; ++r) {
      const double v = col.values[r];
      if (col.missing[r]) {
        if (!std::isnan(v)) throw Error(ErrorCode::SchemaMismatch, "missing cell must hold NaN in '" + col.spec.name + "'");
        continue;
      }
      if (!std::isfinite(v)) {
        throw Error(ErrorCode::SchemaMismatch, "non-finite value in '" + col.spec.name + "' not marked missing");
      }
      if (col.spec.kind == ColumnKind::categorical &&
          (v < 0 || v != std::floor(v) || v >= static_cast<double>(col.dictionary.size()))) {
        throw Error(ErrorCode::SchemaMismatch, "categorical code out of dictionary range in '" + col.spec.name + "'");
      }
    }
    if (col.spec.role == ColumnRole::target && col.missing_count() > 0) {
      throw Error(ErrorCode::TargetMissingValue, "target column '" + col.spec.name + "' has missing cells");
    }
  }
}

const Column& Table::column(std::string_view name) const {
  const auto index = schema_.index_of(name);
  if (!index) throw Error(ErrorCode::MissingColumn, "no column named '" + std::string(name) + "'");
  return columns_[*index];
}

std::vector<std::string> Table::feature_names() const {
  std::vector<std::string> names;
  for (const auto index : schema_.feature_indices()) names.push_back(columns_[index].spec.name);
  return names;
}

bool Table::has_missing() const noexcept {
  return std::any_of(columns_.begin(), columns_.end(), [](const Column& c) { return c.missing_count() > 0; });
}

FeatureView Table::feature_view() const {
  FeatureView view;
  view.n_rows = n_rows_;
  for (const auto index : schema_.feature_indices()) {
    view.columns.emplace_back(columns_[index].values);
    view.kinds.push_back(columns_[index].spec.kind);
  }
  return view;
}

TargetView Table::target_view() const {
  const auto& col = target();
  TargetView view;
  view.task = task();
  view.values = col.values;
  view.n_classes = view.task == TaskKind::classification ? col.dictionary.size() : 0;
  return view;
}

Table Table::take_rows(std::span<const std::size_t> rows) const {
  std::vector<Column> out;
  out.reserve(columns_.size());
  for (const auto& col : columns_) {
    Column copy;
    copy.spec = col.spec;
    copy.dictionary = col.dictionary;
    copy.values.reserve(rows.size());
    copy.missing.reserve(rows.size());
    for (const auto r : rows) {
      if (r >= n_rows_) throw Error(ErrorCode::InvalidParams, "row index out of range");
      copy.values.push_back(col.values[r]);
      copy.missing.push_back(col.missing[r]);
    }
    out.push_back(std::move(copy));
  }
  return Table(schema_, std::move(out));
}


std::uint64_t Table::checksum() const noexcept {
  Fnv1a h;
  for (const auto& col : columns_) {
    h.str(col.spec.name);
    h.str(to_string(col.spec.kind));
    h.str(to_string(col.spec.role));
    for (const auto& label : col.dictionary) h.str(label);
    h.bytes(col.values.data(), col.values.size() * sizeof(double));
    h.bytes(col.missing.data(), col.missing.size());
  }
  return h.state;
}

bool Table::operator==(const Table& other) const {
  return schema_ == other.schema_ && n_rows_ == other.n_rows_ && columns_ == other.columns_;
}

// ---------------------------------------------------------------- Builder / IO

TableBuilder::TableBuilder(Schema schema) : schema_(std::move(schema)) {
  for (const auto& spec : schema_.columns()) {
    Column col;
    col.spec = spec;
    columns_.push_back(std::move(col));
  }
  lookup_.resize(columns_.size());
}

void TableBuilder::add_row(std::span<const std::string> cells, std::string_view where) {
  if (cells.size() != columns_.size()) {
    throw Error(ErrorCode::ParseError,
                "expected " + std::to_string(columns_.size()) + " fields, got " + std::to_string(cells.size()),
                std::string(where));
  }
  for (std::size_t c = 0; c < columns_.size(); ++c) {
    auto& col = columns_[c];
    const std::string& cell = cells[c];
    std::optional<double> value;
    if (!cell.empty()) {
      if (col.spec.kind == ColumnKind::numeric) {
        value = parse_real(cell);
      } else {
        const auto [it, inserted] = lookup_[c].emplace(cell, col.dictionary.size());
        if (inserted) col.dictionary.push_back(cell);
        value = static_cast<double>(it->second);
      }
    }
    if (!value && col.spec.role == ColumnRole::target) {
      throw Error(ErrorCode::TargetMissingValue,
                  "target column '" + col.spec.name + "' has a missing or unparseable cell", std::string(where));
    }
    col.values.push_back(value ? *value : std::numeric_limits<double>::quiet_NaN());
    col.missing.push_back(value ? 0 : 1);
  }
}

Table TableBuilder::build() && { return Table(std::move(schema_), std::move(columns_)); }

std::vector<CsvRecord> parse_csv(std::string_view text, std::string_view origin) {
  std::vector<CsvRecord> records;
  CsvRecord record;
  std::string field;
  bool field_quoted = false;
  bool in_quotes = false;
  bool record_started = false;
  std::size_t line = 1;
  record.line = 1;

  auto finish_field = [&] {
    record.fields.push_back(field_quoted ? field : std::string(trim(field)));
    field.clear();
    field_quoted = false;
  };
  auto finish_record = [&] {
    finish_field();
    const bool blank = record.fields.size() == 1 && record.fields.front().empty() && !record_started;
    if (!blank) records.push_back(std::move(record));
    record = CsvRecord{};
    record_started = false;
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (in_quotes) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (ch == '\n') ++line;
        field.push_back(ch);
      }
      continue;
    }
    switch (ch) {
      case '"':
        if (!trim(field).empty()) {
          throw Error(ErrorCode::ParseError, "quote inside unquoted field",
                      std::string(origin) + ":" + std::to_string(line));
        }
        field.clear();
        field_quoted = true;
        in_quotes = true;
        record_started = true;
        break;
      case ',':
        finish_field();
        record_started = true;
        break;
      case '\r':
        break;
      case '\n':
        finish_record();
        ++line;
        record.line = line;
        break;
      default:
        if (field_quoted) {
          if (ch != ' ' && ch != '\t') {
            throw Error(ErrorCode::ParseError, "characters after closing quote",
                        std::string(origin) + ":" + std::to_string(line));
          }
        } else {
          field.push_back(ch);
          if (ch != ' ' && ch != '\t') record_started = true;
        }
    }
  }
  if (in_quotes) {
    throw Error(ErrorCode::ParseError, "unterminated quoted field", std::string(origin) + ":" + std::to_string(line));
  }
  finish_record();
  return records;
}

std::string csv_escape(std::string_view field) {
  const bool needs_quotes = field.find_first_of(",\"\r\n") != std::string_view::npos ||
                            (!field.empty() && (trim(field).size() != field.size()));
  if (!needs_quotes) return std::string(field);
  std::string out = "\"";
  for (const char ch : field) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

Table read_table(std::string_view csv_text, const Schema& schema, std::string_view origin) {
  const auto records = parse_csv(csv_text, origin);
  if (records.empty()) throw Error(ErrorCode::EmptyFile, "no header row", std::string(origin));

  const auto& header = records.front().fields;
  std::unordered_map<std::string, std::size_t> header_index;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (!header_index.emplace(header[i], i).second) {
      throw Error(ErrorCode::DuplicateColumn, "header repeats column '" + header[i] + "'", std::string(origin) + ":1");
    }
  }
  std::vector<std::size_t> source;  // schema column -> header position
  for (const auto& spec : schema.columns()) {
    const auto it = header_index.find(spec.name);
    if (it == header_index.end()) {
      throw Error(ErrorCode::MissingColumn, "header lacks column '" + spec.name + "'", std::string(origin) + ":1");
    }
    source.push_back(it->second);
  }
  for (const auto& name : header) {
    if (!schema.index_of(name)) {
      throw Error(ErrorCode::UnknownColumn, "header column '" + name + "' is not declared in the schema",
                  std::string(origin) + ":1");
    }
  }

  TableBuilder builder(schema);
  std::vector<std::string> cells(schema.size());
  for (std::size_t r = 1; r < records.size(); ++r) {
    const auto& rec = records[r];
    const std::string where = std::string(origin) + ":" + std::to_string(rec.line);
    if (rec.fields.size() != header.size()) {
      throw Error(ErrorCode::ParseError,
                  "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(rec.fields.size()),
                  where);
    }
    for (std::size_t c = 0; c < source.size(); ++c) cells[c] = rec.fields[source[c]];
    builder.add_row(cells, where);
  }
  return std::move(builder).build();
}

Table load_table(const std::filesystem::path& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open data file", path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  if (trim(text).empty()) throw Error(ErrorCode::EmptyFile, "file is empty", path.string());
  return read_table(text, schema, path.string());
}

std::string format_table(const Table& table) {
  std::string out;
  for (std::size_t c = 0; c < table.n_columns(); ++c) {
    if (c) out.push_back(',');
    out += csv_escape(table.column(c).spec.name);
  }
  out.push_back('\n');
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    for (std::size_t c = 0; c < table.n_columns(); ++c) {
      if (c) out.push_back(',');
      const auto& col = table.column(c);
      if (col.missing[r]) continue;
      if (col.spec.kind == ColumnKind::numeric) {
        out += format_real(col.values[r]);
      } else {
        out += csv_escape(col.dictionary[static_cast<std::size_t>(col.code(r))]);
      }
    }
    out.push_back('\n');
  }
  return out;
}

void write_table(const std::filesystem::path& path, const Table& table) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write data file", path.string());
  out << format_table(table);
  if (!out) throw Error(ErrorCode::IoError, "write failed", path.string());
}

// ---------------------------------------------------------------- clean / split

Table clean(const Table& table) {
  std::vector<Column> columns = table.columns();
  for (auto& col : columns) {
    if (col.spec.role != ColumnRole::feature) continue;
    const std::size_t missing = col.missing_count();
    if (missing == 0) continue;
    if (missing == col.values.size()) {
      throw Error(ErrorCode::AllMissing, "column '" + col.spec.name + "' has no observed cells");
    }
    if (col.spec.missing_policy == MissingPolicy::reject) {
      throw Error(ErrorCode::RejectedMissing,
                  "column '" + col.spec.name + "' has " + std::to_string(missing) + " missing cell(s)");
    }
    double fill = 0.0;
    if (col.spec.kind == ColumnKind::numeric) {
      double sum = 0.0;
      std::size_t observed = 0;
      for (std::size_t r = 0; r < col.values.size(); ++r) {
        if (!col.missing[r]) {
          sum += col.values[r];
          ++observed;
        }
      }
      fill = sum / static_cast<double>(observed);
    } else {
      std::vector<std::size_t> counts(col.dictionary.size(), 0);
      for (std::size_t r = 0; r < col.values.size(); ++r) {
        if (!col.missing[r]) ++counts[static_cast<std::size_t>(col.code(r))];
      }
      // max_element returns the first maximum, i.e. the lowest code on ties.
      fill = static_cast<double>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    }
    for (std::size_t r = 0; r < col.values.size(); ++r) {
      if (col.missing[r]) {
        col.values[r] = fill;
        col.missing[r] = 0;
      }
    }
  }
  return Table(table.schema(), std::move(columns));
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_indices(std::size_t n_rows, double fraction,
                                                                              std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw Error(ErrorCode::InvalidParams, "holdout fraction must lie in (0, 1)");
  }
  if (n_rows < 2) throw Error(ErrorCode::DegenerateSplit, "need at least 2 rows to split");
  auto first_size = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n_rows)));
  first_size = std::clamp<std::size_t>(first_size, 1, n_rows - 1);

  std::vector<std::size_t> order(n_rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::size_t> first(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(first_size));
  std::vector<std::size_t> second(order.begin() + static_cast<std::ptrdiff_t>(first_size), order.end());
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {std::move(first), std::move(second)};
}

std::pair<Table, Table> split_holdout(const Table& table, double fraction, std::uint64_t seed) {
  const auto [first, second] = holdout_indices(table.n_rows(), fraction, seed);
  return {table.take_rows(first), table.take_rows(second)};
}

}  // namespace kpiforge
