#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace kpiforge {

class KvFile;

enum class ColumnKind { numeric, categorical };
enum class ColumnRole { feature, target, ignored };
enum class MissingPolicy { reject, impute };
enum class TaskKind { classification, regression };

std::string_view to_string(ColumnKind kind) noexcept;
std::string_view to_string(ColumnRole role) noexcept;
std::string_view to_string(MissingPolicy policy) noexcept;
std::string_view to_string(TaskKind task) noexcept;

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  ColumnRole role = ColumnRole::feature;
  MissingPolicy missing_policy = MissingPolicy::reject;

  bool operator==(const ColumnSpec&) const = default;
};

// Ordered list of column declarations. Feature indices follow declaration
// order of the feature columns.
class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<ColumnSpec> columns);

  // Schema file format (KvFile), one column per key in section [columns]:
  //
  //   [columns]
  //   case_duration = numeric, target
  //   office        = categorical, feature, impute
  //   clerk_id      = categorical, ignored
  //
  // Fields are kind, role, and an optional missing policy (reject | impute,
  // default reject).
  static Schema from_kv(const KvFile& file);
  static Schema load(const std::filesystem::path& path);
  std::string to_kv() const;

  const std::vector<ColumnSpec>& columns() const noexcept { return columns_; }
  std::size_t size() const noexcept { return columns_.size(); }
  std::optional<std::size_t> index_of(std::string_view name) const;
  std::size_t target_index() const noexcept { return target_; }
  const ColumnSpec& target() const { return columns_[target_]; }
  const std::vector<std::size_t>& feature_indices() const noexcept { return features_; }
  TaskKind task() const noexcept;

  bool operator==(const Schema& other) const { return columns_ == other.columns_; }

 private:
  std::vector<ColumnSpec> columns_;
  std::vector<std::size_t> features_;
  std::size_t target_ = 0;
};

// One column. Numeric cells hold the value; categorical cells hold the code
// as an exact integer-valued double indexing `dictionary`. Missing cells are
// NaN with `missing[row] == 1`.
struct Column {
  ColumnSpec spec;
  std::vector<double> values;
  std::vector<std::string> dictionary;
  std::vector<std::uint8_t> missing;

  std::size_t missing_count() const noexcept;
  std::int32_t code(std::size_t row) const { return static_cast<std::int32_t>(values[row]); }
  bool operator==(const Column& other) const;
};

// Non-owning column-major view over the feature columns. Permutation
// importance substitutes single columns without touching the source.
struct FeatureView {
  std::vector<std::span<const double>> columns;
  std::vector<ColumnKind> kinds;
  std::size_t n_rows = 0;

  std::size_t n_features() const noexcept { return columns.size(); }
  double at(std::size_t feature, std::size_t row) const { return columns[feature][row]; }
};

struct TargetView {
  TaskKind task = TaskKind::classification;
  std::span<const double> values;
  std::size_t n_classes = 0;  // 0 for regression
};

class Table {
 public:
  Table() = default;
  // Validates every structural invariant; throws Error on violation.
  Table(Schema schema, std::vector<Column> columns);

  const Schema& schema() const noexcept { return schema_; }
  std::size_t n_rows() const noexcept { return n_rows_; }
  std::size_t n_columns() const noexcept { return columns_.size(); }
  const Column& column(std::size_t index) const { return columns_[index]; }
  const Column& column(std::string_view name) const;
  const std::vector<Column>& columns() const noexcept { return columns_; }

  std::size_t n_features() const noexcept { return schema_.feature_indices().size(); }
  const Column& feature(std::size_t f) const { return columns_[schema_.feature_indices()[f]]; }
  const Column& target() const { return columns_[schema_.target_index()]; }
  std::vector<std::string> feature_names() const;
  TaskKind task() const noexcept { return schema_.task(); }

  bool has_missing() const noexcept;
  FeatureView feature_view() const;
  TargetView target_view() const;

  // Subset of rows in the given order (duplicates allowed). Dictionaries
  // are kept as-is so codes stay comparable with the source table.
  Table take_rows(std::span<const std::size_t> rows) const;

  // FNV-1a over schema, dictionaries, masks and the bit patterns of values.
  std::uint64_t checksum() const noexcept;

  bool operator==(const Table& other) const;

 private:
  Schema schema_;
  std::vector<Column> columns_;
  std::size_t n_rows_ = 0;
};

// Builds a Table from string cells; categorical codes are assigned in
// first-appearance order. Empty cells are missing; so are unparseable or
// non-finite numeric cells. A missing target cell is fatal.
class TableBuilder {
 public:
  explicit TableBuilder(Schema schema);
  // `cells` is in schema column order.
  void add_row(std::span<const std::string> cells, std::string_view where = {});
  Table build() &&;

 private:
  Schema schema_;
  std::vector<Column> columns_;
  std::vector<std::unordered_map<std::string, std::size_t>> lookup_;
};

Table load_table(const std::filesystem::path& path, const Schema& schema);
Table read_table(std::string_view csv_text, const Schema& schema, std::string_view origin = "<memory>");
void write_table(const std::filesystem::path& path, const Table& table);
std::string format_table(const Table& table);

// Replaces missing feature cells per column policy. Idempotent.
Table clean(const Table& table);

// Deterministic shuffled split into (first, second) where first holds
// round(fraction * n_rows) rows clamped so both sides are nonempty.
std::pair<Table, Table> split_holdout(const Table& table, double fraction, std::uint64_t seed);
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_indices(
    std::size_t n_rows, double fraction, std::uint64_t seed);

// RFC 4180 CSV reader: comma delimiter, double-quote quoting with "" escapes,
// quoted fields may span lines. Unquoted fields are trimmed; blank lines are
// skipped.
struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line = 0;  // 1-based line where the record starts
};
std::vector<CsvRecord> parse_csv(std::string_view text, std::string_view origin = "<memory>");
std::string csv_escape(std::string_view field);

std::string format_real(double value);

}  // namespace kpiforge
