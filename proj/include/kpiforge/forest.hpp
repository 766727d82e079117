#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kpiforge/cart.hpp"
#include "kpiforge/tabular.hpp"

namespace kpiforge {

// mtry value meaning "every feature".
inline constexpr std::size_t kAllFeatures = std::numeric_limits<std::size_t>::max();

struct ForestParams {
  std::size_t n_trees = 100;
  TreeParams tree;  // tree.mtry unset -> ceil(sqrt(p)) / max(1, floor(p/3))
  bool bootstrap = true;
  std::uint64_t master_seed = 0;

  bool operator==(const ForestParams&) const = default;
};

// Fills task-dependent defaults and validates. Throws InvalidParams.
ForestParams resolve_params(ForestParams params, TaskKind task, std::size_t n_features);

struct FitOptions {
  std::size_t workers = 1;  // 0 = one per hardware thread
};

std::size_t resolve_workers(std::size_t requested) noexcept;

// Runs body(i) for i in [0, count) on up to `workers` threads. Each index is
// processed exactly once; the first exception by index order is rethrown.
void parallel_for(std::size_t count, std::size_t workers, const std::function<void(std::size_t)>& body);

// The slice of the training schema a model needs to re-encode new data.
struct ModelSchema {
  std::vector<ColumnSpec> features;
  std::vector<std::vector<std::string>> feature_dictionaries;  // empty for numeric
  ColumnSpec target;
  std::vector<std::string> class_labels;  // classification only

  static ModelSchema from_table(const Table& table);
  std::vector<std::string> feature_names() const;
  // Hash of names, kinds and roles; dictionaries excluded.
  std::uint64_t fingerprint() const;
  bool operator==(const ModelSchema&) const = default;
};

// Feature/target columns of a Table recoded against a model's dictionaries.
// Categories unseen at training get fresh codes past the dictionary end and
// therefore fail every categorical membership test.
class EncodedTable {
 public:
  EncodedTable(const ModelSchema& schema, TaskKind task, const Table& table);

  FeatureView features() const;
  TargetView targets() const;
  std::size_t n_rows() const noexcept { return n_rows_; }

 private:
  std::vector<std::vector<double>> columns_;
  std::vector<ColumnKind> kinds_;
  std::vector<double> target_;
  TaskKind task_;
  std::size_t n_classes_;
  std::size_t n_rows_;
};

class ForestModel {
 public:
  ForestModel() = default;
  ForestModel(ForestParams params, TaskKind task, ModelSchema schema, std::vector<TreeModel> trees,
              std::vector<std::vector<std::uint32_t>> inbag);

  const ForestParams& params() const noexcept { return params_; }
  TaskKind task() const noexcept { return task_; }
  const ModelSchema& schema() const noexcept { return schema_; }
  const std::vector<TreeModel>& trees() const noexcept { return trees_; }
  // inbag()[t][r]: multiplicity of training row r in tree t's sample.
  const std::vector<std::vector<std::uint32_t>>& inbag() const noexcept { return inbag_; }
  std::size_t n_features() const noexcept { return schema_.features.size(); }
  std::size_t n_classes() const noexcept { return schema_.class_labels.size(); }
  std::size_t n_training_rows() const noexcept { return inbag_.empty() ? 0 : inbag_.front().size(); }

  EncodedTable encode(const Table& table) const { return EncodedTable(schema_, task_, table); }

  // Classification: summed leaf class frequencies. Regression: {mean}.
  std::vector<double> aggregate(const FeatureView& features, std::size_t row) const;
  // Class code (as double) or mean prediction.
  double predict(const FeatureView& features, std::size_t row) const;
  double predict(std::span<const double> row) const;
  std::vector<double> predict(const Table& table) const;

  // Canonical JSON text; identical models serialize to identical bytes.
  std::string serialize() const;
  static ForestModel deserialize(std::string_view text, std::string_view origin = "<memory>");
  void save(const std::filesystem::path& path) const;
  static ForestModel load(const std::filesystem::path& path);
  // FNV-1a of serialize(), as 16 hex digits.
  std::string fingerprint() const;

  bool operator==(const ForestModel&) const = default;

 private:
  ForestParams params_;
  TaskKind task_ = TaskKind::classification;
  ModelSchema schema_;
  std::vector<TreeModel> trees_;
  std::vector<std::vector<std::uint32_t>> inbag_;
};

// Tree i draws its bootstrap sample and mtry candidates from
// Rng(derive_seed(master_seed, {i})), so the model does not depend on the
// worker count.
ForestModel fit_forest(const Table& table, const ForestParams& params, const FitOptions& options = {});

struct MetricReport {
  TaskKind task = TaskKind::classification;
  std::size_t n_rows = 0;
  double accuracy = 0.0;  // classification
  double mse = 0.0;       // regression
  double r2 = 0.0;        // regression

  // accuracy or R^2: the quantity permutation importance differences.
  double primary() const noexcept { return task == TaskKind::classification ? accuracy : r2; }
  std::string_view primary_name() const noexcept { return task == TaskKind::classification ? "accuracy" : "r2"; }
};

enum class EvalMode { oob, holdout };
std::string_view to_string(EvalMode mode) noexcept;

// Routes evaluation rows through every tree once and caches the leaves, so
// re-scoring with one substituted feature column only re-routes the trees
// that split on that feature. OOB mode: tree t scores the rows it did not
// sample. Holdout mode: every tree scores every row.
class EnsembleEvaluator {
 public:
  EnsembleEvaluator(const ForestModel& forest, const FeatureView& features, const TargetView& target,
                    EvalMode mode);

  MetricReport baseline() const;
  MetricReport with_column(std::size_t feature, std::span<const double> replacement) const;
  // Mean fraction of training rows out of bag per tree (OOB mode).
  double mean_oob_fraction() const noexcept { return mean_oob_fraction_; }

 private:
  MetricReport score(std::span<const std::vector<std::uint32_t>* const> leaves) const;

  const ForestModel& forest_;
  FeatureView features_;
  TargetView target_;
  std::vector<std::vector<std::uint32_t>> rows_;    // per tree
  std::vector<std::vector<std::uint32_t>> leaves_;  // per tree, parallel to rows_
  double mean_oob_fraction_ = 0.0;
};

// OOB metric on the training table. Throws NoOobCoverageError listing rows
// that every tree sampled (always the case with bootstrap off).
MetricReport oob_score(const ForestModel& forest, const Table& table);
MetricReport holdout_score(const ForestModel& forest, const Table& holdout);

MetricReport compute_metric(TaskKind task, std::span<const double> predictions, std::span<const double> truth);

}  // namespace kpiforge
