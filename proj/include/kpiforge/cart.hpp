#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "kpiforge/rng.hpp"
#include "kpiforge/tabular.hpp"

namespace kpiforge {

enum class SplitCriterion { gini, entropy, variance };

std::string_view to_string(SplitCriterion criterion) noexcept;
std::optional<SplitCriterion> parse_criterion(std::string_view text) noexcept;
SplitCriterion default_criterion(TaskKind task) noexcept;
bool criterion_matches(SplitCriterion criterion, TaskKind task) noexcept;

// Relative tolerance used for "positive decrease" and for tie detection
// between candidate splits: two decreases closer than
// kSplitTolerance * I(parent) are treated as tied.
inline constexpr double kSplitTolerance = 1e-12;

// Impurity of a class-count vector (gini or entropy) or of a target sample
// (variance, population form). Throws EmptyNode on an empty population.
double impurity(SplitCriterion criterion, std::span<const std::size_t> class_counts);
double impurity(std::span<const double> targets);

struct TreeParams {
  std::optional<std::size_t> max_depth;  // unset = unlimited
  std::size_t min_samples_leaf = 1;
  std::size_t min_samples_split = 2;
  std::optional<std::size_t> mtry;  // unset = all features for a lone tree
  std::optional<SplitCriterion> criterion;  // unset = gini / variance by task

  bool operator==(const TreeParams&) const = default;
};

struct Split {
  std::size_t feature = 0;
  ColumnKind kind = ColumnKind::numeric;
  double threshold = 0.0;     // numeric: value <= threshold goes left
  std::int32_t category = 0;  // categorical: code == category goes left
  double impurity_decrease = 0.0;
  std::size_t n_left = 0;
  std::size_t n_right = 0;

  bool goes_left(double value) const noexcept {
    return kind == ColumnKind::numeric ? value <= threshold : value == static_cast<double>(category);
  }
};

struct TreeNode {
  // Internal node fields; feature < 0 marks a leaf.
  std::int32_t feature = -1;
  ColumnKind kind = ColumnKind::numeric;
  double threshold = 0.0;
  std::int32_t category = 0;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double impurity_decrease = 0.0;

  std::size_t n_samples = 0;
  double impurity = 0.0;
  // Class frequency vector (classification) or {mean target} (regression).
  std::vector<double> value;

  bool is_leaf() const noexcept { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

// Nodes are stored in pre-order; node 0 is the root.
struct TreeModel {
  TaskKind task = TaskKind::classification;
  std::size_t n_features = 0;
  std::size_t n_classes = 0;
  std::vector<TreeNode> nodes;

  std::size_t leaf_index(const FeatureView& features, std::size_t row) const;
  std::size_t leaf_index(std::span<const double> row) const;
  std::size_t depth() const;
  std::size_t n_leaves() const;
  bool uses_feature(std::size_t feature) const;

  bool operator==(const TreeModel&) const = default;
};

// Best weighted impurity decrease over the candidate features. Numeric
// thresholds are midpoints between consecutive distinct values; categorical
// splits test a single code against the rest. Ties resolve toward the lower
// feature index, then the lower threshold or code. Returns nullopt when no
// split satisfies min_samples_leaf with a positive decrease.
std::optional<Split> best_split(const FeatureView& features, const TargetView& target,
                                std::span<const std::size_t> rows, std::span<const std::size_t> candidate_features,
                                SplitCriterion criterion, std::size_t min_samples_leaf = 1);
std::optional<Split> best_split(const Table& table, std::span<const std::size_t> rows,
                                std::span<const std::size_t> candidate_features, SplitCriterion criterion,
                                std::size_t min_samples_leaf = 1);

TreeModel fit_tree(const FeatureView& features, const TargetView& target, std::span<const std::size_t> rows,
                   const TreeParams& params, Rng& rng);
TreeModel fit_tree(const Table& table, std::span<const std::size_t> rows, const TreeParams& params, Rng& rng);

// Leaf value the row routes to. Codes unseen at training time fail every
// membership test and route right.
std::span<const double> predict_tree(const TreeModel& tree, const FeatureView& features, std::size_t row);
std::span<const double> predict_tree(const TreeModel& tree, std::span<const double> row);

// Argmax of a class-score vector, ties toward the lowest class code.
std::size_t argmax_class(std::span<const double> scores) noexcept;

}  // namespace kpiforge
