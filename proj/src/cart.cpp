#include "kpiforge/cart.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <utility>

#include "kpiforge/error.hpp"

namespace kpiforge {

std::string_view to_string(SplitCriterion criterion) noexcept {
  switch (criterion) {
    case SplitCriterion::gini: return "gini";
    case SplitCriterion::entropy: return "entropy";
    case SplitCriterion::variance: return "variance";
  }
  return "gini";
}

std::optional<SplitCriterion> parse_criterion(std::string_view text) noexcept {
  if (text == "gini") return SplitCriterion::gini;
  if (text == "entropy") return SplitCriterion::entropy;
  if (text == "variance") return SplitCriterion::variance;
  return std::nullopt;
}

SplitCriterion default_criterion(TaskKind task) noexcept {
  return task == TaskKind::classification ? SplitCriterion::gini : SplitCriterion::variance;
}

bool criterion_matches(SplitCriterion criterion, TaskKind task) noexcept {
  return (criterion == SplitCriterion::variance) == (task == TaskKind::regression);
}

namespace {

double counts_impurity(SplitCriterion criterion, std::span<const std::size_t> counts, std::size_t n) {
  const double total = static_cast<double>(n);
  if (criterion == SplitCriterion::gini) {
    double sum_sq = 0.0;
    for (const auto c : counts) sum_sq += static_cast<double>(c) * static_cast<double>(c);
    return std::max(0.0, 1.0 - sum_sq / (total * total));
  }
  double h = 0.0;
  for (const auto c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / total;
    h -= p * std::log2(p);
  }
  return std::max(0.0, h);
}

}  // namespace

double impurity(SplitCriterion criterion, std::span<const std::size_t> class_counts) {
  if (criterion == SplitCriterion::variance) {
    throw Error(ErrorCode::InvalidParams, "variance impurity needs target values, not class counts");
  }
  const std::size_t n = std::accumulate(class_counts.begin(), class_counts.end(), std::size_t{0});
  if (n == 0) throw Error(ErrorCode::EmptyNode, "impurity of an empty node");
  return counts_impurity(criterion, class_counts, n);
}

double impurity(std::span<const double> targets) {
  if (targets.empty()) throw Error(ErrorCode::EmptyNode, "impurity of an empty node");
  // A constant sample is exactly pure; the two-pass formula can leave
  // rounding residue when the mean is not representable.
  const auto [lo, hi] = std::minmax_element(targets.begin(), targets.end());
  if (*lo == *hi) return 0.0;
  double mean = 0.0;
  for (const double t : targets) mean += t;
  mean /= static_cast<double>(targets.size());
  double ss = 0.0;
  for (const double t : targets) ss += (t - mean) * (t - mean);
  return ss / static_cast<double>(targets.size());
}

std::size_t argmax_class(std::span<const double> scores) noexcept {
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
  }
  return best;
}

// ---------------------------------------------------------------- split search

namespace {

double midpoint(double lo, double hi) noexcept {
  const double mid = lo + (hi - lo) / 2.0;
  return mid < hi ? mid : lo;
}

// Keeps the running best; a candidate wins only when it beats the incumbent
// by more than the tie tolerance, so earlier (lower feature, lower threshold)
// candidates win ties.
struct BestTracker {
  double tolerance;
  double best_delta = 0.0;
  std::optional<Split> best;

  void offer(const Split& candidate) {
    if (candidate.impurity_decrease > best_delta + tolerance) {
      best_delta = candidate.impurity_decrease;
      best = candidate;
    }
  }
};

class SplitSearch {
 public:
  SplitSearch(const FeatureView& features, const TargetView& target, std::span<const std::size_t> rows,
              SplitCriterion criterion, std::size_t min_samples_leaf)
      : features_(features), target_(target), rows_(rows), criterion_(criterion), min_leaf_(min_samples_leaf) {}

  std::optional<Split> run(std::span<const std::size_t> candidates) {
    const std::size_t n = rows_.size();
    if (n < 2 || n < 2 * min_leaf_) return std::nullopt;

    double parent = 0.0;
    if (classification()) {
      parent_counts_.assign(target_.n_classes, 0);
      for (const auto r : rows_) ++parent_counts_[class_of(r)];
      parent = counts_impurity(criterion_, parent_counts_, n);
    } else {
      double mean = 0.0;
      double lo = target_.values[rows_.front()];
      double hi = lo;
      for (const auto r : rows_) {
        mean += target_.values[r];
        lo = std::min(lo, target_.values[r]);
        hi = std::max(hi, target_.values[r]);
      }
      if (lo == hi) return std::nullopt;
      mean /= static_cast<double>(n);
      shift_ = mean;
      total_sum_ = 0.0;
      total_sq_ = 0.0;
      for (const auto r : rows_) {
        const double t = target_.values[r] - shift_;
        total_sum_ += t;
        total_sq_ += t * t;
      }
      parent = std::max(0.0, total_sq_ / static_cast<double>(n) -
                                 (total_sum_ / static_cast<double>(n)) * (total_sum_ / static_cast<double>(n)));
    }
    if (!(parent > 0.0)) return std::nullopt;
    parent_ = parent;

    std::vector<std::size_t> ordered(candidates.begin(), candidates.end());
    std::sort(ordered.begin(), ordered.end());
    ordered.erase(std::unique(ordered.begin(), ordered.end()), ordered.end());

    BestTracker tracker{kSplitTolerance * parent, 0.0, std::nullopt};
    for (const auto f : ordered) {
      if (f >= features_.n_features()) throw Error(ErrorCode::InvalidParams, "candidate feature out of range");
      if (features_.kinds[f] == ColumnKind::numeric) {
        search_numeric(f, tracker);
      } else {
        search_categorical(f, tracker);
      }
    }
    return tracker.best;
  }

 private:
  bool classification() const noexcept { return target_.task == TaskKind::classification; }
  std::size_t class_of(std::size_t row) const { return static_cast<std::size_t>(target_.values[row]); }

  // Weighted decrease from child statistics.
  double decrease_counts(std::span<const std::size_t> left, std::size_t n_left) {
    const std::size_t n = rows_.size();
    const std::size_t n_right = n - n_left;
    right_counts_.resize(parent_counts_.size());
    for (std::size_t k = 0; k < parent_counts_.size(); ++k) right_counts_[k] = parent_counts_[k] - left[k];
    const double wl = static_cast<double>(n_left) / static_cast<double>(n);
    const double wr = static_cast<double>(n_right) / static_cast<double>(n);
    return parent_ - wl * counts_impurity(criterion_, left, n_left) -
           wr * counts_impurity(criterion_, right_counts_, n_right);
  }

  double decrease_moments(double sum_left, double sq_left, std::size_t n_left) const {
    const std::size_t n = rows_.size();
    const std::size_t n_right = n - n_left;
    const double sum_right = total_sum_ - sum_left;
    const double sq_right = total_sq_ - sq_left;
    const double sse_left = std::max(0.0, sq_left - sum_left * sum_left / static_cast<double>(n_left));
    const double sse_right = std::max(0.0, sq_right - sum_right * sum_right / static_cast<double>(n_right));
    return parent_ - (sse_left + sse_right) / static_cast<double>(n);
  }

  void search_numeric(std::size_t f, BestTracker& tracker) {
    const std::size_t n = rows_.size();
    sorted_.clear();
    for (const auto r : rows_) sorted_.emplace_back(features_.at(f, r), r);
    std::sort(sorted_.begin(), sorted_.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    if (sorted_.front().first == sorted_.back().first) return;

    left_counts_.assign(parent_counts_.size(), 0);
    double sum_left = 0.0;
    double sq_left = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      const auto r = sorted_[i].second;
      if (classification()) {
        ++left_counts_[class_of(r)];
      } else {
        const double t = target_.values[r] - shift_;
        sum_left += t;
        sq_left += t * t;
      }
      if (sorted_[i].first == sorted_[i + 1].first) continue;
      const std::size_t n_left = i + 1;
      if (n_left < min_leaf_ || n - n_left < min_leaf_) continue;
      Split split;
      split.feature = f;
      split.kind = ColumnKind::numeric;
      split.threshold = midpoint(sorted_[i].first, sorted_[i + 1].first);
      split.n_left = n_left;
      split.n_right = n - n_left;
      split.impurity_decrease =
          classification() ? decrease_counts(left_counts_, n_left) : decrease_moments(sum_left, sq_left, n_left);
      tracker.offer(split);
    }
  }

  void search_categorical(std::size_t f, BestTracker& tracker) {
    const std::size_t n = rows_.size();
    // code -> (count, class counts | moments)
    std::int32_t max_code = -1;
    for (const auto r : rows_) max_code = std::max(max_code, static_cast<std::int32_t>(features_.at(f, r)));
    const auto n_codes = static_cast<std::size_t>(max_code + 1);
    std::vector<std::size_t> code_count(n_codes, 0);
    std::vector<std::size_t> code_class;
    std::vector<double> code_sum;
    std::vector<double> code_sq;
    const std::size_t k = parent_counts_.size();
    if (classification()) {
      code_class.assign(n_codes * k, 0);
    } else {
      code_sum.assign(n_codes, 0.0);
      code_sq.assign(n_codes, 0.0);
    }
    for (const auto r : rows_) {
      const auto c = static_cast<std::size_t>(features_.at(f, r));
      ++code_count[c];
      if (classification()) {
        ++code_class[c * k + class_of(r)];
      } else {
        const double t = target_.values[r] - shift_;
        code_sum[c] += t;
        code_sq[c] += t * t;
      }
    }
    for (std::size_t c = 0; c < n_codes; ++c) {
      const std::size_t n_left = code_count[c];
      if (n_left == 0 || n_left == n) continue;
      if (n_left < min_leaf_ || n - n_left < min_leaf_) continue;
      Split split;
      split.feature = f;
      split.kind = ColumnKind::categorical;
      split.category = static_cast<std::int32_t>(c);
      split.n_left = n_left;
      split.n_right = n - n_left;
      split.impurity_decrease =
          classification()
              ? decrease_counts(std::span<const std::size_t>(code_class).subspan(c * k, k), n_left)
              : decrease_moments(code_sum[c], code_sq[c], n_left);
      tracker.offer(split);
    }
  }

  const FeatureView& features_;
  const TargetView& target_;
  std::span<const std::size_t> rows_;
  SplitCriterion criterion_;
  std::size_t min_leaf_;

  double parent_ = 0.0;
  std::vector<std::size_t> parent_counts_;
  std::vector<std::size_t> left_counts_;
  std::vector<std::size_t> right_counts_;
  double shift_ = 0.0;
  double total_sum_ = 0.0;
  double total_sq_ = 0.0;
  std::vector<std::pair<double, std::size_t>> sorted_;
};

void check_criterion(SplitCriterion criterion, TaskKind task) {
  if (!criterion_matches(criterion, task)) {
    throw Error(ErrorCode::InvalidParams, std::string("criterion '") + std::string(to_string(criterion)) +
                                              "' does not apply to " + std::string(to_string(task)));
  }
}

}  // namespace

std::optional<Split> best_split(const FeatureView& features, const TargetView& target,
                                std::span<const std::size_t> rows, std::span<const std::size_t> candidate_features,
                                SplitCriterion criterion, std::size_t min_samples_leaf) {
  check_criterion(criterion, target.task);
  if (candidate_features.empty()) throw Error(ErrorCode::InvalidParams, "no candidate features");
  if (min_samples_leaf == 0) throw Error(ErrorCode::InvalidParams, "min_samples_leaf must be >= 1");
  return SplitSearch(features, target, rows, criterion, min_samples_leaf).run(candidate_features);
}

std::optional<Split> best_split(const Table& table, std::span<const std::size_t> rows,
                                std::span<const std::size_t> candidate_features, SplitCriterion criterion,
                                std::size_t min_samples_leaf) {
  return best_split(table.feature_view(), table.target_view(), rows, candidate_features, criterion,
                    min_samples_leaf);
}

// ---------------------------------------------------------------- growth

namespace {

class TreeGrower {
 public:
  TreeGrower(const FeatureView& features, const TargetView& target, const TreeParams& params,
             SplitCriterion criterion, std::size_t mtry, Rng& rng)
      : features_(features), target_(target), params_(params), criterion_(criterion), mtry_(mtry), rng_(rng) {
    pool_.resize(features.n_features());
  }

  TreeModel grow(std::vector<std::size_t> rows) {
    tree_.task = target_.task;
    tree_.n_features = features_.n_features();
    tree_.n_classes = target_.n_classes;
    rows_ = std::move(rows);
    grow_node(0, rows_.size(), 0);
    return std::move(tree_);
  }

 private:
  void fill_node_stats(TreeNode& node, std::span<const std::size_t> rows) {
    node.n_samples = rows.size();
    if (target_.task == TaskKind::classification) {
      std::vector<std::size_t> counts(target_.n_classes, 0);
      for (const auto r : rows) ++counts[static_cast<std::size_t>(target_.values[r])];
      node.impurity = counts_impurity(criterion_, counts, rows.size());
      node.value.resize(counts.size());
      for (std::size_t k = 0; k < counts.size(); ++k) {
        node.value[k] = static_cast<double>(counts[k]) / static_cast<double>(rows.size());
      }
    } else {
      scratch_.clear();
      for (const auto r : rows) scratch_.push_back(target_.values[r]);
      double sum = 0.0;
      for (const double t : scratch_) sum += t;
      node.value = {sum / static_cast<double>(scratch_.size())};
      node.impurity = impurity(scratch_);
    }
  }

  std::vector<std::size_t> draw_candidates() {
    const std::size_t p = pool_.size();
    std::iota(pool_.begin(), pool_.end(), std::size_t{0});
    if (mtry_ >= p) return pool_;
    for (std::size_t i = 0; i < mtry_; ++i) {
      const auto j = i + static_cast<std::size_t>(rng_.uniform_index(p - i));
      std::swap(pool_[i], pool_[j]);
    }
    std::vector<std::size_t> chosen(pool_.begin(), pool_.begin() + static_cast<std::ptrdiff_t>(mtry_));
    std::sort(chosen.begin(), chosen.end());
    return chosen;
  }

  std::int32_t grow_node(std::size_t begin, std::size_t end, std::size_t depth) {
    const auto index = static_cast<std::int32_t>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    const std::span<std::size_t> rows(rows_.data() + begin, end - begin);
    {
      TreeNode& node = tree_.nodes.back();
      fill_node_stats(node, rows);
    }
    const std::size_t n = rows.size();
    const bool depth_exhausted = params_.max_depth && depth >= *params_.max_depth;
    if (depth_exhausted || n < params_.min_samples_split || n < 2 * params_.min_samples_leaf ||
        !(tree_.nodes[static_cast<std::size_t>(index)].impurity > 0.0)) {
      return index;
    }
    const auto candidates = draw_candidates();
    const auto split = SplitSearch(features_, target_, rows, criterion_, params_.min_samples_leaf).run(candidates);
    if (!split) return index;

    const auto middle = std::stable_partition(rows.begin(), rows.end(), [&](std::size_t r) {
      return split->goes_left(features_.at(split->feature, r));
    });
    const auto n_left = static_cast<std::size_t>(middle - rows.begin());
    {
      TreeNode& node = tree_.nodes[static_cast<std::size_t>(index)];
      node.feature = static_cast<std::int32_t>(split->feature);
      node.kind = split->kind;
      node.threshold = split->threshold;
      node.category = split->category;
      node.impurity_decrease = split->impurity_decrease;
    }
    const auto left = grow_node(begin, begin + n_left, depth + 1);
    const auto right = grow_node(begin + n_left, end, depth + 1);
    tree_.nodes[static_cast<std::size_t>(index)].left = left;
    tree_.nodes[static_cast<std::size_t>(index)].right = right;
    return index;
  }

  const FeatureView& features_;
  const TargetView& target_;
  const TreeParams& params_;
  SplitCriterion criterion_;
  std::size_t mtry_;
  Rng& rng_;
  TreeModel tree_;
  std::vector<std::size_t> rows_;
  std::vector<std::size_t> pool_;
  std::vector<double> scratch_;
};

}  // namespace

TreeModel fit_tree(const FeatureView& features, const TargetView& target, std::span<const std::size_t> rows,
                   const TreeParams& params, Rng& rng) {
  if (rows.empty()) throw Error(ErrorCode::EmptyTrainingSet, "no rows to fit a tree on");
  if (features.n_features() == 0) throw Error(ErrorCode::InvalidParams, "table has no feature columns");
  if (params.min_samples_leaf < 1) throw Error(ErrorCode::InvalidParams, "min_samples_leaf must be >= 1");
  if (params.min_samples_split < 2) throw Error(ErrorCode::InvalidParams, "min_samples_split must be >= 2");
  const std::size_t p = features.n_features();
  const std::size_t mtry = params.mtry.value_or(p);
  if (mtry == 0 || mtry > p) {
    throw Error(ErrorCode::InvalidParams,
                "mtry=" + std::to_string(mtry) + " must lie in [1, " + std::to_string(p) + "]");
  }
  const SplitCriterion criterion = params.criterion.value_or(default_criterion(target.task));
  check_criterion(criterion, target.task);
  for (const auto r : rows) {
    if (r >= features.n_rows) throw Error(ErrorCode::InvalidParams, "row index out of range");
  }
  return TreeGrower(features, target, params, criterion, mtry, rng)
      .grow(std::vector<std::size_t>(rows.begin(), rows.end()));
}

TreeModel fit_tree(const Table& table, std::span<const std::size_t> rows, const TreeParams& params, Rng& rng) {
  return fit_tree(table.feature_view(), table.target_view(), rows, params, rng);
}

// ---------------------------------------------------------------- prediction

std::size_t TreeModel::leaf_index(const FeatureView& features, std::size_t row) const {
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& node = nodes[i];
    const double v = features.at(static_cast<std::size_t>(node.feature), row);
    const bool left = node.kind == ColumnKind::numeric ? v <= node.threshold
                                                       : v == static_cast<double>(node.category);
    i = static_cast<std::size_t>(left ? node.left : node.right);
  }
  return i;
}

std::size_t TreeModel::leaf_index(std::span<const double> row) const {
  if (row.size() != n_features) {
    throw Error(ErrorCode::SchemaMismatch, "row has " + std::to_string(row.size()) + " features, tree expects " +
                                               std::to_string(n_features));
  }
  std::size_t i = 0;
  while (!nodes[i].is_leaf()) {
    const auto& node = nodes[i];
    const double v = row[static_cast<std::size_t>(node.feature)];
    const bool left = node.kind == ColumnKind::numeric ? v <= node.threshold
                                                       : v == static_cast<double>(node.category);
    i = static_cast<std::size_t>(left ? node.left : node.right);
  }
  return i;
}

std::size_t TreeModel::depth() const {
  if (nodes.empty()) return 0;
  std::vector<std::size_t> level(nodes.size(), 0);
  std::size_t deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    deepest = std::max(deepest, level[i]);
    if (!nodes[i].is_leaf()) {
      level[static_cast<std::size_t>(nodes[i].left)] = level[i] + 1;
      level[static_cast<std::size_t>(nodes[i].right)] = level[i] + 1;
    }
  }
  return deepest;
}

std::size_t TreeModel::n_leaves() const {
  return static_cast<std::size_t>(
      std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.is_leaf(); }));
}

bool TreeModel::uses_feature(std::size_t feature) const {
  return std::any_of(nodes.begin(), nodes.end(),
                     [&](const TreeNode& n) { return n.feature == static_cast<std::int32_t>(feature); });
}

std::span<const double> predict_tree(const TreeModel& tree, const FeatureView& features, std::size_t row) {
  if (features.n_features() != tree.n_features) {
    throw Error(ErrorCode::SchemaMismatch, "feature count differs from the training schema");
  }
  return tree.nodes[tree.leaf_index(features, row)].value;
}

std::span<const double> predict_tree(const TreeModel& tree, std::span<const double> row) {
  return tree.nodes[tree.leaf_index(row)].value;
}

}  // namespace kpiforge
