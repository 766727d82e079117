#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kpiforge/forest.hpp"
#include "kpiforge/tabular.hpp"

namespace kpiforge {

struct MdiScores {
  std::vector<double> raw;
  std::vector<double> normalized;  // all zero when no split exists
};

// Per tree, each internal node adds (n_node / n_root) * decrease to its
// feature; the per-tree sums are averaged over trees.
MdiScores mdi(const ForestModel& forest);

struct PermutationSettings {
  std::size_t repeats = 10;
  std::uint64_t seed = 0;
  EvalMode mode = EvalMode::oob;
  std::size_t workers = 1;
  // Test hook: sees (and may rewrite) the row order used for (feature,
  // repeat) before the permuted column is built.
  std::function<void(std::span<std::size_t>, std::size_t, std::size_t)> order_hook;
};

struct PermutationScores {
  MetricReport baseline;
  std::vector<std::vector<double>> drops;  // [feature][repeat]
  std::vector<double> mean;
  std::vector<double> std;  // sample standard deviation, 0 for one repeat
};

// drop = baseline metric - metric with feature j's column permuted by a row
// order drawn from Rng(derive_seed(seed, {j, r})). `table` is the training
// table in OOB mode and the held-out table in holdout mode. Never mutates
// the table.
PermutationScores permutation_importance(const ForestModel& forest, const Table& table,
                                         const PermutationSettings& settings);

// 1-based ranks by descending score; equal scores rank the lower index first.
std::vector<std::size_t> rank_descending(std::span<const double> scores);

// 1 - 6 sum(d^2) / (p (p^2 - 1)) over two rank vectors. TooFewFeatures for p < 2.
double spearman_rho(std::span<const std::size_t> ranks_a, std::span<const std::size_t> ranks_b);

struct FeatureImportance {
  std::string name;
  double mdi_raw = 0.0;
  double mdi_normalized = 0.0;
  double perm_mean = 0.0;
  double perm_std = 0.0;
  std::vector<double> perm_drops;
  std::size_t rank_mdi = 0;
  std::size_t rank_perm = 0;
  std::optional<double> stability;

  bool operator==(const FeatureImportance&) const = default;
};

struct StabilityInfo {
  std::size_t top_k = 0;
  std::vector<std::uint64_t> seeds;

  bool operator==(const StabilityInfo&) const = default;
};

struct ImportanceReport {
  std::string forest_fingerprint;
  std::string data_checksum;
  std::string target;
  TaskKind task = TaskKind::classification;
  EvalMode mode = EvalMode::oob;
  std::uint64_t seed = 0;
  std::size_t repeats = 0;
  std::size_t n_rows = 0;
  std::string metric;  // "accuracy" or "r2"
  double baseline_metric = 0.0;
  std::vector<FeatureImportance> features;
  std::optional<StabilityInfo> stability;

  std::vector<std::string> feature_names() const;
  std::optional<std::size_t> index_of(std::string_view name) const;
  std::vector<std::size_t> perm_ranks() const;
  std::vector<std::size_t> mdi_ranks() const;

  std::string to_json() const;
  static ImportanceReport from_json(std::string_view text, std::string_view origin = "<memory>");
  void save(const std::filesystem::path& path) const;
  static ImportanceReport load(const std::filesystem::path& path);
  // Fixed-width table sorted by permutation rank.
  std::string format_text() const;
  // FNV-1a of to_json(), as 16 hex digits.
  std::string fingerprint() const;

  bool operator==(const ImportanceReport&) const = default;
};

ImportanceReport importance_report(const ForestModel& forest, const Table& table,
                                   const PermutationSettings& settings);

// Spearman correlation between the MDI and permutation rankings.
double compare_measures(const ImportanceReport& report);

struct StabilitySettings {
  std::vector<std::uint64_t> seeds;  // one forest per seed, all distinct
  std::size_t top_k = 1;
  std::size_t repeats = 10;
  std::size_t workers = 1;
};

// n seeds derived from a base seed.
std::vector<std::uint64_t> stability_seeds(std::uint64_t base, std::size_t n);

struct StabilityResult {
  std::vector<std::string> features;
  std::vector<double> frequency;  // share of runs with rank_perm <= top_k
  StabilityInfo info;
};

// Each run refits with master_seed = seed and scores OOB permutation
// importance with the same seed.
StabilityResult stability_selection(const Table& table, const ForestParams& params, const StabilitySettings& settings);

// Copies the frequencies into the report's per-feature stability fields.
void attach_stability(ImportanceReport& report, const StabilityResult& stability);

}  // namespace kpiforge
