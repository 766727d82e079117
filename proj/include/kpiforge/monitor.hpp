#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "kpiforge/importance.hpp"
#include "kpiforge/kpi.hpp"
#include "kpiforge/tabular.hpp"

namespace kpiforge {

struct FeatureDrift {
  std::string name;
  std::size_t baseline_rank = 0;  // permutation rank, 1 = most important
  std::size_t fresh_rank = 0;
  long rank_delta = 0;  // fresh - baseline; negative = moved up

  bool operator==(const FeatureDrift&) const = default;
};

struct DriftReport {
  std::string baseline_fingerprint;
  std::string fresh_fingerprint;
  double spearman_rho = 1.0;  // on permutation ranks
  double mdi_rho = 1.0;       // informational only
  double threshold = 0.7;
  std::size_t top_k = 0;
  std::vector<FeatureDrift> features;         // baseline feature order
  std::vector<std::string> flagged_features;  // left or entered the top-k
  bool refresh_recommended = false;

  std::string to_json() const;
  static DriftReport from_json(std::string_view text, std::string_view origin = "<memory>");
  void save(const std::filesystem::path& path) const;
  static DriftReport load(const std::filesystem::path& path);
  std::string format_text() const;

  bool operator==(const DriftReport&) const = default;
};

inline constexpr double kDefaultRhoThreshold = 0.7;

// Features are matched by name; the fresh report may list them in any order.
// top_k = 0 disables the membership check.
DriftReport detect_drift(const ImportanceReport& baseline, const ImportanceReport& fresh, std::size_t top_k,
                         double rho_threshold = kDefaultRhoThreshold);

struct InterventionSettings {
  std::size_t resamples = 1000;
  double confidence = 0.95;
  std::uint64_t seed = 0;
};

// Before/after comparison of a macro-KPI's target column. "improvement" is
// signed by the macro's direction: for a minimized KPI a lower after-mean is
// a positive improvement. The interval is a two-sample percentile bootstrap
// on mean(after) - mean(before).
struct EffectSummary {
  std::string macro_id;
  std::string target_column;
  Direction direction = Direction::minimize;
  std::size_t n_before = 0;
  std::size_t n_after = 0;
  double mean_before = 0.0;
  double mean_after = 0.0;
  double median_before = 0.0;
  double median_after = 0.0;
  double difference = 0.0;   // mean_after - mean_before
  double improvement = 0.0;  // difference signed by direction
  std::optional<double> relative_improvement;  // unset when mean_before == 0
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::optional<double> relative_ci_low;
  std::optional<double> relative_ci_high;
  double confidence = 0.95;
  std::size_t resamples = 0;
  std::uint64_t seed = 0;

  // The interval excludes zero on the favorable side.
  bool improved() const noexcept;

  std::string to_json() const;
  static EffectSummary from_json(std::string_view text, std::string_view origin = "<memory>");
  void save(const std::filesystem::path& path) const;
  std::string format_text() const;

  bool operator==(const EffectSummary&) const = default;
};

// Missing target cells are skipped; a window with no values is EmptyWindow.
EffectSummary evaluate_intervention(const Table& before, const Table& after, const MacroKpi& macro,
                                    const InterventionSettings& settings = {});

}  // namespace kpiforge
