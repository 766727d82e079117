#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "kpiforge/error.hpp"
#include "kpiforge/forest.hpp"
#include "kpiforge/kpi.hpp"

namespace kpiforge {

class KvFile;

// Project configuration (KvFile). Relative paths resolve against the
// directory holding the config file. Every key is optional.
//
//   [paths]
//   schema   = schema.kv         # column declarations
//   data     = data.csv          # default training window
//   model    = model.json        # model store
//   registry = registry.json     # micro-KPI registry
//   reports  = reports           # report directory
//
//   [forest]
//   n_trees = 100
//   max_depth = 12               # unset = unlimited
//   min_samples_leaf = 1
//   min_samples_split = 2
//   mtry = 3                     # unset = task default
//   criterion = gini             # gini | entropy | variance
//   bootstrap = true
//   seed = 0
//   workers = 1                  # 0 = one per hardware thread
//
//   [importance]
//   repeats = 10
//   mode = oob                   # or holdout
//   holdout_fraction = 0.3
//   seed = 0
//   stability_runs = 10          # forests for stability selection, 0 = off
//   stability_top_k = 3          # unset = ceil(sqrt(features))
//
//   [derive]
//   min_perm_drop = 0.01         # unset = relative rule
//   min_stability = 0.5
//   max_candidates = 5
//
//   [monitor]
//   rho_threshold = 0.7
//   top_k = 3                    # unset = features of confirmed micro-KPIs
//   resamples = 1000
//   seed = 0
//
//   [macro.duration]
//   name = Case duration
//   target = duration_days
//   direction = minimize
//   unit = days
//   goal = Strategic plan goal 2
//   description = "Days from filing to decision"
struct ProjectConfig {
  std::filesystem::path schema = "schema.kv";
  std::filesystem::path data = "data.csv";
  std::filesystem::path model = "model.json";
  std::filesystem::path registry = "registry.json";
  std::filesystem::path reports = "reports";

  ForestParams forest;
  std::size_t workers = 1;

  std::size_t repeats = 10;
  EvalMode mode = EvalMode::oob;
  double holdout_fraction = 0.3;
  std::uint64_t importance_seed = 0;
  std::size_t stability_runs = 10;
  std::optional<std::size_t> stability_top_k;

  DeriveThresholds derive;

  double rho_threshold = 0.7;
  std::optional<std::size_t> monitor_top_k;
  std::size_t resamples = 1000;
  std::uint64_t effect_seed = 0;

  std::vector<MacroKpi> macros;

  // Throws InvalidConfig naming file:line for unknown sections, unknown keys
  // and malformed values.
  static ProjectConfig from_kv(const KvFile& file, const std::filesystem::path& base_dir);
  static ProjectConfig load(const std::filesystem::path& path);
  const MacroKpi* find_macro(std::string_view id) const;
};

// Process exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitRefresh = 3;
inline constexpr int kExitData = 4;

// Usage/config (2) or data (4).
int exit_code_for(ErrorCode code) noexcept;

// One line: kpiforge: error code=<Code> where="<context>" message="<text>"
std::string format_error_line(const Error& error);

// Entry point behind the executable. `args` excludes the program name.
// The config comes from --config, else $KPIFORGE_CONFIG, else built-in
// defaults relative to the working directory.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kpiforge
