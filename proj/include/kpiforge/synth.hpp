#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "kpiforge/tabular.hpp"

namespace kpiforge {

class KvFile;

enum class FeatureGenerator { informative, noise, correlated };
std::string_view to_string(FeatureGenerator generator) noexcept;

struct FeatureSpec {
  std::string name;
  ColumnKind kind = ColumnKind::numeric;
  FeatureGenerator generator = FeatureGenerator::noise;
  double weight = 0.0;          // informative
  std::string correlated_with;  // correlated: an earlier numeric feature
  double rho = 0.0;             // correlated
  std::size_t levels = 3;       // categorical

  bool operator==(const FeatureSpec&) const = default;
};

struct TargetSpec {
  std::string name = "target";
  TaskKind task = TaskKind::regression;
  std::size_t classes = 2;   // classification
  double noise_rate = 0.0;   // classification: chance of a flip to another class
  double noise_std = 1.0;    // regression
  double intercept = 0.0;    // regression

  bool operator==(const TargetSpec&) const = default;
};

// Generator spec file (KvFile):
//
//   [generator]
//   n_rows = 500
//   seed = 7
//
//   [target]
//   name = duration
//   task = regression        # or classification
//   noise_std = 1.0
//   intercept = 10
//   # classes = 2, noise_rate = 0.05 for classification
//
//   [feature.backlog]
//   kind = numeric           # or categorical (with levels = N)
//   generator = informative  # or noise, correlated
//   weight = 2.0
//
//   [feature.backlog_proxy]
//   generator = correlated
//   with = backlog
//   rho = 0.8
//
// Features appear in the table in section order.
struct GeneratorSpec {
  std::size_t n_rows = 200;
  std::uint64_t seed = 0;
  std::vector<FeatureSpec> features;
  TargetSpec target;

  // Throws InvalidSpec.
  void validate() const;
  static GeneratorSpec from_kv(const KvFile& file);
  static GeneratorSpec load(const std::filesystem::path& path);
  std::string to_kv() const;
  Schema schema() const;

  bool operator==(const GeneratorSpec&) const = default;
};

struct GroundTruth {
  std::vector<std::string> informative;  // features with nonzero weight, spec order
  std::vector<double> weights;           // parallel to `informative`
  // Per feature (spec order): permutation drop of the true link function
  // at infinite sample size, in accuracy (classification) or R^2 units.
  std::vector<std::string> features;
  std::vector<double> expected_drop;

  double expected_drop_of(std::string_view feature) const;
  std::string to_json() const;
};

// Numeric features are standard normal; categorical codes are uniform over
// `levels`, and enter the link standardized to mean 0 and variance 1. A
// correlated feature is mixed from its base and an empirically
// orthogonalized standard normal, so the sample correlation equals rho.
std::pair<Table, GroundTruth> generate(const GeneratorSpec& spec);

enum class MutationKind { swap_informative, scale_target, shift_target };

struct Mutation {
  MutationKind kind = MutationKind::swap_informative;
  double value = 0.0;  // factor or delta
};

// swap_informative reverses the order of the informative weights (an
// exchange for two). scale_target multiplies intercept, weights and noise
// by the factor; shift_target adds delta to the intercept. Both apply to
// regression targets only. Throws InapplicableMutation.
GeneratorSpec shift_window(const GeneratorSpec& spec, const Mutation& mutation);

}  // namespace kpiforge
