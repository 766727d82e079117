#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numbers>

#include "helpers.hpp"
#include "kpiforge/forest.hpp"
#include "kpiforge/kvfile.hpp"
#include "kpiforge/synth.hpp"

using namespace kpiforge;
using testing::code_of;

namespace {

GeneratorSpec regression_spec() {
  GeneratorSpec spec;
  spec.n_rows = 400;
  spec.seed = 3;
  spec.target = {"duration", TaskKind::regression, 2, 0.0, 1.0, 10.0};
  spec.features = {{"backlog", ColumnKind::numeric, FeatureGenerator::informative, 2.0},
                   {"staff", ColumnKind::numeric, FeatureGenerator::informative, -1.0},
                   {"proxy", ColumnKind::numeric, FeatureGenerator::correlated, 0.0, "backlog", 0.8},
                   {"office", ColumnKind::categorical, FeatureGenerator::noise, 0.0, "", 0.0, 4},
                   {"weekday", ColumnKind::numeric, FeatureGenerator::noise}};
  return spec;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const double ma = mean_of(a), mb = mean_of(b);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace

TEST_CASE("spec validation") {
  auto spec = regression_spec();
  for (auto& f : spec.features) f.weight = 0.0;
  CHECK(code_of([&] { generate(spec); }) == ErrorCode::InvalidSpec);

  auto bad_rho = regression_spec();
  bad_rho.features[2].rho = 1.0;
  CHECK(code_of([&] { bad_rho.validate(); }) == ErrorCode::InvalidSpec);

  auto forward = regression_spec();
  forward.features[2].correlated_with = "weekday";
  CHECK(code_of([&] { forward.validate(); }) == ErrorCode::InvalidSpec);

  auto noisy = regression_spec();
  noisy.target.task = TaskKind::classification;
  noisy.target.noise_rate = 0.5;
  CHECK(code_of([&] { noisy.validate(); }) == ErrorCode::InvalidSpec);

  auto nonfinite = regression_spec();
  nonfinite.features[0].weight = INFINITY;
  CHECK(code_of([&] { nonfinite.validate(); }) == ErrorCode::InvalidSpec);
}

TEST_CASE("generation is deterministic and matches the schema") {
  const auto spec = regression_spec();
  const auto [a, truth_a] = generate(spec);
  const auto [b, truth_b] = generate(spec);
  CHECK(a == b);
  CHECK(a.n_rows() == 400);
  CHECK(a.feature_names() == std::vector<std::string>{"backlog", "staff", "proxy", "office", "weekday"});
  CHECK(a.task() == TaskKind::regression);
  CHECK(truth_a.informative == std::vector<std::string>{"backlog", "staff"});
  CHECK(truth_a.weights == std::vector<double>{2.0, -1.0});
  CHECK(a.column("office").dictionary.size() == 4);

  auto other = spec;
  other.seed = 4;
  CHECK_FALSE(generate(other).first == a);
}

TEST_CASE("correlated features hit rho") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto spec = regression_spec();
    spec.seed = seed;
    spec.n_rows = 200;
    spec.features[2].rho = -0.6 + 0.15 * static_cast<double>(seed);
    const auto [t, truth] = generate(spec);
    CHECK(std::abs(correlation(t.column("proxy").values, t.column("backlog").values) - spec.features[2].rho) <= 0.05);
  }
}

TEST_CASE("informative set is exactly the nonzero weights") {
  auto spec = regression_spec();
  spec.features[1].weight = 0.0;
  const auto [t, truth] = generate(spec);
  CHECK(truth.informative == std::vector<std::string>{"backlog"});
  CHECK(truth.expected_drop_of("staff") == 0.0);
  CHECK(truth.expected_drop_of("proxy") == 0.0);
  CHECK(truth.expected_drop_of("backlog") > 0.0);
}

TEST_CASE("noiseless threshold link is a function of the informative feature") {
  GeneratorSpec spec;
  spec.n_rows = 300;
  spec.seed = 1;
  spec.target = {"late", TaskKind::classification, 2, 0.0};
  spec.features = {{"x", ColumnKind::numeric, FeatureGenerator::informative, 1.5},
                   {"n1", ColumnKind::numeric, FeatureGenerator::noise},
                   {"n2", ColumnKind::numeric, FeatureGenerator::noise}};
  const auto [t, truth] = generate(spec);
  const auto& labels = t.target().dictionary;
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    const auto& label = labels[t.target().code(r)];
    CHECK(label == (t.column("x").values[r] > 0.0 ? "class_1" : "class_0"));
  }
  ForestParams params;
  params.master_seed = 2;
  const auto forest = fit_forest(t, params);
  CHECK(oob_score(forest, t).accuracy >= 0.97);
}

TEST_CASE("multi-class labels are roughly balanced and flipped by noise") {
  GeneratorSpec spec;
  spec.n_rows = 3000;
  spec.seed = 9;
  spec.target = {"grade", TaskKind::classification, 3, 0.1};
  spec.features = {{"a", ColumnKind::numeric, FeatureGenerator::informative, 1.0},
                   {"c", ColumnKind::categorical, FeatureGenerator::informative, 0.5, "", 0.0, 3}};
  const auto [t, truth] = generate(spec);
  CHECK(t.target().dictionary.size() == 3);
  std::vector<double> counts(3, 0.0);
  for (double v : t.target().values) counts[static_cast<std::size_t>(v)] += 1.0;
  for (double c : counts) CHECK(c / 3000.0 == doctest::Approx(1.0 / 3.0).epsilon(0.15));
  CHECK(truth.expected_drop_of("a") > truth.expected_drop_of("c"));
  CHECK(truth.expected_drop_of("c") > 0.0);
}

TEST_CASE("binary expected drop agrees with a direct simulation") {
  GeneratorSpec spec;
  spec.target = {"y", TaskKind::classification, 2, 0.05};
  spec.features = {{"f1", ColumnKind::numeric, FeatureGenerator::informative, 2.0},
                   {"f2", ColumnKind::numeric, FeatureGenerator::informative, 1.0},
                   {"n", ColumnKind::numeric, FeatureGenerator::noise}};
  const auto [t, truth] = generate(spec);
  // Independent estimate: a fresh draw of one feature flips sign(score).
  Rng rng(123);
  const std::vector<double> w{2.0, 1.0};
  std::vector<double> flips(2, 0.0);
  const int draws = 400000;
  for (int i = 0; i < draws; ++i) {
    const double x1 = rng.normal(), x2 = rng.normal();
    const double s = w[0] * x1 + w[1] * x2;
    if ((s > 0) != (w[0] * rng.normal() + w[1] * x2 > 0)) flips[0] += 1.0;
    if ((s > 0) != (w[0] * x1 + w[1] * rng.normal() > 0)) flips[1] += 1.0;
  }
  CHECK(truth.expected_drop_of("f1") == doctest::Approx(0.9 * flips[0] / draws).epsilon(0.01));
  CHECK(truth.expected_drop_of("f2") == doctest::Approx(0.9 * flips[1] / draws).epsilon(0.02));
  // Closed form for the two-feature case: acos(w_other^2 / sigma^2) / pi.
  CHECK(truth.expected_drop_of("f1") == doctest::Approx(0.9 * std::acos(1.0 / 5.0) / std::numbers::pi));
}

TEST_CASE("regression expected drop is 2 w^2 / Var(y)") {
  const auto [t, truth] = generate(regression_spec());
  CHECK(truth.expected_drop_of("backlog") == doctest::Approx(8.0 / 6.0));
  CHECK(truth.expected_drop_of("staff") == doctest::Approx(2.0 / 6.0));
}

TEST_CASE("shift_window mutations") {
  GeneratorSpec two;
  two.target = {"y", TaskKind::classification, 2, 0.0};
  two.features = {{"a", ColumnKind::numeric, FeatureGenerator::informative, 2.0},
                  {"n", ColumnKind::numeric, FeatureGenerator::noise},
                  {"b", ColumnKind::numeric, FeatureGenerator::informative, 1.0}};
  const auto swapped = shift_window(two, {MutationKind::swap_informative});
  CHECK(swapped.features[0].weight == 1.0);
  CHECK(swapped.features[2].weight == 2.0);
  CHECK(swapped.features[1] == two.features[1]);
  CHECK(swapped.seed == two.seed);

  auto four = regression_spec();
  four.features.push_back({"z", ColumnKind::numeric, FeatureGenerator::informative, 5.0});
  const auto rev = shift_window(four, {MutationKind::swap_informative});
  CHECK(rev.features[0].weight == 5.0);
  CHECK(rev.features[1].weight == -1.0);
  CHECK(rev.features[5].weight == 2.0);

  const auto spec = regression_spec();
  CHECK(shift_window(spec, {MutationKind::scale_target, 1.0}) == spec);
  const auto shifted = shift_window(spec, {MutationKind::shift_target, -0.2 * spec.target.intercept});
  CHECK(shifted.target.intercept == doctest::Approx(8.0));
  auto big = shifted;
  big.n_rows = 20000;
  CHECK(mean_of(generate(big).first.target().values) == doctest::Approx(8.0).epsilon(0.01));

  CHECK(code_of([&] { shift_window(two, {MutationKind::shift_target, 1.0}); }) == ErrorCode::InapplicableMutation);
  auto single = spec;
  single.features[1].weight = 0.0;
  CHECK(code_of([&] { shift_window(single, {MutationKind::swap_informative}); }) ==
        ErrorCode::InapplicableMutation);
  CHECK(code_of([&] { shift_window(spec, {MutationKind::scale_target, 0.0}); }) == ErrorCode::InapplicableMutation);
}

TEST_CASE("spec file round trip") {
  const auto spec = regression_spec();
  CHECK(GeneratorSpec::from_kv(KvFile::parse(spec.to_kv())) == spec);

  const auto parsed = GeneratorSpec::from_kv(KvFile::parse(
      "[generator]\nn_rows = 50\nseed = 4\n[target]\ntask = classification\nnoise_rate = 0.1\n"
      "[feature.a]\ngenerator = informative\nweight = 1\n[feature.b]\nkind = categorical\nlevels = 5\n"));
  CHECK(parsed.n_rows == 50);
  CHECK(parsed.target.task == TaskKind::classification);
  CHECK(parsed.features.size() == 2);
  CHECK(parsed.features[1].generator == FeatureGenerator::noise);
  CHECK(parsed.features[1].levels == 5);

  CHECK(code_of([] { GeneratorSpec::from_kv(KvFile::parse("[feature.a]\ngenerator = noise\n")); }) ==
        ErrorCode::InvalidSpec);
  CHECK(code_of([] { GeneratorSpec::from_kv(KvFile::parse("[feature.a]\ngenerator = magic\n")); }) ==
        ErrorCode::InvalidSpec);
  CHECK(code_of([] { GeneratorSpec::from_kv(KvFile::parse("[generator]\nn_rows = -3\n")); }) ==
        ErrorCode::InvalidSpec);
}
