#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <numeric>

#include "helpers.hpp"
#include "kpiforge/forest.hpp"

using namespace kpiforge;
using testing::code_of;
using testing::iota;

namespace {

// y = 1 when a + 0.5 b > 0, plus a pure-noise column.
Table threshold_table(std::size_t n, std::uint64_t seed, double flip = 0.0) {
  TableBuilder b{Schema({{"a", ColumnKind::numeric, ColumnRole::feature},
                         {"b", ColumnKind::numeric, ColumnRole::feature},
                         {"noise", ColumnKind::numeric, ColumnRole::feature},
                         {"y", ColumnKind::categorical, ColumnRole::target}})};
  Rng rng(seed);
  for (std::size_t r = 0; r < n; ++r) {
    const double a = rng.normal(), bb = rng.normal(), z = rng.normal();
    bool label = a + 0.5 * bb > 0.0;
    if (rng.bernoulli(flip)) label = !label;
    b.add_row(std::vector<std::string>{format_real(a), format_real(bb), format_real(z), label ? "pos" : "neg"});
  }
  return std::move(b).build();
}

Table regression_table(std::size_t n, std::uint64_t seed) {
  TableBuilder b{Schema({{"a", ColumnKind::numeric, ColumnRole::feature},
                         {"c", ColumnKind::categorical, ColumnRole::feature},
                         {"y", ColumnKind::numeric, ColumnRole::target}})};
  Rng rng(seed);
  const std::vector<std::string> levels{"north", "south", "east"};
  for (std::size_t r = 0; r < n; ++r) {
    const double a = rng.normal();
    const std::size_t c = rng.uniform_index(3);
    b.add_row(std::vector<std::string>{format_real(a), levels[c],
                                       format_real(3.0 * a + static_cast<double>(c) + 0.1 * rng.normal())});
  }
  return std::move(b).build();
}

double majority_error(const Table& t) {
  std::vector<std::size_t> counts(t.target().dictionary.size(), 0);
  for (double v : t.target().values) ++counts[static_cast<std::size_t>(v)];
  return 1.0 - static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(t.n_rows());
}

}  // namespace

TEST_CASE("resolve_params defaults") {
  const auto c = resolve_params(ForestParams{}, TaskKind::classification, 10);
  CHECK(c.tree.mtry == 4u);
  CHECK(c.tree.criterion == SplitCriterion::gini);
  const auto r = resolve_params(ForestParams{}, TaskKind::regression, 10);
  CHECK(r.tree.mtry == 3u);
  CHECK(r.tree.criterion == SplitCriterion::variance);
  CHECK(resolve_params(ForestParams{}, TaskKind::regression, 2).tree.mtry == 1u);
  ForestParams all;
  all.tree.mtry = kAllFeatures;
  CHECK(resolve_params(all, TaskKind::classification, 7).tree.mtry == 7u);

  ForestParams bad;
  bad.tree.mtry = 8;
  CHECK(code_of([&] { resolve_params(bad, TaskKind::classification, 7); }) == ErrorCode::InvalidParams);
  ForestParams none;
  none.n_trees = 0;
  CHECK(code_of([&] { resolve_params(none, TaskKind::classification, 7); }) == ErrorCode::InvalidParams);
  ForestParams crit;
  crit.tree.criterion = SplitCriterion::gini;
  CHECK(code_of([&] { resolve_params(crit, TaskKind::regression, 7); }) == ErrorCode::InvalidParams);
}

TEST_CASE("parallel_for visits each index once and rethrows the first failure") {
  std::vector<std::atomic<int>> hits(50);
  parallel_for(50, 4, [&](std::size_t i) { hits[i].fetch_add(1); });
  for (const auto& h : hits) CHECK(h.load() == 1);
  try {
    parallel_for(20, 3, [](std::size_t i) {
      if (i == 7 || i == 15) throw Error(ErrorCode::InvalidParams, std::to_string(i));
    });
    FAIL("expected error");
  } catch (const Error& e) {
    CHECK(e.detail() == "7");
  }
}

TEST_CASE("one tree without bootstrap is a single CART tree") {
  const auto t = threshold_table(60, 1, 0.1);
  ForestParams params;
  params.n_trees = 1;
  params.bootstrap = false;
  params.tree.mtry = kAllFeatures;
  const auto forest = fit_forest(t, params);
  Rng rng(0);
  TreeParams tp;
  tp.mtry = 3;
  const auto tree = fit_tree(t, iota(60), tp, rng);
  for (std::size_t r = 0; r < 60; ++r) {
    CHECK(forest.predict(t.feature_view(), r) ==
          static_cast<double>(argmax_class(predict_tree(tree, t.feature_view(), r))));
  }
  for (const auto& counts : forest.inbag()) CHECK(std::all_of(counts.begin(), counts.end(), [](auto c) { return c == 1; }));
}

TEST_CASE("worker count does not change the model") {
  const auto t = threshold_table(120, 2, 0.05);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    ForestParams params;
    params.n_trees = 30;
    params.master_seed = seed;
    const auto serial = fit_forest(t, params, {1});
    const auto parallel = fit_forest(t, params, {8});
    CHECK(serial.serialize() == parallel.serialize());
  }
}

TEST_CASE("first k trees match the k-tree forest") {
  const auto t = regression_table(80, 3);
  ForestParams params;
  params.master_seed = 42;
  params.n_trees = 25;
  const auto big = fit_forest(t, params);
  params.n_trees = 10;
  const auto small = fit_forest(t, params);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(big.trees()[i] == small.trees()[i]);
    CHECK(big.inbag()[i] == small.inbag()[i]);
  }
}

TEST_CASE("bootstrap bookkeeping") {
  const auto t = threshold_table(150, 4);
  ForestParams params;
  params.n_trees = 60;
  params.master_seed = 7;
  const auto forest = fit_forest(t, params);
  CHECK(forest.trees().size() == 60);
  for (const auto& counts : forest.inbag()) CHECK(std::accumulate(counts.begin(), counts.end(), 0u) == 150u);
  const auto enc = forest.encode(t);
  EnsembleEvaluator eval(forest, enc.features(), enc.targets(), EvalMode::oob);
  CHECK(eval.mean_oob_fraction() >= 0.30);
  CHECK(eval.mean_oob_fraction() <= 0.44);
}

TEST_CASE("OOB errors") {
  const auto t = threshold_table(40, 5);
  ForestParams params;
  params.n_trees = 5;
  params.bootstrap = false;
  const auto forest = fit_forest(t, params);
  try {
    oob_score(forest, t);
    FAIL("expected NoOobCoverage");
  } catch (const NoOobCoverageError& e) {
    CHECK(e.code() == ErrorCode::NoOobCoverage);
    CHECK(e.rows().size() == 40);
  }
  const auto one = threshold_table(1, 5);
  CHECK(code_of([&] { fit_forest(one, params); }) == ErrorCode::EmptyTrainingSet);
}

TEST_CASE("single-class target scores perfectly out of bag") {
  TableBuilder b{Schema({{"x", ColumnKind::numeric, ColumnRole::feature},
                         {"y", ColumnKind::categorical, ColumnRole::target}})};
  for (int r = 0; r < 30; ++r) b.add_row(std::vector<std::string>{std::to_string(r), "only"});
  const auto t = std::move(b).build();
  ForestParams params;
  params.n_trees = 20;
  const auto forest = fit_forest(t, params);
  CHECK(oob_score(forest, t).accuracy == 1.0);
}

TEST_CASE("separable data reaches near-perfect OOB accuracy") {
  TableBuilder b{Schema({{"x", ColumnKind::numeric, ColumnRole::feature},
                         {"z", ColumnKind::numeric, ColumnRole::feature},
                         {"y", ColumnKind::categorical, ColumnRole::target}})};
  Rng rng(8);
  for (int r = 0; r < 200; ++r) {
    const double x = rng.normal();
    b.add_row(std::vector<std::string>{format_real(x), format_real(rng.normal()), x > 0 ? "hi" : "lo"});
  }
  const auto t = std::move(b).build();
  ForestParams params;
  params.master_seed = 3;
  const auto forest = fit_forest(t, params);
  CHECK(oob_score(forest, t).accuracy >= 0.95);
}

TEST_CASE("OOB error beats the majority baseline") {
  const auto t = threshold_table(200, 9, 0.05);
  ForestParams params;
  params.master_seed = 11;
  const auto forest = fit_forest(t, params);
  CHECK(1.0 - oob_score(forest, t).accuracy < majority_error(t));
}

TEST_CASE("regression forest predictions lie within tree prediction bounds") {
  const auto t = regression_table(100, 10);
  ForestParams params;
  params.n_trees = 15;
  const auto forest = fit_forest(t, params);
  const auto view = t.feature_view();
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    double lo = INFINITY, hi = -INFINITY;
    for (const auto& tree : forest.trees()) {
      const double v = predict_tree(tree, view, r)[0];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double p = forest.predict(view, r);
    CHECK(p >= lo);
    CHECK(p <= hi);
  }
  const auto report = oob_score(forest, t);
  CHECK(report.r2 > 0.8);
  CHECK(report.primary() == report.r2);
}

TEST_CASE("classification argmax is scale invariant") {
  const auto t = threshold_table(80, 12, 0.2);
  ForestParams params;
  params.n_trees = 9;
  const auto forest = fit_forest(t, params);
  const auto view = t.feature_view();
  for (std::size_t r = 0; r < t.n_rows(); ++r) {
    auto agg = forest.aggregate(view, r);
    const auto before = argmax_class(agg);
    for (auto& v : agg) v *= 3.7;
    CHECK(argmax_class(agg) == before);
    CHECK(forest.predict(view, r) == static_cast<double>(before));
  }
}

TEST_CASE("model round trip preserves predictions bitwise") {
  const auto t = regression_table(90, 13);
  ForestParams params;
  params.n_trees = 12;
  params.master_seed = 5;
  const auto forest = fit_forest(t, params);
  const auto path = std::filesystem::temp_directory_path() / "kpiforge_model_test.json";
  forest.save(path);
  const auto loaded = ForestModel::load(path);
  CHECK(loaded == forest);
  CHECK(loaded.fingerprint() == forest.fingerprint());
  const auto a = forest.predict(t);
  const auto b = loaded.predict(t);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::memcmp(&a[i], &b[i], sizeof(double)) == 0);

  CHECK(code_of([] { ForestModel::deserialize("{}"); }) == ErrorCode::CorruptFile);
  CHECK(code_of([] { ForestModel::deserialize("not json"); }) == ErrorCode::CorruptFile);
  auto text = forest.serialize();
  const auto pos = text.find("\"format_version\":1");
  REQUIRE(pos != std::string::npos);
  text.replace(pos, 18, "\"format_version\":9");
  CHECK(code_of([&] { ForestModel::deserialize(text); }) == ErrorCode::UnsupportedVersion);
  CHECK(code_of([] { ForestModel::load("/nonexistent/model.json"); }) == ErrorCode::IoError);
}

TEST_CASE("predict re-encodes categories and rejects mismatched schemas") {
  const auto t = regression_table(60, 14);
  ForestParams params;
  params.n_trees = 5;
  const auto forest = fit_forest(t, params);

  // Same labels in a different first-appearance order predict the same.
  const std::vector<std::size_t> reversed = [] {
    std::vector<std::size_t> r(60);
    std::iota(r.rbegin(), r.rend(), std::size_t{0});
    return r;
  }();
  std::string csv = "a,c,y\n";
  for (auto r : reversed) {
    csv += format_real(t.column("a").values[r]) + "," + t.column("c").dictionary[t.column("c").code(r)] + "," +
           format_real(t.target().values[r]) + "\n";
  }
  const auto flipped = read_table(csv, t.schema());
  const auto p1 = forest.predict(t);
  const auto p2 = forest.predict(flipped);
  for (std::size_t i = 0; i < 60; ++i) CHECK(p2[i] == p1[reversed[i]]);

  const std::vector<double> short_row{1.0};
  CHECK(code_of([&] { forest.predict(short_row); }) == ErrorCode::SchemaMismatch);
  const auto other = threshold_table(10, 1);
  CHECK(code_of([&] { forest.predict(other); }) == ErrorCode::SchemaMismatch);
}

TEST_CASE("holdout scoring") {
  const auto t = threshold_table(200, 15, 0.05);
  const auto [train, test] = split_holdout(t, 0.7, 3);
  ForestParams params;
  params.n_trees = 50;
  const auto forest = fit_forest(train, params);
  const auto report = holdout_score(forest, test);
  CHECK(report.n_rows == test.n_rows());
  CHECK(report.accuracy > 1.0 - majority_error(test));
}

TEST_CASE("compute_metric conventions") {
  const std::vector<double> truth{1, 2, 3}, exact{1, 2, 3}, off{2, 2, 2};
  CHECK(compute_metric(TaskKind::regression, exact, truth).r2 == 1.0);
  CHECK(compute_metric(TaskKind::regression, off, truth).r2 == doctest::Approx(0.0));
  const std::vector<double> flat{2, 2, 2};
  CHECK(compute_metric(TaskKind::regression, flat, flat).r2 == 1.0);
  CHECK(compute_metric(TaskKind::regression, truth, flat).r2 == 0.0);
  const std::vector<double> labels{0, 1, 1, 0}, guess{0, 1, 0, 0};
  CHECK(compute_metric(TaskKind::classification, guess, labels).accuracy == 0.75);
}
