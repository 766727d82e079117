#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "helpers.hpp"
#include "kpiforge/monitor.hpp"
#include "kpiforge/rng.hpp"
#include "scenarios.hpp"

using namespace kpiforge;
using testing::code_of;

namespace {

ImportanceReport ranked_report(const std::vector<std::string>& names, const std::vector<double>& perm) {
  ImportanceReport r;
  r.target = "y";
  r.forest_fingerprint = "forest";
  const auto ranks = rank_descending(perm);
  std::vector<double> mdi_scores(perm.rbegin(), perm.rend());
  const auto mdi_ranks = rank_descending(mdi_scores);
  for (std::size_t j = 0; j < names.size(); ++j) {
    FeatureImportance f;
    f.name = names[j];
    f.perm_mean = perm[j];
    f.rank_perm = ranks[j];
    f.rank_mdi = mdi_ranks[j];
    r.features.push_back(f);
  }
  return r;
}

Table numeric_window(const std::vector<double>& values) {
  TableBuilder builder{Schema({{"x", ColumnKind::numeric, ColumnRole::feature},
                               {"days", ColumnKind::numeric, ColumnRole::target}})};
  for (const double v : values) {
    const std::vector<std::string> row{"0", format_real(v)};
    builder.add_row(row);
  }
  return std::move(builder).build();
}

MacroKpi days_macro(Direction direction = Direction::minimize) {
  return {"duration", "Duration", "", "days", direction, "days", ""};
}

const std::vector<std::string> kNames{"a", "b", "c", "d", "e"};

}  // namespace

TEST_CASE("identical reports do not drift") {
  const auto r = ranked_report(kNames, {0.5, 0.4, 0.3, 0.2, 0.1});
  const auto d = detect_drift(r, r, 2);
  CHECK(d.spearman_rho == 1.0);
  CHECK(d.flagged_features.empty());
  CHECK_FALSE(d.refresh_recommended);
  for (const auto& f : d.features) CHECK(f.rank_delta == 0);
  CHECK(d.baseline_fingerprint == d.fresh_fingerprint);
}

TEST_CASE("a feature entering the top-k is flagged") {
  const auto base = ranked_report(kNames, {0.5, 0.4, 0.3, 0.2, 0.1});
  const auto fresh = ranked_report(kNames, {0.5, 0.3, 0.4, 0.2, 0.1});
  const auto d = detect_drift(base, fresh, 2);
  CHECK(d.flagged_features == std::vector<std::string>{"b", "c"});
  CHECK(d.spearman_rho > 0.7);
  CHECK(d.refresh_recommended);
  CHECK(d.features[1].rank_delta == 1);
  CHECK(d.features[2].rank_delta == -1);
  // Inside a larger top-k the same exchange is invisible.
  CHECK_FALSE(detect_drift(base, fresh, 3).refresh_recommended);
  CHECK(detect_drift(base, fresh, 0).flagged_features.empty());
}

TEST_CASE("fresh reports are matched by name, not position") {
  const auto base = ranked_report(kNames, {0.5, 0.4, 0.3, 0.2, 0.1});
  const auto shuffled = ranked_report({"e", "d", "c", "b", "a"}, {0.1, 0.2, 0.3, 0.4, 0.5});
  const auto d = detect_drift(base, shuffled, 2);
  CHECK(d.spearman_rho == 1.0);
  CHECK_FALSE(d.refresh_recommended);
}

TEST_CASE("drift errors") {
  const auto base = ranked_report(kNames, {0.5, 0.4, 0.3, 0.2, 0.1});
  const auto fewer = ranked_report({"a", "b", "c", "d"}, {0.5, 0.4, 0.3, 0.2});
  const auto renamed = ranked_report({"a", "b", "c", "d", "z"}, {0.5, 0.4, 0.3, 0.2, 0.1});
  CHECK(code_of([&] { detect_drift(base, fewer, 2); }) == ErrorCode::FeatureSetMismatch);
  CHECK(code_of([&] { detect_drift(base, renamed, 2); }) == ErrorCode::FeatureSetMismatch);
  CHECK(code_of([&] { detect_drift(base, base, 6); }) == ErrorCode::InvalidParams);
  CHECK(code_of([&] { detect_drift(base, base, 2, 1.5); }) == ErrorCode::ThresholdInvalid);
}

TEST_CASE("drift properties on random rankings") {
  Rng rng(404);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t p = 2 + rng.uniform_index(9);
    std::vector<std::string> names;
    std::vector<double> a, b;
    for (std::size_t j = 0; j < p; ++j) {
      names.push_back("v" + std::to_string(j));
      a.push_back(std::round(rng.normal() * 4.0));
      b.push_back(std::round(rng.normal() * 4.0));
    }
    const auto ra = ranked_report(names, a);
    const auto rb = ranked_report(names, b);
    const std::size_t k = rng.uniform_index(p + 1);
    const double threshold = 2.0 * rng.uniform01() - 1.0;
    const auto ab = detect_drift(ra, rb, k, threshold);
    const auto ba = detect_drift(rb, ra, k, threshold);
    CHECK(ab.spearman_rho == ba.spearman_rho);
    CHECK(ab.flagged_features == ba.flagged_features);
    CHECK(ab.spearman_rho >= -1.0);
    CHECK(ab.spearman_rho <= 1.0);
    CHECK(ab.refresh_recommended == (ab.spearman_rho < threshold || !ab.flagged_features.empty()));
    // Flagged features come in pairs: one leaves for each that enters.
    CHECK(ab.flagged_features.size() % 2 == 0);
    CHECK(DriftReport::from_json(ab.to_json()) == ab);
  }
}

TEST_CASE("drift report file round trip and tamper check") {
  const auto base = ranked_report(kNames, {0.5, 0.4, 0.3, 0.2, 0.1});
  const auto fresh = ranked_report(kNames, {0.1, 0.2, 0.3, 0.4, 0.5});
  const auto d = detect_drift(base, fresh, 1);
  CHECK(d.spearman_rho == doctest::Approx(-1.0));
  const auto path = std::filesystem::temp_directory_path() / "kpiforge_drift_test.json";
  d.save(path);
  CHECK(DriftReport::load(path) == d);
  auto text = d.to_json();
  text.replace(text.find("\"refresh_recommended\": true"), 27, "\"refresh_recommended\": false");
  CHECK(code_of([&] { DriftReport::from_json(text); }) == ErrorCode::CorruptFile);
  CHECK(d.format_text().find("refresh recommended") != std::string::npos);
}

TEST_CASE("swapped informative weights trigger a refresh; a fresh seed alone does not") {
  int swapped_hits = 0, control_quiet = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto spec = scenarios::drift_spec(1000 + s);
    const auto base = scenarios::window_report(spec, 50, s);
    const auto control = scenarios::window_report(scenarios::next_window(spec, 1), 50, s);
    const auto swapped = scenarios::window_report(
        shift_window(scenarios::next_window(spec, 1), {MutationKind::swap_informative}), 50, s);
    const auto ds = detect_drift(base, swapped, scenarios::kDriftTopK);
    const auto dc = detect_drift(base, control, scenarios::kDriftTopK);
    swapped_hits += ds.refresh_recommended && ds.spearman_rho < 0.7;
    control_quiet += !dc.refresh_recommended;
  }
  CHECK(swapped_hits >= 19);
  CHECK(control_quiet == 20);
}

TEST_CASE("identical windows show no change") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> v;
    const std::size_t n = 1 + rng.uniform_index(60);
    for (std::size_t i = 0; i < n; ++i) v.push_back(10.0 + 3.0 * rng.normal());
    const auto w = numeric_window(v);
    const auto e = evaluate_intervention(w, w, days_macro(), {200, 0.95, rng.next_u64()});
    CHECK(e.difference == 0.0);
    CHECK(e.improvement == 0.0);
    CHECK(e.ci_low <= 0.0);
    CHECK(e.ci_high >= 0.0);
    CHECK_FALSE(e.improved());
  }
}

TEST_CASE("constant shift is recovered exactly") {
  const std::vector<double> before{12, 9, 15, 11, 8, 14};
  std::vector<double> after;
  for (const double x : before) after.push_back(x - 2.5);
  const auto e = evaluate_intervention(numeric_window(before), numeric_window(after), days_macro());
  CHECK(e.improvement == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(e.difference == doctest::Approx(-2.5).epsilon(1e-12));
  CHECK(e.median_before == 11.5);
  CHECK(e.median_after == 9.0);
  CHECK(e.mean_before == doctest::Approx(11.5));
  REQUIRE(e.relative_improvement);
  CHECK(*e.relative_improvement == doctest::Approx(2.5 / 11.5));
  CHECK(e.ci_low < -2.5);
  CHECK(e.ci_high > -2.5);

  // The same change on a maximized KPI is a loss.
  const auto m = evaluate_intervention(numeric_window(before), numeric_window(after), days_macro(Direction::maximize));
  CHECK(m.improvement == doctest::Approx(-2.5).epsilon(1e-12));
  CHECK_FALSE(m.improved());
}

TEST_CASE("bootstrap interval is deterministic under a seed") {
  const auto b = numeric_window({3, 5, 8, 1, 9, 4, 4, 7});
  const auto a = numeric_window({2, 6, 3, 1, 4, 2, 5});
  const auto e1 = evaluate_intervention(b, a, days_macro(), {1000, 0.95, 77});
  const auto e2 = evaluate_intervention(b, a, days_macro(), {1000, 0.95, 77});
  CHECK(e1 == e2);
  CHECK(e1.to_json() == e2.to_json());
  CHECK(EffectSummary::from_json(e1.to_json()) == e1);
  const auto e3 = evaluate_intervention(b, a, days_macro(), {1000, 0.95, 78});
  CHECK(e3.ci_low != e1.ci_low);
  const auto narrow = evaluate_intervention(b, a, days_macro(), {1000, 0.5, 77});
  CHECK(narrow.ci_high - narrow.ci_low < e1.ci_high - e1.ci_low);
}

TEST_CASE("intervention errors") {
  TableBuilder builder{Schema({{"x", ColumnKind::numeric, ColumnRole::feature},
                               {"days", ColumnKind::numeric, ColumnRole::target},
                               {"cost", ColumnKind::numeric, ColumnRole::ignored}})};
  const std::vector<std::string> row{"1", "4", ""};
  builder.add_row(row);
  const auto t = std::move(builder).build();
  auto cost = days_macro();
  cost.target_column = "cost";
  CHECK(code_of([&] { evaluate_intervention(t, t, cost); }) == ErrorCode::EmptyWindow);
  auto absent = days_macro();
  absent.target_column = "backlog";
  CHECK(code_of([&] { evaluate_intervention(t, t, absent); }) == ErrorCode::MissingColumn);
  CHECK(code_of([&] { evaluate_intervention(t, t, days_macro(), {0, 0.95, 1}); }) == ErrorCode::InvalidParams);
}

TEST_CASE("a 20 percent reduction is estimated within 10 to 30 percent") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto spec = scenarios::drift_spec(500 + s, 200);
    const auto before = generate(spec).first;
    const auto reduced = shift_window(scenarios::next_window(spec, 9), {MutationKind::scale_target, 0.8});
    const auto after = generate(reduced).first;
    MacroKpi macro = days_macro();
    macro.target_column = "duration";
    const auto e = evaluate_intervention(before, after, macro, {1000, 0.95, s});
    REQUIRE(e.relative_ci_low);
    CHECK(*e.relative_ci_low >= 0.10);
    CHECK(*e.relative_ci_high <= 0.30);
    CHECK(*e.relative_improvement == doctest::Approx(0.2).epsilon(0.25));
    CHECK(e.improved());
  }
}
