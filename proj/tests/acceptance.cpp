// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and pass counts are fixed below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "kpiforge/cart.hpp"
#include "kpiforge/cli.hpp"
#include "kpiforge/error.hpp"
#include "kpiforge/forest.hpp"
#include "kpiforge/importance.hpp"
#include "kpiforge/kpi.hpp"
#include "kpiforge/monitor.hpp"
#include "kpiforge/synth.hpp"
#include "kpiforge/tabular.hpp"
#include "oracles.hpp"
#include "random_tables.hpp"
#include "scenarios.hpp"

using namespace kpiforge;
namespace fs = std::filesystem;

namespace {

constexpr double kSplitDeltaTol = 1e-12;
constexpr double kTelescopeTol = 1e-9;  // relative to n_root * I(root)
constexpr double kMdiSumTol = 1e-12;
constexpr double kSplitSearchBudget = 10.0;  // seconds
constexpr double kRecoveryBudget = 60.0;     // seconds
constexpr double kOobLow = 0.30, kOobHigh = 0.44;
constexpr int kRecoveryPasses = 18, kDerivePasses = 18, kDriftPasses = 19, kRuns = 20;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, pattern, args...);
  return buf;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("kpiforge_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Classification spec: two informative features (2.0, 1.0), three noise
// columns, 5% label noise.
GeneratorSpec recovery_spec(std::uint64_t seed) {
  GeneratorSpec spec;
  spec.n_rows = 500;
  spec.seed = seed;
  spec.target.name = "outcome";
  spec.target.task = TaskKind::classification;
  spec.target.classes = 2;
  spec.target.noise_rate = 0.05;
  spec.features.push_back({"x1", ColumnKind::numeric, FeatureGenerator::informative, 2.0});
  spec.features.push_back({"x2", ColumnKind::numeric, FeatureGenerator::informative, 1.0});
  for (int j = 1; j <= 3; ++j) spec.features.push_back({"n" + std::to_string(j), ColumnKind::numeric});
  return spec;
}

// ---------------------------------------------------------------------------

Outcome split_search_oracle() {
  const auto start = std::chrono::steady_clock::now();
  Rng rng(20250101);
  int matched = 0;
  std::string first_miss;
  for (int trial = 0; trial < 100; ++trial) {
    const auto task = trial % 2 == 0 ? TaskKind::classification : TaskKind::regression;
    const std::size_t n = 2 + rng.uniform_index(49);  // <= 50 rows
    const std::size_t p = 1 + rng.uniform_index(5);   // <= 5 features
    const auto table = testing::random_table(rng, n, p, task);
    const auto criterion = task == TaskKind::regression ? SplitCriterion::variance
                                                        : (trial % 4 == 1 ? SplitCriterion::entropy : SplitCriterion::gini);
    std::vector<std::size_t> rows(n), cand(p);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    for (std::size_t j = 0; j < p; ++j) cand[j] = j;
    const auto got = best_split(table, rows, cand, criterion);
    const auto want = oracle::brute_force_split(table.feature_view(), table.target_view(), rows, cand, criterion);
    bool ok = got.has_value() == want.has_value();
    if (ok && got) {
      ok = got->feature == want->feature && got->kind == want->kind &&
           (got->kind == ColumnKind::numeric ? got->threshold == want->threshold : got->category == want->category) &&
           std::abs(got->impurity_decrease - want->delta) <= kSplitDeltaTol;
    }
    if (ok) {
      ++matched;
    } else if (first_miss.empty()) {
      first_miss = " first mismatch at table " + std::to_string(trial);
    }
  }
  const double t = seconds_since(start);
  return {matched == 100 && t < kSplitSearchBudget,
          fmt("%d/100 tables match brute force (delta tol %g), %.2f s of %.0f s%s", matched, kSplitDeltaTol, t,
              kSplitSearchBudget, first_miss.c_str())};
}

Outcome mdi_identities() {
  const auto table = generate(recovery_spec(7)).first;
  ForestParams params;
  params.n_trees = 100;
  params.master_seed = 7;
  const auto forest = fit_forest(table, params);
  double worst = 0.0;
  for (const auto& tree : forest.trees()) {
    double lhs = 0.0, leaves = 0.0;
    for (const auto& node : tree.nodes) {
      if (node.is_leaf()) {
        leaves += static_cast<double>(node.n_samples) * node.impurity;
      } else {
        lhs += static_cast<double>(node.n_samples) * node.impurity_decrease;
      }
    }
    const auto& root = tree.nodes.front();
    const double rhs = static_cast<double>(root.n_samples) * root.impurity - leaves;
    worst = std::max(worst, std::abs(lhs - rhs) / std::max(1.0, std::abs(rhs)));
  }
  const auto scores = mdi(forest);
  double sum = 0.0;
  for (const double v : scores.normalized) sum += v;
  const double sum_err = std::abs(sum - 1.0);
  return {worst <= kTelescopeTol && sum_err <= kMdiSumTol,
          fmt("worst telescoping error %.3g (tol %g) over %zu trees; |sum normalized - 1| = %.3g (tol %g)", worst,
              kTelescopeTol, forest.trees().size(), sum_err, kMdiSumTol)};
}

Outcome permutation_exact_zero() {
  // Append a constant column to a synthetic window.
  const auto [base, truth] = generate(recovery_spec(11));
  auto specs = base.schema().columns();
  specs.insert(specs.end() - 1, ColumnSpec{"constant", ColumnKind::numeric, ColumnRole::feature});
  TableBuilder builder{Schema(specs)};
  for (std::size_t r = 0; r < base.n_rows(); ++r) {
    std::vector<std::string> cells;
    for (std::size_t c = 0; c + 1 < base.n_columns(); ++c) cells.push_back(format_real(base.column(c).values[r]));
    cells.push_back("4.25");
    cells.push_back(base.target().dictionary[static_cast<std::size_t>(base.target().code(r))]);
    builder.add_row(cells);
  }
  const auto table = std::move(builder).build();
  ForestParams params;
  params.n_trees = 100;
  params.master_seed = 11;
  const auto forest = fit_forest(table, params);
  PermutationSettings settings;
  settings.repeats = 20;
  settings.seed = 11;
  const auto scores = permutation_importance(forest, table, settings);
  const std::size_t j = table.n_features() - 1;
  std::size_t zeros = 0;
  for (const double d : scores.drops[j]) zeros += d == 0.0;
  return {zeros == settings.repeats,
          fmt("constant column: %zu/%zu repeats with drop exactly 0", zeros, settings.repeats)};
}

Outcome ground_truth_recovery() {
  const auto start = std::chrono::steady_clock::now();
  int passes = 0;
  for (std::uint64_t s = 0; s < kRuns; ++s) {
    const auto spec = recovery_spec(100 + s);
    const auto table = generate(spec).first;
    ForestParams params;
    params.n_trees = 100;
    params.master_seed = s;
    const auto forest = fit_forest(table, params);
    PermutationSettings settings;
    settings.seed = s;
    const auto ranks = importance_report(forest, table, settings).perm_ranks();
    passes += std::max(ranks[0], ranks[1]) <= 2;
  }
  const double t = seconds_since(start);
  return {passes >= kRecoveryPasses && t < kRecoveryBudget,
          fmt("both informative features above all noise in %d/%d runs (need %d), %.1f s of %.0f s", passes, kRuns,
              kRecoveryPasses, t, kRecoveryBudget)};
}

Outcome parallel_determinism() {
  const auto dir = scratch("determinism");
  const std::size_t max_workers = std::max<std::size_t>(resolve_workers(0), 8);
  int identical = 0;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto table = generate(recovery_spec(300 + s)).first;
    ForestParams params;
    params.n_trees = 60;
    params.master_seed = s;
    std::string model_bytes[2], report_bytes[2];
    const std::size_t workers[2] = {1, max_workers};
    for (int w = 0; w < 2; ++w) {
      const auto forest = fit_forest(table, params, {workers[w]});
      const auto model_path = dir / fmt("model-%llu-%zu.json", static_cast<unsigned long long>(s), workers[w]);
      forest.save(model_path);
      model_bytes[w] = slurp(model_path);
      PermutationSettings settings;
      settings.seed = s;
      settings.workers = workers[w];
      const auto report_path = dir / fmt("report-%llu-%zu.json", static_cast<unsigned long long>(s), workers[w]);
      importance_report(forest, table, settings).save(report_path);
      report_bytes[w] = slurp(report_path);
    }
    identical += model_bytes[0] == model_bytes[1] && report_bytes[0] == report_bytes[1];
  }
  return {identical == 5, fmt("1 vs %zu workers: model and report files byte-identical for %d/5 seeds "
                              "(hardware threads: %zu)",
                              max_workers, identical, resolve_workers(0))};
}

Outcome oob_rate() {
  Rng rng(66);
  const std::size_t sizes[] = {100, 250, 1000};
  double lo = 1.0, hi = 0.0;
  for (const auto n : sizes) {
    const auto table = testing::random_table(rng, n, 3, TaskKind::regression);
    ForestParams params;
    params.n_trees = 100;
    params.master_seed = n;
    const auto forest = fit_forest(table, params);
    // Straight from the in-bag counts, independent of the evaluator.
    double total = 0.0;
    for (const auto& counts : forest.inbag()) {
      const auto out = std::count(counts.begin(), counts.end(), 0u);
      total += static_cast<double>(out) / static_cast<double>(n);
    }
    const double mean = total / static_cast<double>(forest.inbag().size());
    lo = std::min(lo, mean);
    hi = std::max(hi, mean);
  }
  return {lo >= kOobLow && hi <= kOobHigh,
          fmt("mean per-tree OOB fraction in [%.4f, %.4f] for n = 100, 250, 1000 (bounds [%.2f, %.2f], 1/e = %.4f)",
              lo, hi, kOobLow, kOobHigh, std::exp(-1.0))};
}

Outcome derivation_filter() {
  const MacroKpi macro{"outcome", "Outcome", "", "outcome", Direction::maximize, "", ""};
  int passes = 0;
  for (std::uint64_t s = 0; s < kRuns; ++s) {
    const auto spec = recovery_spec(700 + s);
    const auto [table, truth] = generate(spec);
    ForestParams params;
    params.n_trees = 100;
    params.master_seed = s;
    const auto forest = fit_forest(table, params);
    PermutationSettings settings;
    settings.seed = s;
    auto report = importance_report(forest, table, settings);
    StabilitySettings st;
    st.seeds = stability_seeds(s, 10);
    st.top_k = truth.informative.size();
    attach_stability(report, stability_selection(table, params, st));

    // Thresholds from the generator: half the weakest informative feature's
    // expected drop, and a stability floor.
    double weakest = std::numeric_limits<double>::infinity();
    for (const auto& name : truth.informative) weakest = std::min(weakest, truth.expected_drop_of(name));
    const DeriveThresholds thresholds{0.5 * weakest, 0.8, std::nullopt};
    const auto candidates = derive_micro_kpis(report, report_stability(report), macro, thresholds);
    std::set<std::string> got, want(truth.informative.begin(), truth.informative.end());
    for (const auto& c : candidates) got.insert(c.feature_set.front());
    passes += got == want;
  }
  return {passes >= kDerivePasses,
          fmt("derived set equals the informative set in %d/%d runs (need %d)", passes, kRuns, kDerivePasses)};
}

Outcome drift_detection() {
  const auto dir = scratch("drift");
  int swapped_hits = 0, control_quiet = 0;
  double worst_swap_rho = -1.0, worst_control_rho = 1.0;
  for (std::uint64_t s = 0; s < kRuns; ++s) {
    const auto run_dir = dir / std::to_string(s);
    fs::create_directories(run_dir);
    const auto spec = scenarios::drift_spec(2000 + s);
    std::ofstream(run_dir / "spec.kv") << spec.to_kv();
    std::ofstream(run_dir / "project.kv") << "[paths]\nschema = base.schema.kv\ndata = base.csv\n"
                                          << "[forest]\nseed = " << s << "\n"
                                          << "[importance]\nseed = " << s << "\nstability_runs = 0\n"
                                          << "[monitor]\ntop_k = " << scenarios::kDriftTopK << "\n";
    std::ostringstream out, err;
    auto cli = [&](std::vector<std::string> args) {
      args.insert(args.begin(), {"--config", (run_dir / "project.kv").string()});
      return run(args, out, err);
    };
    const auto spec_path = (run_dir / "spec.kv").string();
    const auto window_seed = std::to_string(scenarios::next_window(spec, 1).seed);
    const bool ok =
        cli({"synth", spec_path, "--out", (run_dir / "base.csv").string()}) == 0 &&
        cli({"synth", spec_path, "--out", (run_dir / "control.csv").string(), "--seed", window_seed}) == 0 &&
        cli({"synth", spec_path, "--out", (run_dir / "swapped.csv").string(), "--seed", window_seed, "--mutate",
             "swap"}) == 0 &&
        cli({"train"}) == 0 && cli({"importance"}) == 0;
    if (!ok) return {false, "pipeline failed: " + err.str()};
    const auto baseline = (run_dir / "reports" / "importance.json").string();
    const int swap_code = cli({"monitor", "--baseline", baseline, "--data", (run_dir / "swapped.csv").string(),
                               "--out", (run_dir / "swapped-drift.json").string()});
    const int control_code = cli({"monitor", "--baseline", baseline, "--data", (run_dir / "control.csv").string(),
                                  "--out", (run_dir / "control-drift.json").string()});
    const auto swap_rho = DriftReport::load(run_dir / "swapped-drift.json").spearman_rho;
    const auto control_rho = DriftReport::load(run_dir / "control-drift.json").spearman_rho;
    worst_swap_rho = std::max(worst_swap_rho, swap_rho);
    worst_control_rho = std::min(worst_control_rho, control_rho);
    swapped_hits += swap_code == kExitRefresh && swap_rho < 0.7;
    control_quiet += control_code == kExitOk;
  }
  return {swapped_hits >= kDriftPasses && control_quiet == kRuns,
          fmt("swapped windows: exit 3 with rho < 0.7 in %d/%d (need %d, max rho %.3f); "
              "control windows: exit 0 in %d/%d (min rho %.3f)",
              swapped_hits, kRuns, kDriftPasses, worst_swap_rho, control_quiet, kRuns, worst_control_rho)};
}

Outcome registry_event_sourcing() {
  Rng rng(909);
  KpiRegistry reg;
  reg.register_macro({"m1", "Macro one", "", "y", Direction::minimize, "", ""}, "setup", "t");
  reg.register_macro({"m2", "Macro two", "", "z", Direction::maximize, "", ""}, "setup", "t");
  std::map<std::string, std::pair<std::string, CandidateStatus>> model;  // id -> (macro, status)
  std::size_t next = 1;
  auto new_id = [&] { return fmt("mk-%04zu", next++); };
  int valid = 0, invalid = 0, rejected = 0, replay_ok = 0;
  while (valid < 100) {
    std::vector<std::string> ids;
    for (const auto& [id, st] : model) ids.push_back(id);
    const auto pick = [&] { return ids[rng.uniform_index(ids.size())]; };
    const auto before = reg;
    const auto op = ids.size() < 2 ? 0 : rng.uniform_index(4);
    bool should_succeed = true;
    std::function<void()> apply_model;
    std::function<void()> action;
    if (op == 0) {
      MicroKpiCandidate c;
      c.macro_kpi_id = rng.bernoulli(0.5) ? "m1" : "m2";
      c.feature_set = {"f" + std::to_string(rng.uniform_index(5))};
      c.perm_mean = {rng.uniform01()};
      c.stability = {rng.uniform01()};
      action = [&, c] { reg.propose({c}, "bot", "t"); };
      apply_model = [&, c] { model[new_id()] = {c.macro_kpi_id, CandidateStatus::proposed}; };
    } else if (op <= 2) {
      const auto id = pick();
      should_succeed = model[id].second == CandidateStatus::proposed;
      const auto decision = op == 1 ? Decision::confirmed : Decision::rejected;
      action = [&, id, decision] { reg.record_decision(id, decision, "bot", "", "t"); };
      apply_model = [&, id, op] { model[id].second = op == 1 ? CandidateStatus::confirmed : CandidateStatus::rejected; };
    } else {
      const auto a = pick(), b = pick();
      should_succeed = a != b && model[a].first == model[b].first &&
                       model[a].second == CandidateStatus::proposed && model[b].second == CandidateStatus::proposed;
      action = [&, a, b] { reg.merge_candidates({a, b}, "joint", "bot", "t"); };
      apply_model = [&, a, b] {
        model[a].second = CandidateStatus::merged;
        model[b].second = CandidateStatus::merged;
        model[new_id()] = {model[a].first, CandidateStatus::proposed};
      };
    }
    bool threw = false;
    try {
      action();
    } catch (const Error&) {
      threw = true;
    }
    if (should_succeed) {
      if (threw) return {false, "a valid operation was rejected"};
      apply_model();
      ++valid;
    } else {
      ++invalid;
      rejected += threw && reg == before;
    }
    replay_ok += KpiRegistry::replay(reg.ledger()) == reg;
  }
  bool model_ok = true;
  for (const auto& [id, st] : model) {
    const auto* c = reg.find_candidate(id);
    model_ok = model_ok && c != nullptr && c->macro_kpi_id == st.first && c->status == st.second;
  }
  const int steps = valid + invalid;
  const bool pass = replay_ok == steps && rejected == invalid && invalid > 0 && model_ok &&
                    KpiRegistry::from_json(reg.to_json()) == reg;
  return {pass, fmt("%d valid operations, fold(ledger) == live after %d/%d steps; %d/%d invalid transitions "
                    "rejected without effect; status model %s",
                    valid, replay_ok, steps, rejected, invalid, model_ok ? "agrees" : "disagrees")};
}

Outcome round_trips() {
  const auto dir = scratch("roundtrip");
  Rng rng(1010);
  int models_ok = 0, tables_ok = 0;
  constexpr int kCases = 10;
  for (int i = 0; i < kCases; ++i) {
    const auto task = i % 2 == 0 ? TaskKind::classification : TaskKind::regression;
    const auto table = testing::random_table(rng, 40 + rng.uniform_index(200), 1 + rng.uniform_index(6), task);

    const auto csv = dir / fmt("table-%d.csv", i);
    write_table(csv, table);
    tables_ok += load_table(csv, table.schema()) == table;

    ForestParams params;
    params.n_trees = 25;
    params.master_seed = static_cast<std::uint64_t>(i);
    const auto forest = fit_forest(table, params);
    const auto path = dir / fmt("model-%d.json", i);
    forest.save(path);
    const auto loaded = ForestModel::load(path);
    const auto a = forest.predict(table);
    const auto b = loaded.predict(table);
    models_ok += a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0 &&
                 loaded.serialize() == forest.serialize();
  }
  return {models_ok == kCases && tables_ok == kCases,
          fmt("model save/load bitwise predictions %d/%d; CSV write/read identity %d/%d", models_ok, kCases,
              tables_ok, kCases)};
}

}  // namespace

int main() {
  const std::pair<const char*, Outcome (*)()> criteria[] = {
      {"split search equals brute force", split_search_oracle},
      {"MDI identities", mdi_identities},
      {"permutation exact zero", permutation_exact_zero},
      {"ground-truth recovery", ground_truth_recovery},
      {"determinism under parallelism", parallel_determinism},
      {"OOB rate", oob_rate},
      {"derivation filter", derivation_filter},
      {"drift detection", drift_detection},
      {"registry event sourcing", registry_event_sourcing},
      {"round trips", round_trips},
  };
  int failures = 0;
  int index = 1;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", index++, name, o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  return failures == 0 ? 0 : 1;
}
