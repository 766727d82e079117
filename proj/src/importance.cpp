#include "kpiforge/importance.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "kpiforge/error.hpp"
#include "kpiforge/hash.hpp"
#include "kpiforge/rng.hpp"

namespace kpiforge {

using nlohmann::json;

namespace {

constexpr int kReportFormatVersion = 1;
constexpr std::string_view kReportFormat = "kpiforge-importance";

}  // namespace

MdiScores mdi(const ForestModel& forest) {
  const std::size_t p = forest.n_features();
  MdiScores out{std::vector<double>(p, 0.0), std::vector<double>(p, 0.0)};
  if (forest.trees().empty()) return out;
  for (const auto& tree : forest.trees()) {
    const double root = static_cast<double>(tree.nodes.front().n_samples);
    std::vector<double> per_tree(p, 0.0);
    for (const auto& node : tree.nodes) {
      if (node.is_leaf()) continue;
      per_tree[static_cast<std::size_t>(node.feature)] +=
          static_cast<double>(node.n_samples) / root * node.impurity_decrease;
    }
    for (std::size_t j = 0; j < p; ++j) out.raw[j] += per_tree[j];
  }
  const double trees = static_cast<double>(forest.trees().size());
  for (auto& v : out.raw) v /= trees;
  const double total = std::accumulate(out.raw.begin(), out.raw.end(), 0.0);
  if (total > 0.0) {
    for (std::size_t j = 0; j < p; ++j) out.normalized[j] = out.raw[j] / total;
  }
  return out;
}

PermutationScores permutation_importance(const ForestModel& forest, const Table& table,
                                         const PermutationSettings& settings) {
  if (settings.repeats == 0) throw Error(ErrorCode::RepeatsZero, "permutation repeats must be >= 1");
  const auto encoded = forest.encode(table);
  const FeatureView features = encoded.features();
  const EnsembleEvaluator evaluator(forest, features, encoded.targets(), settings.mode);

  PermutationScores out;
  out.baseline = evaluator.baseline();
  const std::size_t p = features.n_features();
  const std::size_t n = features.n_rows;
  const std::size_t repeats = settings.repeats;
  out.drops.assign(p, std::vector<double>(repeats, 0.0));

  parallel_for(p * repeats, settings.workers, [&](std::size_t task) {
    const std::size_t j = task / repeats;
    const std::size_t r = task % repeats;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(settings.seed, {j, r}));
    rng.shuffle(std::span<std::size_t>(order));
    if (settings.order_hook) settings.order_hook(order, j, r);
    std::vector<double> permuted(n);
    for (std::size_t i = 0; i < n; ++i) permuted[i] = features.at(j, order[i]);
    out.drops[j][r] = out.baseline.primary() - evaluator.with_column(j, permuted).primary();
  });

  out.mean.assign(p, 0.0);
  out.std.assign(p, 0.0);
  for (std::size_t j = 0; j < p; ++j) {
    const auto& d = out.drops[j];
    out.mean[j] = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(repeats);
    if (repeats > 1) {
      double ss = 0.0;
      for (double v : d) ss += (v - out.mean[j]) * (v - out.mean[j]);
      out.std[j] = std::sqrt(ss / static_cast<double>(repeats - 1));
    }
  }
  return out;
}

std::vector<std::size_t> rank_descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<std::size_t> ranks(scores.size());
  for (std::size_t pos = 0; pos < order.size(); ++pos) ranks[order[pos]] = pos + 1;
  return ranks;
}

double spearman_rho(std::span<const std::size_t> ranks_a, std::span<const std::size_t> ranks_b) {
  if (ranks_a.size() != ranks_b.size()) {
    throw Error(ErrorCode::FeatureSetMismatch, "rank vectors differ in length");
  }
  const std::size_t p = ranks_a.size();
  if (p < 2) throw Error(ErrorCode::TooFewFeatures, "rank correlation needs at least 2 features");
  double d2 = 0.0;
  for (std::size_t i = 0; i < p; ++i) {
    const double d = static_cast<double>(ranks_a[i]) - static_cast<double>(ranks_b[i]);
    d2 += d * d;
  }
  const double pd = static_cast<double>(p);
  return 1.0 - 6.0 * d2 / (pd * (pd * pd - 1.0));
}

// ---------------------------------------------------------------- report

std::vector<std::string> ImportanceReport::feature_names() const {
  std::vector<std::string> names;
  for (const auto& f : features) names.push_back(f.name);
  return names;
}

std::optional<std::size_t> ImportanceReport::index_of(std::string_view name) const {
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j].name == name) return j;
  }
  return std::nullopt;
}

std::vector<std::size_t> ImportanceReport::perm_ranks() const {
  std::vector<std::size_t> r;
  for (const auto& f : features) r.push_back(f.rank_perm);
  return r;
}

std::vector<std::size_t> ImportanceReport::mdi_ranks() const {
  std::vector<std::size_t> r;
  for (const auto& f : features) r.push_back(f.rank_mdi);
  return r;
}

std::string ImportanceReport::to_json() const {
  json feats = json::array();
  for (const auto& f : features) {
    json jf{{"name", f.name},
            {"mdi_raw", f.mdi_raw},
            {"mdi_normalized", f.mdi_normalized},
            {"perm_mean", f.perm_mean},
            {"perm_std", f.perm_std},
            {"perm_drops", f.perm_drops},
            {"rank_mdi", f.rank_mdi},
            {"rank_perm", f.rank_perm}};
    if (f.stability) jf["stability"] = *f.stability;
    feats.push_back(std::move(jf));
  }
  json doc{{"format", kReportFormat},
           {"format_version", kReportFormatVersion},
           {"forest_fingerprint", forest_fingerprint},
           {"data_checksum", data_checksum},
           {"target", target},
           {"task", to_string(task)},
           {"mode", to_string(mode)},
           {"seed", seed},
           {"repeats", repeats},
           {"n_rows", n_rows},
           {"metric", metric},
           {"baseline_metric", baseline_metric},
           {"features", std::move(feats)}};
  if (stability) doc["stability"] = {{"top_k", stability->top_k}, {"seeds", stability->seeds}};
  return doc.dump(2) + "\n";
}

ImportanceReport ImportanceReport::from_json(std::string_view text, std::string_view origin) {
  const std::string where(origin);
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != kReportFormat) {
      throw Error(ErrorCode::CorruptFile, "not an importance report", where);
    }
    if (doc.at("format_version").get<int>() != kReportFormatVersion) {
      throw Error(ErrorCode::UnsupportedVersion, "unsupported importance report version", where);
    }
    ImportanceReport r;
    r.forest_fingerprint = doc.at("forest_fingerprint").get<std::string>();
    r.data_checksum = doc.at("data_checksum").get<std::string>();
    r.target = doc.at("target").get<std::string>();
    r.task = doc.at("task").get<std::string>() == "regression" ? TaskKind::regression : TaskKind::classification;
    r.mode = doc.at("mode").get<std::string>() == "holdout" ? EvalMode::holdout : EvalMode::oob;
    r.seed = doc.at("seed").get<std::uint64_t>();
    r.repeats = doc.at("repeats").get<std::size_t>();
    r.n_rows = doc.at("n_rows").get<std::size_t>();
    r.metric = doc.at("metric").get<std::string>();
    r.baseline_metric = doc.at("baseline_metric").get<double>();
    for (const auto& jf : doc.at("features")) {
      FeatureImportance f;
      f.name = jf.at("name").get<std::string>();
      f.mdi_raw = jf.at("mdi_raw").get<double>();
      f.mdi_normalized = jf.at("mdi_normalized").get<double>();
      f.perm_mean = jf.at("perm_mean").get<double>();
      f.perm_std = jf.at("perm_std").get<double>();
      f.perm_drops = jf.at("perm_drops").get<std::vector<double>>();
      f.rank_mdi = jf.at("rank_mdi").get<std::size_t>();
      f.rank_perm = jf.at("rank_perm").get<std::size_t>();
      if (jf.contains("stability")) f.stability = jf.at("stability").get<double>();
      r.features.push_back(std::move(f));
    }
    if (doc.contains("stability")) {
      r.stability = StabilityInfo{doc.at("stability").at("top_k").get<std::size_t>(),
                                  doc.at("stability").at("seeds").get<std::vector<std::uint64_t>>()};
    }
    const std::size_t p = r.features.size();
    std::set<std::size_t> perm, mdi_r;
    for (const auto& f : r.features) {
      perm.insert(f.rank_perm);
      mdi_r.insert(f.rank_mdi);
    }
    if (p == 0 || perm.size() != p || mdi_r.size() != p || *perm.begin() != 1 || *perm.rbegin() != p ||
        *mdi_r.begin() != 1 || *mdi_r.rbegin() != p) {
      throw Error(ErrorCode::CorruptFile, "feature ranks are not a permutation of 1..p", where);
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("malformed importance report: ") + e.what(), where);
  }
}

void ImportanceReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write report", path.string());
  out << to_json();
  if (!out) throw Error(ErrorCode::IoError, "write failed", path.string());
}

ImportanceReport ImportanceReport::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open report", path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str(), path.string());
}

std::string ImportanceReport::format_text() const {
  std::size_t width = 7;
  for (const auto& f : features) width = std::max(width, f.name.size());
  std::vector<std::size_t> order(features.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return features[a].rank_perm < features[b].rank_perm; });

  std::string out;
  char line[512];
  std::snprintf(line, sizeof line, "# forest %s  mode %s  baseline %s %.6f  repeats %zu  seed %llu\n",
                forest_fingerprint.c_str(), std::string(to_string(mode)).c_str(), metric.c_str(), baseline_metric,
                repeats, static_cast<unsigned long long>(seed));
  out += line;
  const int w = static_cast<int>(width);
  std::snprintf(line, sizeof line, "%4s  %-*s  %12s  %12s  %8s  %8s  %9s\n", "rank", w, "feature", "perm_mean",
                "perm_std", "mdi_norm", "rank_mdi", "stability");
  out += line;
  for (const auto j : order) {
    const auto& f = features[j];
    char stab[32] = "-";
    if (f.stability) std::snprintf(stab, sizeof stab, "%.2f", *f.stability);
    std::snprintf(line, sizeof line, "%4zu  %-*s  %12.6f  %12.6f  %8.4f  %8zu  %9s\n", f.rank_perm, w,
                  f.name.c_str(), f.perm_mean, f.perm_std, f.mdi_normalized, f.rank_mdi, stab);
    out += line;
  }
  return out;
}

std::string ImportanceReport::fingerprint() const {
  Fnv1a h;
  const auto text = to_json();
  h.bytes(text.data(), text.size());
  return hex64(h.state);
}

ImportanceReport importance_report(const ForestModel& forest, const Table& table,
                                   const PermutationSettings& settings) {
  const auto scores = mdi(forest);
  const auto perm = permutation_importance(forest, table, settings);
  const auto rank_m = rank_descending(scores.raw);
  const auto rank_p = rank_descending(perm.mean);

  ImportanceReport report;
  report.forest_fingerprint = forest.fingerprint();
  report.data_checksum = hex64(table.checksum());
  report.target = forest.schema().target.name;
  report.task = forest.task();
  report.mode = settings.mode;
  report.seed = settings.seed;
  report.repeats = settings.repeats;
  report.n_rows = table.n_rows();
  report.metric = std::string(perm.baseline.primary_name());
  report.baseline_metric = perm.baseline.primary();
  const auto names = forest.schema().feature_names();
  for (std::size_t j = 0; j < names.size(); ++j) {
    FeatureImportance f;
    f.name = names[j];
    f.mdi_raw = scores.raw[j];
    f.mdi_normalized = scores.normalized[j];
    f.perm_mean = perm.mean[j];
    f.perm_std = perm.std[j];
    f.perm_drops = perm.drops[j];
    f.rank_mdi = rank_m[j];
    f.rank_perm = rank_p[j];
    report.features.push_back(std::move(f));
  }
  return report;
}

double compare_measures(const ImportanceReport& report) {
  const auto a = report.mdi_ranks();
  const auto b = report.perm_ranks();
  return spearman_rho(a, b);
}

std::vector<std::uint64_t> stability_seeds(std::uint64_t base, std::size_t n) {
  std::vector<std::uint64_t> seeds;
  for (std::size_t i = 0; i < n; ++i) seeds.push_back(derive_seed(base, {i}));
  return seeds;
}

StabilityResult stability_selection(const Table& table, const ForestParams& params,
                                    const StabilitySettings& settings) {
  const auto& seeds = settings.seeds;
  if (seeds.size() < 2) throw Error(ErrorCode::InvalidParams, "stability selection needs at least 2 seeds");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw Error(ErrorCode::SeedCollision, "stability selection seeds must be distinct");
  }
  const std::size_t p = table.n_features();
  if (settings.top_k < 1 || settings.top_k > p) {
    throw Error(ErrorCode::InvalidParams,
                "top_k=" + std::to_string(settings.top_k) + " must lie in [1, " + std::to_string(p) + "]");
  }
  std::vector<std::size_t> selected(p, 0);
  for (const auto seed : seeds) {
    ForestParams run = params;
    run.master_seed = seed;
    const auto forest = fit_forest(table, run, {settings.workers});
    PermutationSettings perm;
    perm.repeats = settings.repeats;
    perm.seed = seed;
    perm.workers = settings.workers;
    const auto scores = permutation_importance(forest, table, perm);
    const auto ranks = rank_descending(scores.mean);
    for (std::size_t j = 0; j < p; ++j) {
      if (ranks[j] <= settings.top_k) ++selected[j];
    }
  }
  StabilityResult out;
  out.features = table.feature_names();
  for (const auto s : selected) out.frequency.push_back(static_cast<double>(s) / static_cast<double>(seeds.size()));
  out.info = StabilityInfo{settings.top_k, seeds};
  return out;
}

void attach_stability(ImportanceReport& report, const StabilityResult& stability) {
  if (report.feature_names() != stability.features) {
    throw Error(ErrorCode::FeatureSetMismatch, "stability features differ from the report's features");
  }
  for (std::size_t j = 0; j < report.features.size(); ++j) report.features[j].stability = stability.frequency[j];
  report.stability = stability.info;
}

}  // namespace kpiforge
