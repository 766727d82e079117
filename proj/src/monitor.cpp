#include "kpiforge/monitor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "kpiforge/error.hpp"
#include "kpiforge/rng.hpp"

namespace kpiforge {

using nlohmann::json;

namespace {

constexpr const char* kDriftFormat = "kpiforge-drift";
constexpr const char* kEffectFormat = "kpiforge-effect";
constexpr int kFormatVersion = 1;

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write report", path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed", path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open report", path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void check_header(const json& doc, const char* format, const std::string& where) {
  if (doc.at("format").get<std::string>() != format) {
    throw Error(ErrorCode::CorruptFile, std::string("not a ") + format + " file", where);
  }
  if (doc.at("format_version").get<int>() != kFormatVersion) {
    throw Error(ErrorCode::UnsupportedVersion, std::string("unsupported ") + format + " version", where);
  }
}

std::vector<std::size_t> top_set(std::span<const std::size_t> ranks, std::size_t k) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < ranks.size(); ++j) {
    if (ranks[j] <= k) out.push_back(j);
  }
  return out;
}

std::vector<double> target_values(const Table& table, const std::string& column, const char* window) {
  const auto index = table.schema().index_of(column);
  if (!index) throw Error(ErrorCode::MissingColumn, std::string(window) + " window has no column '" + column + "'");
  const Column& col = table.column(*index);
  if (col.spec.kind != ColumnKind::numeric) {
    throw Error(ErrorCode::SchemaMismatch, "macro-KPI column '" + column + "' is not numeric");
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < col.values.size(); ++i) {
    if (!col.missing[i]) out.push_back(col.values[i]);
  }
  if (out.empty()) throw Error(ErrorCode::EmptyWindow, std::string(window) + " window has no values for '" + column + "'");
  return out;
}

double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (const double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Linear interpolation between order statistics (the common "type 7" rule).
double quantile_sorted(std::span<const double> sorted, double q) {
  const double h = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double resample_mean(Rng& rng, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[rng.uniform_index(v.size())];
  return s / static_cast<double>(v.size());
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& v) {
  if (v.is_null()) return std::nullopt;
  return v.get<double>();
}

std::string fmt(const char* pattern, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, value);
  return buf;
}

}  // namespace

DriftReport detect_drift(const ImportanceReport& baseline, const ImportanceReport& fresh, std::size_t top_k,
                         double rho_threshold) {
  const std::size_t p = baseline.features.size();
  if (fresh.features.size() != p) {
    throw Error(ErrorCode::FeatureSetMismatch, "reports cover " + std::to_string(p) + " and " +
                                                   std::to_string(fresh.features.size()) + " features");
  }
  if (top_k > p) throw Error(ErrorCode::InvalidParams, "top_k exceeds the number of features");
  if (!std::isfinite(rho_threshold) || rho_threshold < -1.0 || rho_threshold > 1.0) {
    throw Error(ErrorCode::ThresholdInvalid, "rho threshold must lie in [-1, 1]");
  }

  // Bring the fresh ranks into baseline feature order.
  std::vector<std::size_t> base_perm(p), fresh_perm(p), base_mdi(p), fresh_mdi(p);
  for (std::size_t j = 0; j < p; ++j) {
    const auto& name = baseline.features[j].name;
    const auto k = fresh.index_of(name);
    if (!k) throw Error(ErrorCode::FeatureSetMismatch, "feature '" + name + "' is missing from the fresh report");
    base_perm[j] = baseline.features[j].rank_perm;
    base_mdi[j] = baseline.features[j].rank_mdi;
    fresh_perm[j] = fresh.features[*k].rank_perm;
    fresh_mdi[j] = fresh.features[*k].rank_mdi;
  }

  DriftReport r;
  r.baseline_fingerprint = baseline.fingerprint();
  r.fresh_fingerprint = fresh.fingerprint();
  r.spearman_rho = spearman_rho(base_perm, fresh_perm);
  r.mdi_rho = spearman_rho(base_mdi, fresh_mdi);
  r.threshold = rho_threshold;
  r.top_k = top_k;
  for (std::size_t j = 0; j < p; ++j) {
    r.features.push_back({baseline.features[j].name, base_perm[j], fresh_perm[j],
                          static_cast<long>(fresh_perm[j]) - static_cast<long>(base_perm[j])});
  }
  const auto a = top_set(base_perm, top_k);
  const auto b = top_set(fresh_perm, top_k);
  std::vector<std::size_t> diff;
  std::set_symmetric_difference(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(diff));
  for (const auto j : diff) r.flagged_features.push_back(baseline.features[j].name);
  r.refresh_recommended = r.spearman_rho < rho_threshold || !r.flagged_features.empty();
  return r;
}

std::string DriftReport::to_json() const {
  json feats = json::array();
  for (const auto& f : features) {
    feats.push_back({{"name", f.name},
                     {"baseline_rank", f.baseline_rank},
                     {"fresh_rank", f.fresh_rank},
                     {"rank_delta", f.rank_delta}});
  }
  json doc{{"format", kDriftFormat},
           {"format_version", kFormatVersion},
           {"baseline_fingerprint", baseline_fingerprint},
           {"fresh_fingerprint", fresh_fingerprint},
           {"spearman_rho", spearman_rho},
           {"mdi_rho", mdi_rho},
           {"threshold", threshold},
           {"top_k", top_k},
           {"features", std::move(feats)},
           {"flagged_features", flagged_features},
           {"refresh_recommended", refresh_recommended}};
  return doc.dump(2) + "\n";
}

DriftReport DriftReport::from_json(std::string_view text, std::string_view origin) {
  const std::string where(origin);
  try {
    const json doc = json::parse(text);
    check_header(doc, kDriftFormat, where);
    DriftReport r;
    r.baseline_fingerprint = doc.at("baseline_fingerprint").get<std::string>();
    r.fresh_fingerprint = doc.at("fresh_fingerprint").get<std::string>();
    r.spearman_rho = doc.at("spearman_rho").get<double>();
    r.mdi_rho = doc.at("mdi_rho").get<double>();
    r.threshold = doc.at("threshold").get<double>();
    r.top_k = doc.at("top_k").get<std::size_t>();
    for (const auto& jf : doc.at("features")) {
      r.features.push_back({jf.at("name").get<std::string>(), jf.at("baseline_rank").get<std::size_t>(),
                            jf.at("fresh_rank").get<std::size_t>(), jf.at("rank_delta").get<long>()});
    }
    r.flagged_features = doc.at("flagged_features").get<std::vector<std::string>>();
    r.refresh_recommended = doc.at("refresh_recommended").get<bool>();
    if (r.refresh_recommended != (r.spearman_rho < r.threshold || !r.flagged_features.empty())) {
      throw Error(ErrorCode::CorruptFile, "refresh flag disagrees with rho and flagged features", where);
    }
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("malformed drift report: ") + e.what(), where);
  }
}

void DriftReport::save(const std::filesystem::path& path) const { write_file(path, to_json()); }

DriftReport DriftReport::load(const std::filesystem::path& path) {
  return from_json(read_file(path), path.string());
}

std::string DriftReport::format_text() const {
  std::ostringstream out;
  out << "drift " << baseline_fingerprint << " -> " << fresh_fingerprint << "\n";
  out << "spearman_rho " << fmt("%.4f", spearman_rho) << " (threshold " << fmt("%.4f", threshold)
      << ", mdi_rho " << fmt("%.4f", mdi_rho) << ")\n";
  std::size_t width = 7;
  for (const auto& f : features) width = std::max(width, f.name.size());
  char line[256];
  std::snprintf(line, sizeof line, "%-*s  %8s  %8s  %6s\n", static_cast<int>(width), "feature", "baseline", "fresh",
                "delta");
  out << line;
  for (const auto& f : features) {
    std::snprintf(line, sizeof line, "%-*s  %8zu  %8zu  %+6ld\n", static_cast<int>(width), f.name.c_str(),
                  f.baseline_rank, f.fresh_rank, f.rank_delta);
    out << line;
  }
  out << "flagged";
  if (flagged_features.empty()) out << " (none)";
  for (const auto& name : flagged_features) out << " " << name;
  out << "\n" << (refresh_recommended ? "refresh recommended" : "stable") << "\n";
  return out.str();
}

EffectSummary evaluate_intervention(const Table& before, const Table& after, const MacroKpi& macro,
                                    const InterventionSettings& settings) {
  if (settings.resamples == 0) throw Error(ErrorCode::InvalidParams, "resamples must be at least 1");
  if (!(settings.confidence > 0.0 && settings.confidence < 1.0)) {
    throw Error(ErrorCode::InvalidParams, "confidence must lie in (0, 1)");
  }
  const auto b = target_values(before, macro.target_column, "before");
  const auto a = target_values(after, macro.target_column, "after");
  const double sign = macro.direction == Direction::minimize ? -1.0 : 1.0;

  EffectSummary s;
  s.macro_id = macro.id;
  s.target_column = macro.target_column;
  s.direction = macro.direction;
  s.n_before = b.size();
  s.n_after = a.size();
  s.mean_before = mean_of(b);
  s.mean_after = mean_of(a);
  s.median_before = median_of(b);
  s.median_after = median_of(a);
  s.difference = s.mean_after - s.mean_before;
  s.improvement = sign * s.difference;
  if (s.mean_before != 0.0) s.relative_improvement = s.improvement / std::abs(s.mean_before);
  s.confidence = settings.confidence;
  s.resamples = settings.resamples;
  s.seed = settings.seed;

  Rng rng(settings.seed);
  std::vector<double> diffs, rel;
  diffs.reserve(settings.resamples);
  for (std::size_t r = 0; r < settings.resamples; ++r) {
    const double mb = resample_mean(rng, b);
    const double ma = resample_mean(rng, a);
    diffs.push_back(ma - mb);
    if (mb != 0.0) rel.push_back(sign * (ma - mb) / std::abs(mb));
  }
  const double tail = 0.5 * (1.0 - settings.confidence);
  std::sort(diffs.begin(), diffs.end());
  s.ci_low = quantile_sorted(diffs, tail);
  s.ci_high = quantile_sorted(diffs, 1.0 - tail);
  if (s.relative_improvement && rel.size() == settings.resamples) {
    std::sort(rel.begin(), rel.end());
    s.relative_ci_low = quantile_sorted(rel, tail);
    s.relative_ci_high = quantile_sorted(rel, 1.0 - tail);
  }
  return s;
}

bool EffectSummary::improved() const noexcept {
  return direction == Direction::minimize ? ci_high < 0.0 : ci_low > 0.0;
}

std::string EffectSummary::to_json() const {
  json doc{{"format", kEffectFormat},
           {"format_version", kFormatVersion},
           {"macro_id", macro_id},
           {"target_column", target_column},
           {"direction", to_string(direction)},
           {"n_before", n_before},
           {"n_after", n_after},
           {"mean_before", mean_before},
           {"mean_after", mean_after},
           {"median_before", median_before},
           {"median_after", median_after},
           {"difference", difference},
           {"improvement", improvement},
           {"relative_improvement", optional_json(relative_improvement)},
           {"ci_low", ci_low},
           {"ci_high", ci_high},
           {"relative_ci_low", optional_json(relative_ci_low)},
           {"relative_ci_high", optional_json(relative_ci_high)},
           {"confidence", confidence},
           {"resamples", resamples},
           {"seed", seed},
           {"improved", improved()}};
  return doc.dump(2) + "\n";
}

EffectSummary EffectSummary::from_json(std::string_view text, std::string_view origin) {
  const std::string where(origin);
  try {
    const json doc = json::parse(text);
    check_header(doc, kEffectFormat, where);
    EffectSummary s;
    s.macro_id = doc.at("macro_id").get<std::string>();
    s.target_column = doc.at("target_column").get<std::string>();
    const auto direction = parse_direction(doc.at("direction").get<std::string>());
    if (!direction) throw Error(ErrorCode::CorruptFile, "unknown direction", where);
    s.direction = *direction;
    s.n_before = doc.at("n_before").get<std::size_t>();
    s.n_after = doc.at("n_after").get<std::size_t>();
    s.mean_before = doc.at("mean_before").get<double>();
    s.mean_after = doc.at("mean_after").get<double>();
    s.median_before = doc.at("median_before").get<double>();
    s.median_after = doc.at("median_after").get<double>();
    s.difference = doc.at("difference").get<double>();
    s.improvement = doc.at("improvement").get<double>();
    s.relative_improvement = optional_from(doc.at("relative_improvement"));
    s.ci_low = doc.at("ci_low").get<double>();
    s.ci_high = doc.at("ci_high").get<double>();
    s.relative_ci_low = optional_from(doc.at("relative_ci_low"));
    s.relative_ci_high = optional_from(doc.at("relative_ci_high"));
    s.confidence = doc.at("confidence").get<double>();
    s.resamples = doc.at("resamples").get<std::size_t>();
    s.seed = doc.at("seed").get<std::uint64_t>();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("malformed effect summary: ") + e.what(), where);
  }
}

void EffectSummary::save(const std::filesystem::path& path) const { write_file(path, to_json()); }

std::string EffectSummary::format_text() const {
  std::ostringstream out;
  out << "macro " << macro_id << " (" << target_column << ", " << to_string(direction) << ")\n";
  out << "before  n=" << n_before << "  mean " << fmt("%.6g", mean_before) << "  median "
      << fmt("%.6g", median_before) << "\n";
  out << "after   n=" << n_after << "  mean " << fmt("%.6g", mean_after) << "  median " << fmt("%.6g", median_after)
      << "\n";
  out << "improvement " << fmt("%.6g", improvement);
  if (relative_improvement) out << " (" << fmt("%.2f", 100.0 * *relative_improvement) << "%)";
  out << "\n";
  out << fmt("%.0f", 100.0 * confidence) << "% CI on mean(after) - mean(before): [" << fmt("%.6g", ci_low) << ", "
      << fmt("%.6g", ci_high) << "] over " << resamples << " resamples\n";
  out << (improved() ? "improved" : "no clear improvement") << "\n";
  return out.str();
}

}  // namespace kpiforge
