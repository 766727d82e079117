#include "kpiforge/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <boost/math/distributions/normal.hpp>

#include "json.hpp"

#include "kpiforge/error.hpp"
#include "kpiforge/kvfile.hpp"
#include "kpiforge/rng.hpp"

namespace kpiforge {

namespace {

constexpr std::string_view kFeaturePrefix = "feature.";
constexpr std::uint64_t kTargetStream = 0x7461726765740000ULL;
constexpr std::uint64_t kMonteCarloSeed = 0x5eedULL;
constexpr std::size_t kMonteCarloDraws = 200000;

std::string level_label(std::size_t code) { return "lvl" + std::to_string(code); }
std::string class_label(std::size_t k) { return "class_" + std::to_string(k); }

double standardized_level(std::size_t code, std::size_t levels) {
  const double l = static_cast<double>(levels);
  const double mean = (l - 1.0) / 2.0;
  const double sd = std::sqrt((l * l - 1.0) / 12.0);
  return (static_cast<double>(code) - mean) / sd;
}

// Draws one standardized informative value.
double draw_value(const FeatureSpec& f, Rng& rng) {
  if (f.kind == ColumnKind::categorical) return standardized_level(rng.uniform_index(f.levels), f.levels);
  return rng.normal();
}

std::vector<double> class_cuts(std::size_t classes, double sd) {
  std::vector<double> cuts;
  const boost::math::normal_distribution<double> unit;
  for (std::size_t i = 1; i < classes; ++i) {
    cuts.push_back(classes == 2 ? 0.0
                                : sd * boost::math::quantile(unit, static_cast<double>(i) / static_cast<double>(classes)));
  }
  return cuts;
}

std::size_t class_of(double score, const std::vector<double>& cuts) {
  return static_cast<std::size_t>(std::count_if(cuts.begin(), cuts.end(), [&](double c) { return score > c; }));
}

[[noreturn]] void invalid(const std::string& message, std::string context = {}) {
  throw Error(ErrorCode::InvalidSpec, message, std::move(context));
}

}  // namespace

std::string_view to_string(FeatureGenerator generator) noexcept {
  switch (generator) {
    case FeatureGenerator::informative: return "informative";
    case FeatureGenerator::noise: return "noise";
    case FeatureGenerator::correlated: return "correlated";
  }
  return "?";
}

void GeneratorSpec::validate() const {
  if (n_rows < 2) invalid("n_rows must be >= 2");
  if (features.empty()) invalid("spec declares no features");
  std::set<std::string> seen;
  bool any_informative = false;
  for (const auto& f : features) {
    if (f.name.empty()) invalid("feature name is empty");
    if (f.name == target.name) invalid("feature '" + f.name + "' collides with the target name");
    if (f.kind == ColumnKind::categorical && f.levels < 2) invalid("feature '" + f.name + "' needs >= 2 levels");
    switch (f.generator) {
      case FeatureGenerator::informative:
        if (!std::isfinite(f.weight)) invalid("feature '" + f.name + "' has a non-finite weight");
        any_informative = any_informative || f.weight != 0.0;
        break;
      case FeatureGenerator::noise: break;
      case FeatureGenerator::correlated: {
        if (f.kind != ColumnKind::numeric) invalid("correlated feature '" + f.name + "' must be numeric");
        if (!(f.rho > -1.0 && f.rho < 1.0)) invalid("feature '" + f.name + "': rho must lie in (-1, 1)");
        const auto base = std::find_if(features.begin(), features.end(),
                                       [&](const FeatureSpec& g) { return g.name == f.correlated_with; });
        if (!seen.contains(f.correlated_with) || base->kind != ColumnKind::numeric) {
          invalid("feature '" + f.name + "' must correlate with an earlier numeric feature");
        }
        break;
      }
    }
    if (!seen.insert(f.name).second) invalid("duplicate feature '" + f.name + "'");
  }
  if (!any_informative) invalid("spec has no informative feature with a nonzero weight");
  if (target.name.empty()) invalid("target name is empty");
  if (target.task == TaskKind::classification) {
    if (target.classes < 2) invalid("classification needs >= 2 classes");
    if (!(target.noise_rate >= 0.0 && target.noise_rate < 0.5)) invalid("noise_rate must lie in [0, 0.5)");
  } else {
    if (!(target.noise_std >= 0.0) || !std::isfinite(target.noise_std)) invalid("noise_std must be finite and >= 0");
    if (!std::isfinite(target.intercept)) invalid("intercept must be finite");
  }
}

GeneratorSpec GeneratorSpec::from_kv(const KvFile& file) {
  GeneratorSpec spec;
  try {
    if (auto v = file.get_count("generator", "n_rows")) spec.n_rows = *v;
    if (auto v = file.get_count("generator", "seed")) spec.seed = *v;

    if (auto v = file.get("target", "name")) spec.target.name = *v;
    if (auto v = file.get("target", "task")) {
      if (*v == "classification") {
        spec.target.task = TaskKind::classification;
      } else if (*v == "regression") {
        spec.target.task = TaskKind::regression;
      } else {
        invalid("unknown task '" + *v + "'", file.where(*file.find("target", "task")));
      }
    }
    if (auto v = file.get_count("target", "classes")) spec.target.classes = *v;
    if (auto v = file.get_real("target", "noise_rate")) spec.target.noise_rate = *v;
    if (auto v = file.get_real("target", "noise_std")) spec.target.noise_std = *v;
    if (auto v = file.get_real("target", "intercept")) spec.target.intercept = *v;

    for (const auto& section : file.section_names()) {
      if (!section.starts_with(kFeaturePrefix)) continue;
      FeatureSpec f;
      f.name = section.substr(kFeaturePrefix.size());
      if (auto v = file.get(section, "kind")) {
        if (*v == "numeric") {
          f.kind = ColumnKind::numeric;
        } else if (*v == "categorical") {
          f.kind = ColumnKind::categorical;
        } else {
          invalid("unknown kind '" + *v + "'", file.where(*file.find(section, "kind")));
        }
      }
      const auto gen = file.get(section, "generator").value_or("noise");
      if (gen == "informative") {
        f.generator = FeatureGenerator::informative;
        const auto w = file.get_real(section, "weight");
        if (!w) invalid("informative feature '" + f.name + "' needs a weight", file.origin());
        f.weight = *w;
      } else if (gen == "noise") {
        f.generator = FeatureGenerator::noise;
      } else if (gen == "correlated") {
        f.generator = FeatureGenerator::correlated;
        const auto with = file.get(section, "with");
        const auto rho = file.get_real(section, "rho");
        if (!with || !rho) invalid("correlated feature '" + f.name + "' needs 'with' and 'rho'", file.origin());
        f.correlated_with = *with;
        f.rho = *rho;
      } else {
        invalid("unknown generator '" + gen + "'", file.where(*file.find(section, "generator")));
      }
      if (auto v = file.get_count(section, "levels")) f.levels = *v;
      spec.features.push_back(std::move(f));
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::InvalidSpec) throw;
    throw Error(ErrorCode::InvalidSpec, e.detail(), e.context());
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::InvalidSpec, e.detail(), file.origin());
  }
  return spec;
}

GeneratorSpec GeneratorSpec::load(const std::filesystem::path& path) { return from_kv(KvFile::load(path)); }

std::string GeneratorSpec::to_kv() const {
  std::string out = "[generator]\nn_rows = " + std::to_string(n_rows) + "\nseed = " + std::to_string(seed) + "\n\n";
  out += "[target]\nname = " + target.name + "\ntask = " + std::string(to_string(target.task)) + "\n";
  if (target.task == TaskKind::classification) {
    out += "classes = " + std::to_string(target.classes) + "\nnoise_rate = " + format_real(target.noise_rate) + "\n";
  } else {
    out += "noise_std = " + format_real(target.noise_std) + "\nintercept = " + format_real(target.intercept) + "\n";
  }
  for (const auto& f : features) {
    out += "\n[" + std::string(kFeaturePrefix) + f.name + "]\nkind = " + std::string(to_string(f.kind)) +
           "\ngenerator = " + std::string(to_string(f.generator)) + "\n";
    if (f.generator == FeatureGenerator::informative) out += "weight = " + format_real(f.weight) + "\n";
    if (f.generator == FeatureGenerator::correlated) {
      out += "with = " + f.correlated_with + "\nrho = " + format_real(f.rho) + "\n";
    }
    if (f.kind == ColumnKind::categorical) out += "levels = " + std::to_string(f.levels) + "\n";
  }
  return out;
}

Schema GeneratorSpec::schema() const {
  std::vector<ColumnSpec> columns;
  for (const auto& f : features) columns.push_back({f.name, f.kind, ColumnRole::feature, MissingPolicy::reject});
  columns.push_back({target.name,
                     target.task == TaskKind::classification ? ColumnKind::categorical : ColumnKind::numeric,
                     ColumnRole::target, MissingPolicy::reject});
  return Schema(std::move(columns));
}

double GroundTruth::expected_drop_of(std::string_view feature) const {
  for (std::size_t j = 0; j < features.size(); ++j) {
    if (features[j] == feature) return expected_drop[j];
  }
  throw Error(ErrorCode::UnknownColumn, "ground truth has no feature '" + std::string(feature) + "'");
}

std::string GroundTruth::to_json() const {
  nlohmann::json drops = nlohmann::json::object();
  for (std::size_t j = 0; j < features.size(); ++j) drops[features[j]] = expected_drop[j];
  nlohmann::json doc{{"format", "kpiforge-ground-truth"},
                     {"format_version", 1},
                     {"informative", informative},
                     {"weights", weights},
                     {"expected_drop", std::move(drops)}};
  return doc.dump(2) + "\n";
}

namespace {

GroundTruth ground_truth(const GeneratorSpec& spec) {
  GroundTruth truth;
  double var_score = 0.0;
  bool all_numeric = true;
  std::vector<std::size_t> informative;
  for (std::size_t j = 0; j < spec.features.size(); ++j) {
    const auto& f = spec.features[j];
    truth.features.push_back(f.name);
    if (f.generator == FeatureGenerator::informative && f.weight != 0.0) {
      truth.informative.push_back(f.name);
      truth.weights.push_back(f.weight);
      informative.push_back(j);
      var_score += f.weight * f.weight;
      all_numeric = all_numeric && f.kind == ColumnKind::numeric;
    }
  }
  truth.expected_drop.assign(spec.features.size(), 0.0);
  const auto& t = spec.target;
  if (t.task == TaskKind::regression) {
    const double var_y = var_score + t.noise_std * t.noise_std;
    for (auto j : informative) truth.expected_drop[j] = 2.0 * spec.features[j].weight * spec.features[j].weight / var_y;
    return truth;
  }
  const double k = static_cast<double>(t.classes);
  const double label_factor = 1.0 - t.noise_rate - t.noise_rate / (k - 1.0);
  if (t.classes == 2 && all_numeric) {
    for (auto j : informative) {
      const double w2 = spec.features[j].weight * spec.features[j].weight;
      truth.expected_drop[j] = label_factor * std::acos((var_score - w2) / var_score) / std::numbers::pi;
    }
    return truth;
  }
  // No closed form: estimate the disagreement rate by simulation.
  const auto cuts = class_cuts(t.classes, std::sqrt(var_score));
  Rng rng(kMonteCarloSeed);
  std::vector<double> x(spec.features.size(), 0.0);
  std::vector<std::size_t> flips(spec.features.size(), 0);
  for (std::size_t draw = 0; draw < kMonteCarloDraws; ++draw) {
    double score = 0.0;
    for (auto j : informative) {
      x[j] = draw_value(spec.features[j], rng);
      score += spec.features[j].weight * x[j];
    }
    const auto c = class_of(score, cuts);
    for (auto j : informative) {
      const double moved = score + spec.features[j].weight * (draw_value(spec.features[j], rng) - x[j]);
      if (class_of(moved, cuts) != c) ++flips[j];
    }
  }
  for (auto j : informative) {
    truth.expected_drop[j] = label_factor * static_cast<double>(flips[j]) / static_cast<double>(kMonteCarloDraws);
  }
  return truth;
}

}  // namespace

std::pair<Table, GroundTruth> generate(const GeneratorSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_rows;
  const std::size_t p = spec.features.size();
  // Standardized values drive the link; `cells` holds the table text.
  std::vector<std::vector<double>> values(p, std::vector<double>(n, 0.0));
  std::vector<std::vector<std::string>> cells(p, std::vector<std::string>(n));

  for (std::size_t j = 0; j < p; ++j) {
    const auto& f = spec.features[j];
    Rng rng(derive_seed(spec.seed, {j}));
    if (f.generator == FeatureGenerator::correlated) {
      std::size_t b = 0;
      while (spec.features[b].name != f.correlated_with) ++b;
      const auto& base = values[b];
      std::vector<double> e(n);
      for (auto& v : e) v = rng.normal();
      // Standardize the base and an independent draw made orthogonal to it.
      auto standardize = [n](std::vector<double>& v) {
        double mean = 0.0;
        for (double a : v) mean += a;
        mean /= static_cast<double>(n);
        double ss = 0.0;
        for (double& a : v) {
          a -= mean;
          ss += a * a;
        }
        const double sd = std::sqrt(ss / static_cast<double>(n));
        for (double& a : v) a /= sd;
      };
      std::vector<double> zb = base;
      standardize(zb);
      standardize(e);
      double proj = 0.0;
      for (std::size_t i = 0; i < n; ++i) proj += e[i] * zb[i];
      proj /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) e[i] -= proj * zb[i];
      standardize(e);
      const double mix = std::sqrt(1.0 - f.rho * f.rho);
      for (std::size_t i = 0; i < n; ++i) values[j][i] = f.rho * zb[i] + mix * e[i];
    } else if (f.kind == ColumnKind::categorical) {
      for (std::size_t i = 0; i < n; ++i) {
        const auto code = static_cast<std::size_t>(rng.uniform_index(f.levels));
        values[j][i] = standardized_level(code, f.levels);
        cells[j][i] = level_label(code);
      }
    } else {
      for (std::size_t i = 0; i < n; ++i) values[j][i] = rng.normal();
    }
    if (f.kind == ColumnKind::numeric) {
      for (std::size_t i = 0; i < n; ++i) cells[j][i] = format_real(values[j][i]);
    }
  }

  std::vector<double> score(n, 0.0);
  double var_score = 0.0;
  for (std::size_t j = 0; j < p; ++j) {
    const auto& f = spec.features[j];
    if (f.generator != FeatureGenerator::informative || f.weight == 0.0) continue;
    var_score += f.weight * f.weight;
    for (std::size_t i = 0; i < n; ++i) score[i] += f.weight * values[j][i];
  }

  const auto& t = spec.target;
  Rng noise(derive_seed(spec.seed, {kTargetStream}));
  std::vector<std::string> target(n);
  if (t.task == TaskKind::classification) {
    const auto cuts = class_cuts(t.classes, std::sqrt(var_score));
    for (std::size_t i = 0; i < n; ++i) {
      auto c = class_of(score[i], cuts);
      if (noise.bernoulli(t.noise_rate)) {
        const auto other = static_cast<std::size_t>(noise.uniform_index(t.classes - 1));
        c = other >= c ? other + 1 : other;
      }
      target[i] = class_label(c);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) target[i] = format_real(t.intercept + score[i] + t.noise_std * noise.normal());
  }

  TableBuilder builder(spec.schema());
  std::vector<std::string> row(p + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) row[j] = cells[j][i];
    row[p] = target[i];
    builder.add_row(row);
  }
  return {std::move(builder).build(), ground_truth(spec)};
}

GeneratorSpec shift_window(const GeneratorSpec& spec, const Mutation& mutation) {
  GeneratorSpec out = spec;
  switch (mutation.kind) {
    case MutationKind::swap_informative: {
      std::vector<double*> weights;
      for (auto& f : out.features) {
        if (f.generator == FeatureGenerator::informative && f.weight != 0.0) weights.push_back(&f.weight);
      }
      if (weights.size() < 2) {
        throw Error(ErrorCode::InapplicableMutation, "swap_informative needs at least 2 informative features");
      }
      std::vector<double> original;
      for (auto* w : weights) original.push_back(*w);
      for (std::size_t i = 0; i < weights.size(); ++i) *weights[i] = original[weights.size() - 1 - i];
      break;
    }
    case MutationKind::scale_target:
    case MutationKind::shift_target: {
      if (spec.target.task != TaskKind::regression) {
        throw Error(ErrorCode::InapplicableMutation, "target mutations apply to regression targets only");
      }
      if (!std::isfinite(mutation.value)) throw Error(ErrorCode::InapplicableMutation, "mutation value must be finite");
      if (mutation.kind == MutationKind::shift_target) {
        out.target.intercept += mutation.value;
        break;
      }
      if (!(mutation.value > 0.0)) throw Error(ErrorCode::InapplicableMutation, "scale factor must be positive");
      out.target.intercept *= mutation.value;
      out.target.noise_std *= mutation.value;
      for (auto& f : out.features) f.weight *= mutation.value;
      break;
    }
  }
  return out;
}

}  // namespace kpiforge
