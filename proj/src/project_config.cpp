#include <cmath>
#include <set>

#include "kpiforge/cart.hpp"
#include "kpiforge/cli.hpp"
#include "kpiforge/kvfile.hpp"

namespace kpiforge {

namespace {

const std::set<std::string, std::less<>> kKeys[] = {
    {"schema", "data", "model", "registry", "reports"},
    {"n_trees", "max_depth", "min_samples_leaf", "min_samples_split", "mtry", "criterion", "bootstrap", "seed",
     "workers"},
    {"repeats", "mode", "holdout_fraction", "seed", "stability_runs", "stability_top_k"},
    {"min_perm_drop", "min_stability", "max_candidates"},
    {"rho_threshold", "top_k", "resamples", "seed"},
    {"name", "target", "direction", "unit", "goal", "description"},
};
constexpr std::string_view kSections[] = {"paths", "forest", "importance", "derive", "monitor", "macro."};

Error config_error(const KvFile& file, const KvFile::Entry& entry, const std::string& message) {
  return Error(ErrorCode::InvalidConfig, message, file.where(entry));
}

std::optional<std::size_t> count_or_none(const KvFile& file, std::string_view section, std::string_view key) {
  const auto v = file.get_count(section, key);
  if (!v) return std::nullopt;
  return static_cast<std::size_t>(*v);
}

}  // namespace

ProjectConfig ProjectConfig::from_kv(const KvFile& file, const std::filesystem::path& base_dir) {
  for (const auto& entry : file.entries()) {
    std::size_t s = 0;
    for (; s < std::size(kSections); ++s) {
      const bool prefix = kSections[s].back() == '.';
      if (prefix ? entry.section.starts_with(kSections[s]) && entry.section.size() > kSections[s].size()
                 : entry.section == kSections[s]) {
        break;
      }
    }
    if (s == std::size(kSections)) throw config_error(file, entry, "unknown section [" + entry.section + "]");
    if (!kKeys[s].contains(entry.key)) {
      throw config_error(file, entry, "unknown key '" + entry.key + "' in [" + entry.section + "]");
    }
  }

  ProjectConfig c;
  auto path = [&](std::string_view key, std::filesystem::path& slot) {
    if (const auto v = file.get("paths", key)) {
      const std::filesystem::path p(*v);
      slot = p.is_absolute() ? p : base_dir / p;
    } else {
      slot = base_dir / slot;
    }
  };
  path("schema", c.schema);
  path("data", c.data);
  path("model", c.model);
  path("registry", c.registry);
  path("reports", c.reports);

  if (const auto v = count_or_none(file, "forest", "n_trees")) c.forest.n_trees = *v;
  c.forest.tree.max_depth = count_or_none(file, "forest", "max_depth");
  if (const auto v = count_or_none(file, "forest", "min_samples_leaf")) c.forest.tree.min_samples_leaf = *v;
  if (const auto v = count_or_none(file, "forest", "min_samples_split")) c.forest.tree.min_samples_split = *v;
  c.forest.tree.mtry = count_or_none(file, "forest", "mtry");
  if (const auto* e = file.find("forest", "criterion")) {
    const auto criterion = parse_criterion(e->value);
    if (!criterion) throw config_error(file, *e, "criterion must be gini, entropy or variance");
    c.forest.tree.criterion = criterion;
  }
  if (const auto v = file.get_bool("forest", "bootstrap")) c.forest.bootstrap = *v;
  if (const auto v = file.get_count("forest", "seed")) c.forest.master_seed = *v;
  if (const auto v = count_or_none(file, "forest", "workers")) c.workers = *v;

  if (const auto v = count_or_none(file, "importance", "repeats")) c.repeats = *v;
  if (const auto* e = file.find("importance", "mode")) {
    if (e->value == "oob") {
      c.mode = EvalMode::oob;
    } else if (e->value == "holdout") {
      c.mode = EvalMode::holdout;
    } else {
      throw config_error(file, *e, "mode must be oob or holdout");
    }
  }
  if (const auto v = file.get_real("importance", "holdout_fraction")) {
    if (!(*v > 0.0 && *v < 1.0)) {
      throw config_error(file, *file.find("importance", "holdout_fraction"), "holdout_fraction must lie in (0, 1)");
    }
    c.holdout_fraction = *v;
  }
  if (const auto v = file.get_count("importance", "seed")) c.importance_seed = *v;
  if (const auto v = count_or_none(file, "importance", "stability_runs")) c.stability_runs = *v;
  c.stability_top_k = count_or_none(file, "importance", "stability_top_k");

  c.derive.min_perm_drop = file.get_real("derive", "min_perm_drop");
  if (const auto v = file.get_real("derive", "min_stability")) c.derive.min_stability = *v;
  c.derive.max_candidates = count_or_none(file, "derive", "max_candidates");

  if (const auto v = file.get_real("monitor", "rho_threshold")) c.rho_threshold = *v;
  c.monitor_top_k = count_or_none(file, "monitor", "top_k");
  if (const auto v = count_or_none(file, "monitor", "resamples")) c.resamples = *v;
  if (const auto v = file.get_count("monitor", "seed")) c.effect_seed = *v;

  for (const auto& section : file.section_names()) {
    if (!section.starts_with("macro.")) continue;
    MacroKpi m;
    m.id = section.substr(6);
    m.name = file.get(section, "name").value_or(m.id);
    m.description = file.get(section, "description").value_or("");
    m.unit = file.get(section, "unit").value_or("");
    m.goal_ref = file.get(section, "goal").value_or("");
    const auto* target = file.find(section, "target");
    if (target == nullptr) {
      throw Error(ErrorCode::InvalidConfig, "macro '" + m.id + "' needs a target column", file.origin());
    }
    m.target_column = target->value;
    if (const auto* e = file.find(section, "direction")) {
      const auto d = parse_direction(e->value);
      if (!d) throw config_error(file, *e, "direction must be minimize or maximize");
      m.direction = *d;
    }
    c.macros.push_back(std::move(m));
  }
  return c;
}

ProjectConfig ProjectConfig::load(const std::filesystem::path& path) {
  const auto file = KvFile::load(path);
  return from_kv(file, path.parent_path());
}

const MacroKpi* ProjectConfig::find_macro(std::string_view id) const {
  for (const auto& m : macros) {
    if (m.id == id) return &m;
  }
  return nullptr;
}

}  // namespace kpiforge
