#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "kpiforge/cli.hpp"
#include "kpiforge/importance.hpp"
#include "kpiforge/kvfile.hpp"
#include "kpiforge/monitor.hpp"
#include "kpiforge/synth.hpp"
#include "kpiforge/tabular.hpp"

namespace kpiforge {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string quote(std::string_view text) {
  std::string out = "\"";
  for (const char c : text) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      default: out += c;
    }
  }
  return out + "\"";
}

std::string usage_line(std::string_view message) {
  return "kpiforge: error code=Usage where=\"\" message=" + quote(message);
}

std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void require_file(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) throw Error(ErrorCode::InvalidConfig, what + " not found", path.string());
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write file", path.string());
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed", path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open file", path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  auto out = path;
  out.replace_extension();
  out += suffix;
  return out;
}

// Options shared by every subcommand, filled by CLI11.
struct Globals {
  std::string config_path;
  std::string at;
};

class Session {
 public:
  Session(const Globals& globals, std::ostream& out) : globals_(globals), out_(out) {}

  const ProjectConfig& config() {
    if (!config_) {
      std::string path = globals_.config_path;
      if (path.empty()) {
        if (const char* env = std::getenv("KPIFORGE_CONFIG"); env != nullptr && *env != '\0') path = env;
      }
      if (path.empty()) {
        config_ = ProjectConfig::from_kv(KvFile::parse("", "<defaults>"), fs::current_path());
      } else {
        require_file(path, "config file");
        config_ = ProjectConfig::load(path);
      }
    }
    return *config_;
  }

  std::string timestamp() const { return globals_.at.empty() ? utc_now() : globals_.at; }
  std::ostream& out() { return out_; }

  Table load_data(const fs::path& data) {
    require_file(config().schema, "schema file");
    require_file(data, "data file");
    return clean(load_table(data, Schema::load(config().schema)));
  }

  // (training rows, evaluation rows) under the configured evaluation mode.
  std::pair<Table, Table> split(const Table& table) {
    if (config().mode == EvalMode::oob) return {table, table};
    return split_holdout(table, 1.0 - config().holdout_fraction, config().importance_seed);
  }

  ForestModel fit(const Table& train, std::optional<std::size_t> workers) {
    return fit_forest(train, config().forest, {workers.value_or(config().workers)});
  }

  PermutationSettings permutation_settings(std::optional<std::size_t> workers) {
    PermutationSettings s;
    s.repeats = config().repeats;
    s.seed = config().importance_seed;
    s.mode = config().mode;
    s.workers = workers.value_or(config().workers);
    return s;
  }

  std::size_t default_top_k(std::size_t p) const {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(p)))));
  }

 private:
  Globals globals_;
  std::ostream& out_;
  std::optional<ProjectConfig> config_;
};

std::string metrics_json(const ForestModel& forest, const Table& table, const std::string& mode,
                         const std::optional<MetricReport>& metric) {
  json doc{{"format", "kpiforge-metrics"},
           {"format_version", 1},
           {"model_fingerprint", forest.fingerprint()},
           {"target", forest.schema().target.name},
           {"task", to_string(forest.task())},
           {"n_trees", forest.trees().size()},
           {"n_training_rows", table.n_rows()},
           {"mode", mode}};
  if (metric) {
    doc["metric"] = metric->primary_name();
    doc["value"] = metric->primary();
    doc["n_rows"] = metric->n_rows;
    if (metric->task == TaskKind::classification) {
      doc["accuracy"] = metric->accuracy;
    } else {
      doc["mse"] = metric->mse;
      doc["r2"] = metric->r2;
    }
  } else {
    doc["metric"] = nullptr;
  }
  return doc.dump(2) + "\n";
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  std::string data, out;
  std::optional<std::size_t> workers;
};

int cmd_train(Session& s, const TrainArgs& a) {
  const auto& cfg = s.config();
  const fs::path data = a.data.empty() ? cfg.data : fs::path(a.data);
  const fs::path model_path = a.out.empty() ? cfg.model : fs::path(a.out);
  const auto table = s.load_data(data);
  const auto [train, eval] = s.split(table);
  const auto forest = s.fit(train, a.workers);
  ensure_parent(model_path);
  forest.save(model_path);

  std::optional<MetricReport> metric;
  std::string mode = std::string(to_string(cfg.mode));
  if (cfg.mode == EvalMode::holdout) {
    metric = holdout_score(forest, eval);
  } else if (cfg.forest.bootstrap) {
    metric = oob_score(forest, train);
  } else {
    mode = "none";
  }
  const auto metrics_path = cfg.reports / "train-metrics.json";
  write_text(metrics_path, metrics_json(forest, train, mode, metric));

  s.out() << "model " << model_path.string() << "\n";
  s.out() << "fingerprint " << forest.fingerprint() << "\n";
  s.out() << "trees " << forest.trees().size() << ", rows " << train.n_rows() << "\n";
  if (metric) s.out() << mode << " " << metric->primary_name() << " " << format_real(metric->primary()) << "\n";
  s.out() << "metrics " << metrics_path.string() << "\n";
  return kExitOk;
}

// ------------------------------------------------------------- importance

struct ImportanceArgs {
  std::string model, data, out;
  std::optional<std::size_t> workers;
};

int cmd_importance(Session& s, const ImportanceArgs& a) {
  const auto& cfg = s.config();
  const fs::path model_path = a.model.empty() ? cfg.model : fs::path(a.model);
  const fs::path data = a.data.empty() ? cfg.data : fs::path(a.data);
  const fs::path out = a.out.empty() ? cfg.reports / "importance.json" : fs::path(a.out);
  require_file(model_path, "model file");
  const auto forest = ForestModel::load(model_path);
  const auto table = s.load_data(data);
  const auto [train, eval] = s.split(table);
  auto report = importance_report(forest, cfg.mode == EvalMode::oob ? train : eval, s.permutation_settings(a.workers));
  if (cfg.stability_runs > 0) {
    StabilitySettings st;
    st.seeds = stability_seeds(cfg.importance_seed, cfg.stability_runs);
    st.top_k = cfg.stability_top_k.value_or(s.default_top_k(forest.n_features()));
    st.repeats = cfg.repeats;
    st.workers = a.workers.value_or(cfg.workers);
    attach_stability(report, stability_selection(train, forest.params(), st));
  }
  ensure_parent(out);
  report.save(out);
  write_text(sibling(out, ".txt"), report.format_text());
  s.out() << report.format_text();
  s.out() << "report " << out.string() << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- derive

struct DeriveArgs {
  std::string report, macro, by = "kpiforge";
};

int cmd_derive(Session& s, const DeriveArgs& a) {
  const auto& cfg = s.config();
  const fs::path report_path = a.report.empty() ? cfg.reports / "importance.json" : fs::path(a.report);
  require_file(report_path, "importance report");
  const auto report = ImportanceReport::load(report_path);
  auto registry = KpiRegistry::load(cfg.registry);
  const auto at = s.timestamp();

  if (registry.find_macro(a.macro) == nullptr) {
    const MacroKpi* declared = cfg.find_macro(a.macro);
    if (declared == nullptr) throw Error(ErrorCode::UnknownMacro, "macro-KPI '" + a.macro + "' is not declared");
    registry.register_macro(*declared, a.by, at);
  }
  const MacroKpi macro_kpi = *registry.find_macro(a.macro);
  const auto* macro = &macro_kpi;
  const auto stability = report_stability(report);
  const auto candidates = derive_micro_kpis(report, stability, *macro, cfg.derive);
  const auto ids = registry.propose(candidates, a.by, at);
  registry.save(cfg.registry);

  s.out() << "macro " << macro->id << " (" << macro->target_column << ", " << to_string(macro->direction) << ")\n";
  if (ids.empty()) {
    s.out() << "no feature passed the thresholds\n";
  } else {
    s.out() << "review checklist:\n";
    char line[512];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const auto& c = candidates[i];
      std::snprintf(line, sizeof line, "[ ] %s  %-24s  drop %.4f  stability %.2f\n", ids[i].c_str(),
                    c.feature_set.front().c_str(), c.perm_mean.front(), c.stability.front());
      s.out() << line;
    }
  }
  s.out() << "registry " << cfg.registry.string() << " version " << registry.version() << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- review

struct ReviewArgs {
  std::string candidate, by, rationale, metric;
  bool confirm = false, reject = false;
  std::vector<std::string> merge;
};

int cmd_review(Session& s, const ReviewArgs& a, std::ostream& err) {
  const bool merging = !a.merge.empty();
  if (merging == (a.confirm || a.reject) || (a.confirm && a.reject) || (merging && !a.candidate.empty()) ||
      (!merging && a.candidate.empty())) {
    err << usage_line("review takes either <candidate> with --confirm or --reject, or --merge ids") << "\n";
    return kExitUsage;
  }
  const auto& cfg = s.config();
  auto registry = KpiRegistry::load(cfg.registry);
  const auto at = s.timestamp();
  if (merging) {
    const auto& merged = registry.merge_candidates(a.merge, a.metric, a.by, at);
    s.out() << "merged into " << merged.id << ":";
    for (const auto& f : merged.feature_set) s.out() << " " << f;
    s.out() << "\n";
  } else {
    const auto& c = registry.record_decision(a.candidate, a.confirm ? Decision::confirmed : Decision::rejected,
                                             a.by, a.rationale, at);
    s.out() << c.id << " " << to_string(c.status) << " by " << c.decided_by << "\n";
  }
  registry.save(cfg.registry);
  s.out() << "registry " << cfg.registry.string() << " version " << registry.version() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- monitor

struct MonitorArgs {
  std::string baseline, data, out;
  std::optional<std::size_t> top_k;
  std::optional<double> threshold;
  std::optional<std::size_t> workers;
};

// Distinct features of confirmed micro-KPIs whose macro targets `target`.
std::size_t confirmed_feature_count(const KpiRegistry& registry, const ImportanceReport& report) {
  std::set<std::string> names;
  for (const auto& c : registry.candidates()) {
    if (c.status != CandidateStatus::confirmed) continue;
    const auto* m = registry.find_macro(c.macro_kpi_id);
    if (m == nullptr || m->target_column != report.target) continue;
    for (const auto& f : c.feature_set) {
      if (report.index_of(f)) names.insert(f);
    }
  }
  return names.size();
}

int cmd_monitor(Session& s, const MonitorArgs& a) {
  const auto& cfg = s.config();
  require_file(a.baseline, "baseline report");
  const auto baseline = ImportanceReport::load(a.baseline);
  const auto table = s.load_data(a.data);
  const auto [train, eval] = s.split(table);
  const auto forest = s.fit(train, a.workers);
  const auto fresh = importance_report(forest, cfg.mode == EvalMode::oob ? train : eval, s.permutation_settings(a.workers));

  std::size_t top_k = 0;
  if (a.top_k) {
    top_k = *a.top_k;
  } else if (cfg.monitor_top_k) {
    top_k = *cfg.monitor_top_k;
  } else {
    top_k = confirmed_feature_count(KpiRegistry::load(cfg.registry), baseline);
    if (top_k == 0) top_k = baseline.stability ? baseline.stability->top_k : s.default_top_k(baseline.features.size());
  }
  const auto drift = detect_drift(baseline, fresh, top_k, a.threshold.value_or(cfg.rho_threshold));

  const fs::path out = a.out.empty() ? cfg.reports / "drift.json" : fs::path(a.out);
  ensure_parent(out);
  fresh.save(sibling(out, ".fresh-importance.json"));
  drift.save(out);
  write_text(sibling(out, ".txt"), drift.format_text());
  s.out() << drift.format_text();
  s.out() << "report " << out.string() << "\n";
  return drift.refresh_recommended ? kExitRefresh : kExitOk;
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
  std::string spec, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> rows;
  std::vector<std::string> mutate;
};

Mutation parse_mutation(const std::string& text) {
  if (text == "swap") return {MutationKind::swap_informative, 0.0};
  const auto eq = text.find('=');
  if (eq != std::string::npos) {
    const auto name = text.substr(0, eq);
    const auto value = parse_real(text.substr(eq + 1));
    if (value && name == "scale") return {MutationKind::scale_target, *value};
    if (value && name == "shift") return {MutationKind::shift_target, *value};
  }
  throw Error(ErrorCode::InvalidSpec, "mutation must be swap, scale=<factor> or shift=<delta>", text);
}

int cmd_synth(Session& s, const SynthArgs& a) {
  require_file(a.spec, "generator spec");
  auto spec = GeneratorSpec::load(a.spec);
  if (a.seed) spec.seed = *a.seed;
  if (a.rows) spec.n_rows = *a.rows;
  for (const auto& m : a.mutate) spec = shift_window(spec, parse_mutation(m));
  const auto [table, truth] = generate(spec);
  const fs::path out(a.out);
  ensure_parent(out);
  write_table(out, table);
  write_text(sibling(out, ".truth.json"), truth.to_json());
  write_text(sibling(out, ".schema.kv"), spec.schema().to_kv());
  s.out() << "wrote " << table.n_rows() << " rows to " << out.string() << "\n";
  s.out() << "informative:";
  for (const auto& f : truth.informative) s.out() << " " << f;
  s.out() << "\n";
  return kExitOk;
}

// ----------------------------------------------------------------- report

std::string registry_text(const KpiRegistry& registry) {
  std::ostringstream out;
  out << "registry version " << registry.version() << "\n";
  for (const auto& m : registry.macros()) {
    out << "macro " << m.id << ": " << m.name << " (" << m.target_column << ", " << to_string(m.direction) << ")\n";
  }
  char line[512];
  for (const auto& c : registry.candidates()) {
    std::string features;
    for (const auto& f : c.feature_set) features += (features.empty() ? "" : "+") + f;
    std::snprintf(line, sizeof line, "%s  %-10s  %-9s  %s", c.id.c_str(), c.macro_kpi_id.c_str(),
                  std::string(to_string(c.status)).c_str(), features.c_str());
    out << line;
    if (!c.merged_into.empty()) out << "  -> " << c.merged_into;
    if (!c.decided_by.empty()) out << "  by " << c.decided_by;
    out << "\n";
  }
  return out.str();
}

int cmd_report_show(Session& s, const std::string& path) {
  require_file(path, "report");
  const auto text = read_text(path);
  std::string format;
  try {
    format = json::parse(text).at("format").get<std::string>();
  } catch (const json::exception&) {
    throw Error(ErrorCode::CorruptFile, "not a kpiforge report", path);
  }
  if (format == "kpiforge-importance") {
    s.out() << ImportanceReport::from_json(text, path).format_text();
  } else if (format == "kpiforge-drift") {
    s.out() << DriftReport::from_json(text, path).format_text();
  } else if (format == "kpiforge-effect") {
    s.out() << EffectSummary::from_json(text, path).format_text();
  } else if (format == "kpiforge-registry") {
    s.out() << registry_text(KpiRegistry::from_json(text, path));
  } else if (format == "kpiforge-forest") {
    const auto forest = ForestModel::deserialize(text, path);
    s.out() << "forest " << forest.fingerprint() << ": " << forest.trees().size() << " trees, "
            << forest.n_features() << " features, target " << forest.schema().target.name << " ("
            << to_string(forest.task()) << ")\n";
  } else if (format == "kpiforge-metrics") {
    s.out() << json::parse(text).dump(2) << "\n";
  } else {
    throw Error(ErrorCode::CorruptFile, "unknown report format '" + format + "'", path);
  }
  return kExitOk;
}

struct EffectArgs {
  std::string before, after, macro, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> resamples;
};

int cmd_report_effect(Session& s, const EffectArgs& a) {
  const auto& cfg = s.config();
  const auto registry = KpiRegistry::load(cfg.registry);
  const MacroKpi* macro = registry.find_macro(a.macro);
  if (macro == nullptr) macro = cfg.find_macro(a.macro);
  if (macro == nullptr) throw Error(ErrorCode::UnknownMacro, "macro-KPI '" + a.macro + "' is not declared");
  const auto before = s.load_data(a.before);
  const auto after = s.load_data(a.after);
  InterventionSettings settings;
  settings.resamples = a.resamples.value_or(cfg.resamples);
  settings.seed = a.seed.value_or(cfg.effect_seed);
  const auto effect = evaluate_intervention(before, after, *macro, settings);
  const fs::path out = a.out.empty() ? cfg.reports / ("effect-" + macro->id + ".json") : fs::path(a.out);
  ensure_parent(out);
  effect.save(out);
  s.out() << effect.format_text();
  s.out() << "report " << out.string() << "\n";
  return kExitOk;
}

}  // namespace

int exit_code_for(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidParams:
    case ErrorCode::InvalidSpec:
    case ErrorCode::InapplicableMutation:
    case ErrorCode::RepeatsZero:
    case ErrorCode::SeedCollision:
    case ErrorCode::TooFewFeatures:
    case ErrorCode::ThresholdInvalid:
    case ErrorCode::CrossMacroMerge:
    case ErrorCode::AlreadyDecided:
    case ErrorCode::UnknownCandidate:
    case ErrorCode::UnknownMacro:
    case ErrorCode::DuplicateMacro:
    case ErrorCode::InvalidMerge:
      return kExitUsage;
    default:
      return kExitData;
  }
}

std::string format_error_line(const Error& error) {
  return "kpiforge: error code=" + std::string(error_code_name(error.code())) + " where=" + quote(error.context()) +
         " message=" + quote(error.detail());
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Derive and monitor micro-KPIs from tabular process data", "kpiforge"};
  app.require_subcommand(1);
  Globals globals;
  app.add_option("--config", globals.config_path, "Project config file (default: $KPIFORGE_CONFIG)");
  app.add_option("--at", globals.at, "Timestamp recorded in registry events (default: now, UTC)");
  app.fallthrough();

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Fit a forest and write the model file");
  train_cmd->add_option("--data", train.data, "Training CSV (default: paths.data)");
  train_cmd->add_option("--out", train.out, "Model file (default: paths.model)");
  train_cmd->add_option("--workers", train.workers, "Training threads, 0 = all cores");

  ImportanceArgs imp;
  auto* imp_cmd = app.add_subcommand("importance", "Score MDI and permutation importance");
  imp_cmd->add_option("--model", imp.model, "Model file (default: paths.model)");
  imp_cmd->add_option("--data", imp.data, "Training CSV (default: paths.data)");
  imp_cmd->add_option("--out", imp.out, "Report file (default: <reports>/importance.json)");
  imp_cmd->add_option("--workers", imp.workers, "Threads, 0 = all cores");

  DeriveArgs derive;
  auto* derive_cmd = app.add_subcommand("derive", "Propose micro-KPI candidates for a macro-KPI");
  derive_cmd->add_option("--report", derive.report, "Importance report (default: <reports>/importance.json)");
  derive_cmd->add_option("--macro", derive.macro, "Macro-KPI id")->required();
  derive_cmd->add_option("--by", derive.by, "Actor recorded in the ledger");

  ReviewArgs review;
  auto* review_cmd = app.add_subcommand("review", "Confirm, reject or merge candidates");
  review_cmd->add_option("candidate", review.candidate, "Candidate id");
  review_cmd->add_flag("--confirm", review.confirm, "Confirm the candidate");
  review_cmd->add_flag("--reject", review.reject, "Reject the candidate");
  review_cmd->add_option("--merge", review.merge, "Candidate to merge (repeat)")->allow_extra_args(false);
  review_cmd->add_option("--metric", review.metric, "Metric text for a merged candidate");
  review_cmd->add_option("--by", review.by, "Decision maker")->required();
  review_cmd->add_option("--rationale", review.rationale, "Reason for the decision");

  MonitorArgs mon;
  auto* mon_cmd = app.add_subcommand("monitor", "Compare a fresh window against a baseline report");
  mon_cmd->add_option("--baseline", mon.baseline, "Baseline importance report")->required();
  mon_cmd->add_option("--data", mon.data, "Fresh window CSV")->required();
  mon_cmd->add_option("--out", mon.out, "Drift report (default: <reports>/drift.json)");
  mon_cmd->add_option("--top-k", mon.top_k, "Top-k membership check size");
  mon_cmd->add_option("--threshold", mon.threshold, "Spearman threshold");
  mon_cmd->add_option("--workers", mon.workers, "Threads, 0 = all cores");

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic window with known drivers");
  synth_cmd->add_option("spec", synth.spec, "Generator spec file")->required();
  synth_cmd->add_option("--out", synth.out, "Output CSV")->required();
  synth_cmd->add_option("--seed", synth.seed, "Override the spec seed");
  synth_cmd->add_option("--rows", synth.rows, "Override the row count");
  synth_cmd->add_option("--mutate", synth.mutate, "swap | scale=<f> | shift=<d> (repeatable)")
      ->allow_extra_args(false);

  auto* report_cmd = app.add_subcommand("report", "Show reports and evaluate interventions");
  report_cmd->require_subcommand(1);
  std::string show_path;
  auto* show_cmd = report_cmd->add_subcommand("show", "Print any kpiforge report or registry");
  show_cmd->add_option("path", show_path, "File to show")->required();
  EffectArgs effect;
  auto* effect_cmd = report_cmd->add_subcommand("effect", "Before/after effect on a macro-KPI");
  effect_cmd->add_option("--before", effect.before, "Window before the intervention")->required();
  effect_cmd->add_option("--after", effect.after, "Window after the intervention")->required();
  effect_cmd->add_option("--macro", effect.macro, "Macro-KPI id")->required();
  effect_cmd->add_option("--out", effect.out, "Effect report (default: <reports>/effect-<macro>.json)");
  effect_cmd->add_option("--seed", effect.seed, "Bootstrap seed");
  effect_cmd->add_option("--resamples", effect.resamples, "Bootstrap resamples");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << usage_line(e.what()) << "\n";
    return kExitUsage;
  }

  Session session(globals, out);
  try {
    if (train_cmd->parsed()) return cmd_train(session, train);
    if (imp_cmd->parsed()) return cmd_importance(session, imp);
    if (derive_cmd->parsed()) return cmd_derive(session, derive);
    if (review_cmd->parsed()) return cmd_review(session, review, err);
    if (mon_cmd->parsed()) return cmd_monitor(session, mon);
    if (synth_cmd->parsed()) return cmd_synth(session, synth);
    if (show_cmd->parsed()) return cmd_report_show(session, show_path);
    if (effect_cmd->parsed()) return cmd_report_effect(session, effect);
  } catch (const Error& e) {
    err << format_error_line(e) << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << format_error_line(Error(ErrorCode::IoError, e.what(), e.path1().string())) << "\n";
    return kExitData;
  }
  err << usage_line("no subcommand") << "\n";
  return kExitUsage;
}

}  // namespace kpiforge
