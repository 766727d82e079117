#include "kpiforge/kpi.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "kpiforge/error.hpp"

namespace kpiforge {

using nlohmann::json;

namespace {

constexpr int kRegistryFormatVersion = 1;
constexpr std::string_view kRegistryFormat = "kpiforge-registry";

}  // namespace

std::string_view to_string(Direction direction) noexcept {
  return direction == Direction::minimize ? "minimize" : "maximize";
}

std::optional<Direction> parse_direction(std::string_view text) noexcept {
  if (text == "minimize") return Direction::minimize;
  if (text == "maximize") return Direction::maximize;
  return std::nullopt;
}

std::string_view to_string(CandidateStatus status) noexcept {
  switch (status) {
    case CandidateStatus::proposed: return "proposed";
    case CandidateStatus::confirmed: return "confirmed";
    case CandidateStatus::rejected: return "rejected";
    case CandidateStatus::merged: return "merged";
  }
  return "?";
}

std::string_view to_string(EventType type) noexcept {
  switch (type) {
    case EventType::macro_registered: return "macro_registered";
    case EventType::candidate_proposed: return "candidate_proposed";
    case EventType::candidates_merged: return "candidates_merged";
    case EventType::decision_recorded: return "decision_recorded";
  }
  return "?";
}

// ---------------------------------------------------------------- derivation

double relative_drop_threshold(const ImportanceReport& report, std::span<const double> stability) {
  double threshold = 0.0;
  for (std::size_t j = 0; j < report.features.size(); ++j) {
    if (stability[j] < 0.5) threshold = std::max(threshold, 2.0 * report.features[j].perm_mean);
  }
  return threshold;
}

std::vector<double> report_stability(const ImportanceReport& report) {
  std::vector<double> out;
  for (const auto& f : report.features) {
    if (!f.stability) {
      throw Error(ErrorCode::StabilityMissing,
                  "importance report has no stability frequencies; rerun importance with stability selection");
    }
    out.push_back(*f.stability);
  }
  return out;
}

std::vector<MicroKpiCandidate> derive_micro_kpis(const ImportanceReport& report, std::span<const double> stability,
                                                 const MacroKpi& macro, const DeriveThresholds& thresholds) {
  if (!(thresholds.min_stability >= 0.0 && thresholds.min_stability <= 1.0)) {
    throw Error(ErrorCode::ThresholdInvalid, "min_stability must lie in [0, 1]");
  }
  if (thresholds.min_perm_drop && !std::isfinite(*thresholds.min_perm_drop)) {
    throw Error(ErrorCode::ThresholdInvalid, "min_perm_drop must be finite");
  }
  if (stability.size() != report.features.size()) {
    throw Error(ErrorCode::FeatureSetMismatch, "stability vector does not match the report's features");
  }
  if (!report.target.empty() && report.target != macro.target_column) {
    throw Error(ErrorCode::SchemaMismatch, "report was computed against '" + report.target + "', macro KPI '" +
                                               macro.id + "' targets '" + macro.target_column + "'");
  }
  const double min_drop = thresholds.min_perm_drop.value_or(relative_drop_threshold(report, stability));

  std::vector<std::size_t> passing;
  for (std::size_t j = 0; j < report.features.size(); ++j) {
    if (report.features[j].perm_mean >= min_drop && stability[j] >= thresholds.min_stability) passing.push_back(j);
  }
  std::stable_sort(passing.begin(), passing.end(), [&](std::size_t a, std::size_t b) {
    return report.features[a].perm_mean > report.features[b].perm_mean;
  });
  if (thresholds.max_candidates && passing.size() > *thresholds.max_candidates) {
    passing.resize(*thresholds.max_candidates);
  }
  std::vector<MicroKpiCandidate> out;
  for (const auto j : passing) {
    MicroKpiCandidate c;
    c.macro_kpi_id = macro.id;
    c.feature_set = {report.features[j].name};
    c.perm_mean = {report.features[j].perm_mean};
    c.stability = {stability[j]};
    out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------- registry

const MacroKpi* KpiRegistry::find_macro(std::string_view id) const {
  const auto it = std::find_if(macros_.begin(), macros_.end(), [&](const MacroKpi& m) { return m.id == id; });
  return it == macros_.end() ? nullptr : &*it;
}

const MicroKpiCandidate* KpiRegistry::find_candidate(std::string_view id) const {
  const auto it =
      std::find_if(candidates_.begin(), candidates_.end(), [&](const MicroKpiCandidate& c) { return c.id == id; });
  return it == candidates_.end() ? nullptr : &*it;
}

MicroKpiCandidate* KpiRegistry::mutable_candidate(std::string_view id) {
  return const_cast<MicroKpiCandidate*>(find_candidate(id));
}

std::string KpiRegistry::next_candidate_id() const {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "mk-%04zu", candidates_.size() + 1);
  return buffer;
}

void KpiRegistry::apply(LedgerEvent event) {
  if (event.sequence != ledger_.size() + 1) {
    throw Error(ErrorCode::CorruptFile, "ledger event " + std::to_string(event.sequence) + " is out of sequence");
  }
  switch (event.type) {
    case EventType::macro_registered: {
      if (!event.macro) throw Error(ErrorCode::CorruptFile, "macro_registered event without a macro");
      const auto& m = *event.macro;
      if (m.id.empty() || m.target_column.empty()) {
        throw Error(ErrorCode::InvalidParams, "macro KPI needs an id and a target column");
      }
      if (find_macro(m.id)) throw Error(ErrorCode::DuplicateMacro, "macro KPI '" + m.id + "' is already registered");
      macros_.push_back(m);
      break;
    }
    case EventType::candidate_proposed: {
      if (!event.candidate) throw Error(ErrorCode::CorruptFile, "candidate_proposed event without a candidate");
      const auto& c = *event.candidate;
      if (!find_macro(c.macro_kpi_id)) throw Error(ErrorCode::UnknownMacro, "unknown macro KPI '" + c.macro_kpi_id + "'");
      if (c.id != next_candidate_id()) throw Error(ErrorCode::CorruptFile, "unexpected candidate id '" + c.id + "'");
      if (c.feature_set.empty() || c.perm_mean.size() != c.feature_set.size() ||
          c.stability.size() != c.feature_set.size()) {
        throw Error(ErrorCode::InvalidParams, "candidate needs a nonempty feature set with scores");
      }
      if (c.status != CandidateStatus::proposed) {
        throw Error(ErrorCode::InvalidParams, "new candidates start in status proposed");
      }
      candidates_.push_back(c);
      break;
    }
    case EventType::candidates_merged: {
      if (!event.candidate) throw Error(ErrorCode::CorruptFile, "candidates_merged event without a candidate");
      const auto& ids = event.merged_ids;
      if (ids.size() < 2 || std::set<std::string>(ids.begin(), ids.end()).size() != ids.size()) {
        throw Error(ErrorCode::InvalidMerge, "a merge needs at least two distinct candidates");
      }
      std::vector<const MicroKpiCandidate*> parts;
      for (const auto& id : ids) {
        const auto* c = find_candidate(id);
        if (!c) throw Error(ErrorCode::UnknownCandidate, "unknown candidate '" + id + "'");
        parts.push_back(c);
      }
      for (const auto* c : parts) {
        if (c->macro_kpi_id != parts.front()->macro_kpi_id) {
          throw Error(ErrorCode::CrossMacroMerge, "candidates '" + parts.front()->id + "' and '" + c->id +
                                                      "' belong to different macro KPIs");
        }
      }
      for (const auto* c : parts) {
        if (c->status != CandidateStatus::proposed) {
          throw Error(ErrorCode::AlreadyDecided,
                      "candidate '" + c->id + "' is already " + std::string(to_string(c->status)));
        }
      }
      const auto& merged = *event.candidate;
      if (merged.id != next_candidate_id() || merged.macro_kpi_id != parts.front()->macro_kpi_id ||
          merged.status != CandidateStatus::proposed) {
        throw Error(ErrorCode::CorruptFile, "merged candidate does not match its sources");
      }
      for (const auto& id : ids) {
        auto* c = mutable_candidate(id);
        c->status = CandidateStatus::merged;
        c->merged_into = merged.id;
        c->decided_by = event.actor;
        c->decided_at = event.timestamp;
      }
      candidates_.push_back(merged);
      break;
    }
    case EventType::decision_recorded: {
      if (!event.decision) throw Error(ErrorCode::CorruptFile, "decision_recorded event without a decision");
      auto* c = mutable_candidate(event.candidate_id);
      if (!c) throw Error(ErrorCode::UnknownCandidate, "unknown candidate '" + event.candidate_id + "'");
      if (c->status != CandidateStatus::proposed) {
        throw Error(ErrorCode::AlreadyDecided,
                    "candidate '" + c->id + "' is already " + std::string(to_string(c->status)));
      }
      c->status = *event.decision == Decision::confirmed ? CandidateStatus::confirmed : CandidateStatus::rejected;
      c->decided_by = event.actor;
      c->decided_at = event.timestamp;
      c->rationale = event.rationale;
      break;
    }
  }
  ledger_.push_back(std::move(event));
}

void KpiRegistry::register_macro(const MacroKpi& macro, const std::string& actor, const std::string& timestamp) {
  LedgerEvent e;
  e.type = EventType::macro_registered;
  e.sequence = ledger_.size() + 1;
  e.actor = actor;
  e.timestamp = timestamp;
  e.macro = macro;
  apply(std::move(e));
}

std::vector<std::string> KpiRegistry::propose(const std::vector<MicroKpiCandidate>& candidates,
                                              const std::string& actor, const std::string& timestamp) {
  // Validate the whole batch on a copy so a bad entry leaves no partial state.
  KpiRegistry next = *this;
  std::vector<std::string> ids;
  for (auto c : candidates) {
    c.id = next.next_candidate_id();
    c.status = CandidateStatus::proposed;
    LedgerEvent e;
    e.type = EventType::candidate_proposed;
    e.sequence = next.ledger_.size() + 1;
    e.actor = actor;
    e.timestamp = timestamp;
    e.candidate = c;
    next.apply(std::move(e));
    ids.push_back(c.id);
  }
  *this = std::move(next);
  return ids;
}

const MicroKpiCandidate& KpiRegistry::merge_candidates(const std::vector<std::string>& ids,
                                                       const std::string& metric_text, const std::string& decided_by,
                                                       const std::string& timestamp) {
  MicroKpiCandidate merged;
  merged.id = next_candidate_id();
  merged.proposed_metric = metric_text;
  for (const auto& id : ids) {
    const auto* c = find_candidate(id);
    if (!c) continue;  // apply() reports it
    merged.macro_kpi_id = merged.macro_kpi_id.empty() ? c->macro_kpi_id : merged.macro_kpi_id;
    for (std::size_t i = 0; i < c->feature_set.size(); ++i) {
      if (std::find(merged.feature_set.begin(), merged.feature_set.end(), c->feature_set[i]) !=
          merged.feature_set.end()) {
        continue;
      }
      merged.feature_set.push_back(c->feature_set[i]);
      merged.perm_mean.push_back(c->perm_mean[i]);
      merged.stability.push_back(c->stability[i]);
    }
  }
  LedgerEvent e;
  e.type = EventType::candidates_merged;
  e.sequence = ledger_.size() + 1;
  e.actor = decided_by;
  e.timestamp = timestamp;
  e.candidate = std::move(merged);
  e.merged_ids = ids;
  apply(std::move(e));
  return candidates_.back();
}

const MicroKpiCandidate& KpiRegistry::record_decision(const std::string& candidate_id, Decision decision,
                                                      const std::string& decided_by, const std::string& rationale,
                                                      const std::string& timestamp) {
  LedgerEvent e;
  e.type = EventType::decision_recorded;
  e.sequence = ledger_.size() + 1;
  e.actor = decided_by;
  e.timestamp = timestamp;
  e.candidate_id = candidate_id;
  e.decision = decision;
  e.rationale = rationale;
  apply(std::move(e));
  return *find_candidate(candidate_id);
}

KpiRegistry KpiRegistry::replay(std::span<const LedgerEvent> ledger) {
  KpiRegistry registry;
  for (const auto& e : ledger) registry.apply(e);
  return registry;
}

// ---------------------------------------------------------------- json

namespace {

json macro_to_json(const MacroKpi& m) {
  return {{"id", m.id},
          {"name", m.name},
          {"description", m.description},
          {"target_column", m.target_column},
          {"direction", to_string(m.direction)},
          {"unit", m.unit},
          {"goal_ref", m.goal_ref}};
}

MacroKpi macro_from_json(const json& j) {
  MacroKpi m;
  m.id = j.at("id").get<std::string>();
  m.name = j.at("name").get<std::string>();
  m.description = j.at("description").get<std::string>();
  m.target_column = j.at("target_column").get<std::string>();
  const auto dir = parse_direction(j.at("direction").get<std::string>());
  if (!dir) throw Error(ErrorCode::CorruptFile, "unknown direction");
  m.direction = *dir;
  m.unit = j.at("unit").get<std::string>();
  m.goal_ref = j.at("goal_ref").get<std::string>();
  return m;
}

CandidateStatus status_from_string(const std::string& s) {
  for (auto st : {CandidateStatus::proposed, CandidateStatus::confirmed, CandidateStatus::rejected,
                  CandidateStatus::merged}) {
    if (to_string(st) == s) return st;
  }
  throw Error(ErrorCode::CorruptFile, "unknown candidate status '" + s + "'");
}

json candidate_to_json(const MicroKpiCandidate& c) {
  return {{"id", c.id},
          {"macro_kpi_id", c.macro_kpi_id},
          {"feature_set", c.feature_set},
          {"perm_mean", c.perm_mean},
          {"stability", c.stability},
          {"proposed_metric", c.proposed_metric},
          {"status", to_string(c.status)},
          {"merged_into", c.merged_into},
          {"decided_by", c.decided_by},
          {"decided_at", c.decided_at},
          {"rationale", c.rationale}};
}

MicroKpiCandidate candidate_from_json(const json& j) {
  MicroKpiCandidate c;
  c.id = j.at("id").get<std::string>();
  c.macro_kpi_id = j.at("macro_kpi_id").get<std::string>();
  c.feature_set = j.at("feature_set").get<std::vector<std::string>>();
  c.perm_mean = j.at("perm_mean").get<std::vector<double>>();
  c.stability = j.at("stability").get<std::vector<double>>();
  c.proposed_metric = j.at("proposed_metric").get<std::string>();
  c.status = status_from_string(j.at("status").get<std::string>());
  c.merged_into = j.at("merged_into").get<std::string>();
  c.decided_by = j.at("decided_by").get<std::string>();
  c.decided_at = j.at("decided_at").get<std::string>();
  c.rationale = j.at("rationale").get<std::string>();
  return c;
}

json event_to_json(const LedgerEvent& e) {
  json j{{"sequence", e.sequence}, {"type", to_string(e.type)}, {"actor", e.actor}, {"timestamp", e.timestamp}};
  switch (e.type) {
    case EventType::macro_registered: j["macro"] = macro_to_json(*e.macro); break;
    case EventType::candidate_proposed: j["candidate"] = candidate_to_json(*e.candidate); break;
    case EventType::candidates_merged:
      j["candidate"] = candidate_to_json(*e.candidate);
      j["merged_ids"] = e.merged_ids;
      break;
    case EventType::decision_recorded:
      j["candidate_id"] = e.candidate_id;
      j["decision"] = *e.decision == Decision::confirmed ? "confirmed" : "rejected";
      j["rationale"] = e.rationale;
      break;
  }
  return j;
}

LedgerEvent event_from_json(const json& j) {
  LedgerEvent e;
  e.sequence = j.at("sequence").get<std::uint64_t>();
  e.actor = j.at("actor").get<std::string>();
  e.timestamp = j.at("timestamp").get<std::string>();
  const auto type = j.at("type").get<std::string>();
  if (type == "macro_registered") {
    e.type = EventType::macro_registered;
    e.macro = macro_from_json(j.at("macro"));
  } else if (type == "candidate_proposed") {
    e.type = EventType::candidate_proposed;
    e.candidate = candidate_from_json(j.at("candidate"));
  } else if (type == "candidates_merged") {
    e.type = EventType::candidates_merged;
    e.candidate = candidate_from_json(j.at("candidate"));
    e.merged_ids = j.at("merged_ids").get<std::vector<std::string>>();
  } else if (type == "decision_recorded") {
    e.type = EventType::decision_recorded;
    e.candidate_id = j.at("candidate_id").get<std::string>();
    const auto d = j.at("decision").get<std::string>();
    if (d != "confirmed" && d != "rejected") throw Error(ErrorCode::CorruptFile, "unknown decision '" + d + "'");
    e.decision = d == "confirmed" ? Decision::confirmed : Decision::rejected;
    e.rationale = j.at("rationale").get<std::string>();
  } else {
    throw Error(ErrorCode::CorruptFile, "unknown ledger event type '" + type + "'");
  }
  return e;
}

}  // namespace

std::string KpiRegistry::to_json() const {
  json ledger = json::array();
  for (const auto& e : ledger_) ledger.push_back(event_to_json(e));
  json macros = json::array();
  for (const auto& m : macros_) macros.push_back(macro_to_json(m));
  json candidates = json::array();
  for (const auto& c : candidates_) candidates.push_back(candidate_to_json(c));
  json doc{{"format", kRegistryFormat},
           {"format_version", kRegistryFormatVersion},
           {"version", version()},
           {"ledger", std::move(ledger)},
           {"snapshot", {{"macros", std::move(macros)}, {"candidates", std::move(candidates)}}}};
  return doc.dump(2) + "\n";
}

KpiRegistry KpiRegistry::from_json(std::string_view text, std::string_view origin) {
  const std::string where(origin);
  try {
    const json doc = json::parse(text);
    if (doc.at("format").get<std::string>() != kRegistryFormat) {
      throw Error(ErrorCode::CorruptFile, "not a KPI registry file", where);
    }
    if (doc.at("format_version").get<int>() != kRegistryFormatVersion) {
      throw Error(ErrorCode::UnsupportedVersion, "unsupported registry format_version", where);
    }
    std::vector<LedgerEvent> ledger;
    for (const auto& j : doc.at("ledger")) ledger.push_back(event_from_json(j));
    KpiRegistry registry = replay(ledger);
    std::vector<MacroKpi> macros;
    for (const auto& j : doc.at("snapshot").at("macros")) macros.push_back(macro_from_json(j));
    std::vector<MicroKpiCandidate> candidates;
    for (const auto& j : doc.at("snapshot").at("candidates")) candidates.push_back(candidate_from_json(j));
    if (macros != registry.macros_ || candidates != registry.candidates_ ||
        doc.at("version").get<std::uint64_t>() != registry.version()) {
      throw Error(ErrorCode::CorruptFile, "registry snapshot disagrees with its ledger", where);
    }
    return registry;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::CorruptFile, std::string("malformed registry: ") + e.what(), where);
  } catch (const Error& e) {
    if (!e.context().empty()) throw;
    throw Error(e.code(), e.detail(), where);
  }
}

void KpiRegistry::save(const std::filesystem::path& path) const {
  // Write-then-rename so a crash never leaves a truncated registry.
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoError, "cannot write registry", tmp);
    out << to_json();
    if (!out) throw Error(ErrorCode::IoError, "write failed", tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoError, "cannot replace registry: " + ec.message(), path.string());
}

KpiRegistry KpiRegistry::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open registry", path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_json(buffer.str(), path.string());
}

}  // namespace kpiforge
