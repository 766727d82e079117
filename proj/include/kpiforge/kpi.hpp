#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kpiforge/importance.hpp"

namespace kpiforge {

enum class Direction { minimize, maximize };
std::string_view to_string(Direction direction) noexcept;
std::optional<Direction> parse_direction(std::string_view text) noexcept;

struct MacroKpi {
  std::string id;
  std::string name;
  std::string description;
  std::string target_column;
  Direction direction = Direction::minimize;
  std::string unit;
  std::string goal_ref;

  bool operator==(const MacroKpi&) const = default;
};

enum class CandidateStatus { proposed, confirmed, rejected, merged };
std::string_view to_string(CandidateStatus status) noexcept;

struct MicroKpiCandidate {
  std::string id;  // assigned by the registry
  std::string macro_kpi_id;
  std::vector<std::string> feature_set;
  std::vector<double> perm_mean;  // parallel to feature_set
  std::vector<double> stability;  // parallel to feature_set
  std::string proposed_metric;
  CandidateStatus status = CandidateStatus::proposed;
  std::string merged_into;
  std::string decided_by;
  std::string decided_at;
  std::string rationale;

  bool operator==(const MicroKpiCandidate&) const = default;
};

struct DeriveThresholds {
  // Unset: 2x the largest perm_mean among features with stability < 0.5
  // (0 when every feature is at least that stable).
  std::optional<double> min_perm_drop;
  double min_stability = 0.0;
  std::optional<std::size_t> max_candidates;  // unset = no cap
};

double relative_drop_threshold(const ImportanceReport& report, std::span<const double> stability);

// Per-feature stability frequencies stored in the report; StabilityMissing
// when the report was produced without stability selection.
std::vector<double> report_stability(const ImportanceReport& report);

// Singleton candidates (no ids yet) for features passing both thresholds,
// by perm_mean descending, ties toward the lower feature index.
std::vector<MicroKpiCandidate> derive_micro_kpis(const ImportanceReport& report, std::span<const double> stability,
                                                 const MacroKpi& macro, const DeriveThresholds& thresholds);

enum class Decision { confirmed, rejected };

enum class EventType { macro_registered, candidate_proposed, candidates_merged, decision_recorded };
std::string_view to_string(EventType type) noexcept;

// One ledger entry. Only the fields relevant to `type` are set.
struct LedgerEvent {
  EventType type = EventType::macro_registered;
  std::uint64_t sequence = 0;  // 1-based position in the ledger
  std::string actor;
  std::string timestamp;  // metadata only
  std::optional<MacroKpi> macro;               // macro_registered
  std::optional<MicroKpiCandidate> candidate;  // candidate_proposed, candidates_merged (the new one)
  std::vector<std::string> merged_ids;         // candidates_merged
  std::string candidate_id;                    // decision_recorded
  std::optional<Decision> decision;            // decision_recorded
  std::string rationale;                       // decision_recorded

  bool operator==(const LedgerEvent&) const = default;
};

// Event-sourced registry: every mutation validates, appends one event and
// applies it through the same fold step that replay() uses.
class KpiRegistry {
 public:
  const std::vector<MacroKpi>& macros() const noexcept { return macros_; }
  const std::vector<MicroKpiCandidate>& candidates() const noexcept { return candidates_; }
  const std::vector<LedgerEvent>& ledger() const noexcept { return ledger_; }
  std::uint64_t version() const noexcept { return ledger_.size(); }

  const MacroKpi* find_macro(std::string_view id) const;
  const MicroKpiCandidate* find_candidate(std::string_view id) const;

  void register_macro(const MacroKpi& macro, const std::string& actor, const std::string& timestamp);
  // Returns the assigned ids ("mk-0001", ...).
  std::vector<std::string> propose(const std::vector<MicroKpiCandidate>& candidates, const std::string& actor,
                                   const std::string& timestamp);
  const MicroKpiCandidate& merge_candidates(const std::vector<std::string>& ids, const std::string& metric_text,
                                            const std::string& decided_by, const std::string& timestamp);
  const MicroKpiCandidate& record_decision(const std::string& candidate_id, Decision decision,
                                           const std::string& decided_by, const std::string& rationale,
                                           const std::string& timestamp);

  // Folds a ledger from the empty registry. Invalid events throw.
  static KpiRegistry replay(std::span<const LedgerEvent> ledger);

  // {format, format_version, version, ledger, snapshot}; load() replays the
  // ledger and rejects a file whose snapshot disagrees.
  std::string to_json() const;
  static KpiRegistry from_json(std::string_view text, std::string_view origin = "<memory>");
  void save(const std::filesystem::path& path) const;
  // A missing file yields an empty registry.
  static KpiRegistry load(const std::filesystem::path& path);

  bool operator==(const KpiRegistry&) const = default;

 private:
  void apply(LedgerEvent event);
  MicroKpiCandidate* mutable_candidate(std::string_view id);
  std::string next_candidate_id() const;

  std::vector<MacroKpi> macros_;
  std::vector<MicroKpiCandidate> candidates_;
  std::vector<LedgerEvent> ledger_;
};

}  // namespace kpiforge
