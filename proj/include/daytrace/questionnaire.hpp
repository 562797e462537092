#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "daytrace/common.hpp"

namespace daytrace {

enum class ItemKind { likert5, single_choice, free_text };

struct Item {
  std::string id;
  std::string prompt;
  ItemKind kind = ItemKind::likert5;
  bool reverse_keyed = false;        // likert5 only
  std::vector<std::string> options;  // single_choice only

  friend bool operator==(const Item&, const Item&) = default;
};

struct QuestionnaireDef {
  int version = 0;
  std::vector<Item> items;
  std::map<std::string, std::vector<std::size_t>> scales;  // scale -> item indices

  friend bool operator==(const QuestionnaireDef&, const QuestionnaireDef&) = default;
};

/// Throws Error(invalid_argument) on duplicate ids, bad scale indices, or
/// reverse keying / options on the wrong item kind.
void check_definition(const QuestionnaireDef& def);

/// JSON definition file. Serialization is deterministic (fixed key order).
std::string serialize(const QuestionnaireDef& def);
QuestionnaireDef parse_questionnaire(std::string_view json);

/// Five-scale, ten-item likert5 sample instrument (two items per scale, one
/// reverse keyed). Placeholder content, not a validated instrument.
QuestionnaireDef placeholder_questionnaire(int version = 1);

/// Likert value 1..5, single-choice option index, or free text.
using Response = std::variant<int, std::size_t, std::string>;

struct Session {
  int version = 0;
  std::size_t cursor = 0;  // index of next unanswered item
  std::map<std::string, Response> answers;
  TimestampMs started_at = 0;
  std::optional<TimestampMs> completed_at;

  bool completed() const { return completed_at.has_value(); }
  friend bool operator==(const Session&, const Session&) = default;
};

Session start_session(const QuestionnaireDef& def, TimestampMs now);

/// The item at the cursor, or nullopt when done. Throws version-mismatch.
std::optional<Item> next_question(const Session& session, const QuestionnaireDef& def);

/// Records the response for the item at the cursor and advances; sets
/// completed_at when the last item is answered.
void answer(Session& session, const QuestionnaireDef& def, Response response, TimestampMs now);

/// answered / total, in [0, 1].
double progress(const Session& session, const QuestionnaireDef& def);

/// Mean per scale of r (or 6 - r for reverse-keyed items).
std::map<std::string, double> score_scales(const Session& session, const QuestionnaireDef& def);

inline int reverse_likert(int r) { return 6 - r; }

std::string serialize(const Session& session);
Session parse_session(std::string_view json);

// ---------------------------------------------------------------------------
// Daily compliance

inline constexpr double kDefaultComplianceThreshold = 0.8;

struct ComplianceRecord {
  Date study_start{};
  int study_days = 0;
  std::set<Date> completed_days;
  double threshold = kDefaultComplianceThreshold;
};

struct ComplianceResult {
  double rate = 0;
  bool met = false;
  std::int64_t completed_days = 0;
};

/// Counts completed days inside the study window. Throws
/// Error(study_still_running) while `today` is inside the window.
ComplianceResult compliance(const ComplianceRecord& record, Date today);

/// Builds the record from sessions: a day counts when a session completed on
/// that calendar date (device UTC offset applied).
ComplianceRecord compliance_record(Date study_start, int study_days, double threshold,
                                   const std::vector<Session>& sessions,
                                   std::chrono::minutes utc_offset = std::chrono::minutes{0});

}  // namespace daytrace
