#include "daytrace/questionnaire.hpp"

#include <json.hpp>

#include <set>

namespace daytrace {

using nlohmann::ordered_json;

namespace {

std::string_view kind_name(ItemKind k) {
  switch (k) {
    case ItemKind::likert5: return "likert5";
    case ItemKind::single_choice: return "single-choice";
    case ItemKind::free_text: return "free-text";
  }
  return "likert5";
}

ItemKind kind_from(const std::string& s) {
  if (s == "likert5") return ItemKind::likert5;
  if (s == "single-choice") return ItemKind::single_choice;
  if (s == "free-text") return ItemKind::free_text;
  throw Error(ErrorCode::invalid_argument, "unknown item kind '" + s + "'");
}

void require_version(const Session& s, const QuestionnaireDef& def) {
  if (s.version != def.version)
    throw Error(ErrorCode::version_mismatch, "session v" + std::to_string(s.version) +
                                                 " vs definition v" + std::to_string(def.version));
}

}  // namespace

void check_definition(const QuestionnaireDef& def) {
  if (def.version <= 0) throw Error(ErrorCode::invalid_argument, "version must be positive");
  std::set<std::string> ids;
  for (const auto& item : def.items) {
    if (item.id.empty() || !ids.insert(item.id).second)
      throw Error(ErrorCode::invalid_argument, "item ids must be unique and non-empty");
    if (item.reverse_keyed && item.kind != ItemKind::likert5)
      throw Error(ErrorCode::invalid_argument, "reverse keying only applies to likert5 items");
    if ((item.kind == ItemKind::single_choice) == item.options.empty())
      throw Error(ErrorCode::invalid_argument, "options are required exactly for single-choice items");
  }
  for (const auto& [name, indices] : def.scales) {
    for (auto i : indices)
      if (i >= def.items.size())
        throw Error(ErrorCode::invalid_argument, "scale '" + name + "' references item " + std::to_string(i));
  }
}

std::string serialize(const QuestionnaireDef& def) {
  ordered_json j;
  j["version"] = def.version;
  j["items"] = ordered_json::array();
  for (const auto& item : def.items) {
    ordered_json it;
    it["id"] = item.id;
    it["prompt"] = item.prompt;
    it["kind"] = kind_name(item.kind);
    if (item.kind == ItemKind::likert5) it["reverse_keyed"] = item.reverse_keyed;
    if (item.kind == ItemKind::single_choice) it["options"] = item.options;
    j["items"].push_back(std::move(it));
  }
  j["scales"] = ordered_json::object();
  for (const auto& [name, indices] : def.scales) j["scales"][name] = indices;
  return j.dump(2) + "\n";
}

QuestionnaireDef parse_questionnaire(std::string_view text) {
  QuestionnaireDef def;
  try {
    auto j = ordered_json::parse(text);
    def.version = j.at("version").get<int>();
    for (const auto& it : j.at("items")) {
      Item item;
      item.id = it.at("id").get<std::string>();
      item.prompt = it.at("prompt").get<std::string>();
      item.kind = kind_from(it.at("kind").get<std::string>());
      item.reverse_keyed = it.value("reverse_keyed", false);
      if (it.contains("options")) item.options = it.at("options").get<std::vector<std::string>>();
      def.items.push_back(std::move(item));
    }
    if (j.contains("scales"))
      for (const auto& [name, idx] : j.at("scales").items())
        def.scales[name] = idx.get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_input, std::string("questionnaire: ") + e.what());
  }
  check_definition(def);
  return def;
}

QuestionnaireDef placeholder_questionnaire(int version) {
  // Generic prompts written for this sample; one plain and one reversed item per scale.
  struct Row {
    const char* id;
    const char* prompt;
    bool reversed;
  };
  static constexpr Row kRows[] = {
      {"s1a", "I start conversations easily.", false},
      {"s2a", "I take other people's needs into account.", false},
      {"s3a", "I keep my things in order.", false},
      {"s4a", "I stay calm under pressure.", false},
      {"s5a", "I like trying unfamiliar things.", false},
      {"s1b", "I prefer to stay in the background.", true},
      {"s2b", "I am quick to criticise others.", true},
      {"s3b", "I leave tasks unfinished.", true},
      {"s4b", "I worry a lot.", true},
      {"s5b", "I stick to what I already know.", true},
  };
  QuestionnaireDef def;
  def.version = version;
  for (const auto& r : kRows) def.items.push_back({r.id, r.prompt, ItemKind::likert5, r.reversed, {}});
  def.scales = {
      {"scale_1", {0, 5}}, {"scale_2", {1, 6}}, {"scale_3", {2, 7}},
      {"scale_4", {3, 8}}, {"scale_5", {4, 9}},
  };
  return def;
}

// ---------------------------------------------------------------------------

Session start_session(const QuestionnaireDef& def, TimestampMs now) {
  Session s;
  s.version = def.version;
  s.started_at = now;
  if (def.items.empty()) s.completed_at = now;
  return s;
}

std::optional<Item> next_question(const Session& session, const QuestionnaireDef& def) {
  require_version(session, def);
  if (session.cursor >= def.items.size()) return std::nullopt;
  return def.items[session.cursor];
}

void answer(Session& session, const QuestionnaireDef& def, Response response, TimestampMs now) {
  require_version(session, def);
  if (session.cursor >= def.items.size())
    throw Error(ErrorCode::invalid_argument, "session already completed");
  const Item& item = def.items[session.cursor];
  switch (item.kind) {
    case ItemKind::likert5: {
      const int* v = std::get_if<int>(&response);
      if (!v || *v < 1 || *v > 5) throw Error(ErrorCode::invalid_argument, "likert5 answer must be 1..5");
      break;
    }
    case ItemKind::single_choice: {
      const auto* v = std::get_if<std::size_t>(&response);
      if (!v || *v >= item.options.size()) throw Error(ErrorCode::invalid_argument, "option index out of range");
      break;
    }
    case ItemKind::free_text:
      if (!std::holds_alternative<std::string>(response))
        throw Error(ErrorCode::invalid_argument, "free-text answer must be text");
      break;
  }
  session.answers[item.id] = std::move(response);
  ++session.cursor;
  if (session.cursor == def.items.size()) session.completed_at = now;
}

double progress(const Session& session, const QuestionnaireDef& def) {
  require_version(session, def);
  if (def.items.empty()) return 1.0;
  return static_cast<double>(session.cursor) / static_cast<double>(def.items.size());
}

std::map<std::string, double> score_scales(const Session& session, const QuestionnaireDef& def) {
  require_version(session, def);
  if (!session.completed()) throw Error(ErrorCode::incomplete_session, "session not completed");
  std::map<std::string, double> out;
  for (const auto& [name, indices] : def.scales) {
    if (indices.empty()) throw Error(ErrorCode::non_scorable_item, "scale '" + name + "' is empty");
    double sum = 0;
    for (auto i : indices) {
      const Item& item = def.items.at(i);
      if (item.kind != ItemKind::likert5)
        throw Error(ErrorCode::non_scorable_item, "item '" + item.id + "' in scale '" + name + "'");
      int r = std::get<int>(session.answers.at(item.id));
      sum += item.reverse_keyed ? reverse_likert(r) : r;
    }
    out[name] = sum / static_cast<double>(indices.size());
  }
  return out;
}

std::string serialize(const Session& s) {
  ordered_json j;
  j["version"] = s.version;
  j["cursor"] = s.cursor;
  j["started_at"] = s.started_at;
  j["completed_at"] = s.completed_at ? ordered_json(*s.completed_at) : ordered_json(nullptr);
  j["answers"] = ordered_json::object();
  for (const auto& [id, r] : s.answers) {
    ordered_json a;
    if (const int* v = std::get_if<int>(&r)) a["likert"] = *v;
    else if (const auto* c = std::get_if<std::size_t>(&r)) a["choice"] = *c;
    else a["text"] = std::get<std::string>(r);
    j["answers"][id] = std::move(a);
  }
  return j.dump() + "\n";
}

Session parse_session(std::string_view text) {
  Session s;
  try {
    auto j = ordered_json::parse(text);
    s.version = j.at("version").get<int>();
    s.cursor = j.at("cursor").get<std::size_t>();
    s.started_at = j.at("started_at").get<TimestampMs>();
    if (!j.at("completed_at").is_null()) s.completed_at = j.at("completed_at").get<TimestampMs>();
    for (const auto& [id, a] : j.at("answers").items()) {
      if (a.contains("likert")) s.answers[id] = a.at("likert").get<int>();
      else if (a.contains("choice")) s.answers[id] = a.at("choice").get<std::size_t>();
      else s.answers[id] = a.at("text").get<std::string>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::malformed_input, std::string("session: ") + e.what());
  }
  if (s.answers.size() != s.cursor)
    throw Error(ErrorCode::malformed_input, "session cursor does not match answer count");
  return s;
}

// ---------------------------------------------------------------------------

ComplianceResult compliance(const ComplianceRecord& record, Date today) {
  if (record.study_days <= 0) throw Error(ErrorCode::invalid_argument, "study length must be positive");
  if (!(record.threshold > 0 && record.threshold <= 1))
    throw Error(ErrorCode::invalid_argument, "threshold must be in (0, 1]");
  const Date end = record.study_start + std::chrono::days{record.study_days};
  if (today < end) throw Error(ErrorCode::study_still_running, "study ends " + format_date(end));
  ComplianceResult r;
  for (Date d : record.completed_days)
    if (d >= record.study_start && d < end) ++r.completed_days;
  r.rate = static_cast<double>(r.completed_days) / static_cast<double>(record.study_days);
  r.met = r.rate >= record.threshold;
  return r;
}

ComplianceRecord compliance_record(Date study_start, int study_days, double threshold,
                                   const std::vector<Session>& sessions, std::chrono::minutes utc_offset) {
  ComplianceRecord rec{study_start, study_days, {}, threshold};
  const Date end = study_start + std::chrono::days{study_days};
  for (const auto& s : sessions) {
    if (!s.completed_at) continue;
    Date d = date_of(*s.completed_at, utc_offset);
    if (d >= study_start && d < end) rec.completed_days.insert(d);
  }
  return rec;
}

}  // namespace daytrace
