#include <json.hpp>

#include <iomanip>
#include <sstream>

#include "daytrace/questionnaire.hpp"
#include "daytrace/sim.hpp"

namespace daytrace {

using nlohmann::ordered_json;

namespace {

class Client {
 public:
  Client(Transport& t, std::string admin_key) : t_(t), admin_key_(std::move(admin_key)) {}

  HttpResponse send(std::string method, std::string path, std::string body = {}, bool admin = false,
                    Headers extra = {}) {
    HttpRequest r;
    r.method = std::move(method);
    r.path = std::move(path);
    r.headers = std::move(extra);
    if (!body.empty()) r.headers["Content-Type"] = "application/json";
    if (admin) r.headers["admin"] = admin_key_;
    r.body = std::move(body);
    HttpResponse resp = t_.send(r);
    if (resp.status == 0) throw Error(ErrorCode::service_unreachable, r.method + " " + r.path + ": no response");
    return resp;
  }

  static ordered_json expect(const HttpResponse& r, int status, const std::string& what) {
    if (r.status != status)
      throw Error(ErrorCode::service_unreachable,
                  what + ": unexpected status " + std::to_string(r.status) + " " + r.body);
    return r.body.empty() ? ordered_json() : ordered_json::parse(r.body);
  }

 private:
  Transport& t_;
  std::string admin_key_;
};

void check_study_config(const StudyConfig& c) {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_config, what); };
  if (c.users < 0) fail("users must be non-negative");
  if (c.days <= 0) fail("days must be positive");
  if (!(c.threshold > 0 && c.threshold <= 1)) fail("threshold must be in (0, 1]");
  if (c.users > 0 && c.completion_probabilities.empty()) fail("completion probabilities required");
  for (double p : c.completion_probabilities)
    if (!(p >= 0 && p <= 1)) fail("completion probabilities must be in [0, 1]");
}

std::uint64_t user_seed(std::uint64_t seed, int i) {
  return seed * 1'000'003ULL + static_cast<std::uint64_t>(i) + 1;
}

}  // namespace

StudyReport run_study(const StudyConfig& config, Transport& transport) {
  check_study_config(config);
  StudyReport report;
  report.config = config;
  Client client(transport, config.admin_key);

  // Make sure an instrument is published; a 409 means another version already is.
  auto pub = client.send("POST", "/v1/questionnaires", serialize(placeholder_questionnaire(1)), true);
  if (pub.status != 201 && pub.status != 409 && pub.status != 403)
    throw Error(ErrorCode::service_unreachable, "publish: status " + std::to_string(pub.status));
  auto latest = client.send("GET", "/v1/questionnaires/latest");
  if (latest.status == 404) throw Error(ErrorCode::none_published, "no questionnaire published");
  if (latest.status != 200) throw Error(ErrorCode::service_unreachable, "questionnaire fetch failed");
  const QuestionnaireDef def = parse_questionnaire(latest.body);

  const TimestampMs study_start = start_of_day(config.study_start);
  const Date study_end = config.study_start + std::chrono::days{config.days};

  for (int i = 0; i < config.users; ++i) {
    UserOutcome u;
    u.index = i;
    u.email = "participant" + std::to_string(i) + ".s" + std::to_string(config.seed) + "@study.example.org";
    u.completion_probability = config.completion_probabilities[static_cast<std::size_t>(i) %
                                                               config.completion_probabilities.size()];
    const std::uint64_t seed = user_seed(config.seed, i);

    auto signup = Client::expect(client.send("POST", "/v1/participants", ordered_json{{"email", u.email}}.dump()),
                                 201, "sign-up");
    const std::string token = signup.at("participant_token").get<std::string>();

    if (config.telemetry) {
      SimConfig sc;
      sc.seed = seed;
      sc.days = config.days;
      sc.start = study_start;
      sc.profile = config.profile;
      const Trace trace = generate_trace(sc);
      EventLog log;
      ReplayOptions ro;
      ro.acquisition.consent = config.consent;
      ro.transport = &transport;
      ro.sync_period = 6 * kHourMs;
      replay(trace, log, SimDevice::from_seed(seed ^ 0xd1ce5eedULL), ro);
      u.events_stored = log.size();
      u.events_acked = log.sync_cursor();
    }

    std::mt19937_64 engine(seed ^ 0x5e55105ULL);
    std::vector<Session> sessions;
    for (int d = 0; d < config.days; ++d) {
      if (!(uniform_unit(engine) < u.completion_probability)) continue;
      TimestampMs t = study_start + d * kDayMs + 18 * kHourMs +
                      static_cast<TimestampMs>(uniform_below(engine, 4 * 3600)) * kSecondMs;
      Session s = start_session(def, t);
      while (auto item = next_question(s, def)) {
        t += 15 * kSecondMs;
        if (item->kind == ItemKind::likert5)
          answer(s, def, static_cast<int>(1 + uniform_below(engine, 5)), t);
        else if (item->kind == ItemKind::single_choice)
          answer(s, def, static_cast<std::size_t>(uniform_below(engine, item->options.size())), t);
        else
          answer(s, def, std::string("ok"), t);
      }
      sessions.push_back(std::move(s));
      u.completed_days.push_back(d);
    }

    const ComplianceResult cr =
        compliance(compliance_record(config.study_start, config.days, config.threshold, sessions), study_end);
    u.rate = cr.rate;
    u.met = cr.met;
    auto done = Client::expect(
        client.send("POST", "/v1/participants/completion",
                    ordered_json{{"participant_token", token}, {"met_threshold", cr.met}}.dump()),
        200, "completion report");
    if (done.contains("participation_code")) u.participation_code = done.at("participation_code").get<std::string>();
    report.users.push_back(std::move(u));
  }

  std::size_t completers = 0;
  for (const auto& u : report.users) completers += u.participation_code.has_value();
  const std::size_t n = std::min(config.raffle_winners, completers);
  if (n > 0) {
    auto draw = Client::expect(
        client.send("POST", "/v1/raffle/draw", ordered_json{{"n", n}, {"seed", config.seed}}.dump(), true), 200,
        "raffle");
    report.raffle_winners = draw.at("winners").get<std::vector<std::string>>();
  }
  return report;
}

std::string StudyReport::text() const {
  std::ostringstream out;
  out << std::left << std::setw(6) << "user" << std::setw(8) << "p" << std::setw(6) << "days" << std::setw(9)
      << "rate" << std::setw(6) << "met" << std::setw(12) << "code" << std::right << std::setw(9) << "events"
      << "\n";
  std::size_t codes = 0;
  for (const auto& u : users) {
    out << std::left << std::fixed << std::setprecision(2) << std::setw(6) << u.index << std::setw(8)
        << u.completion_probability << std::setw(6) << u.completed_days.size() << std::setprecision(4)
        << std::setw(9) << u.rate << std::setw(6) << (u.met ? "yes" : "no") << std::setw(12)
        << u.participation_code.value_or("-") << std::right << std::setw(9) << u.events_acked << "\n";
    codes += u.participation_code.has_value();
  }
  out << "\n" << codes << " of " << users.size() << " users eligible (threshold " << config.threshold << ")\n";
  out << "raffle (seed " << config.seed << "):";
  for (const auto& w : raffle_winners) out << " " << w;
  out << "\n";
  return out.str();
}

std::string StudyReport::json() const {
  ordered_json j;
  j["seed"] = config.seed;
  j["users"] = config.users;
  j["days"] = config.days;
  j["threshold"] = config.threshold;
  j["study_start"] = format_date(config.study_start);
  ordered_json arr = ordered_json::array();
  for (const auto& u : users) {
    ordered_json o;
    o["index"] = u.index;
    o["email"] = u.email;
    o["completion_probability"] = u.completion_probability;
    o["completed_days"] = u.completed_days;
    o["rate"] = u.rate;
    o["met"] = u.met;
    o["participation_code"] = u.participation_code ? ordered_json(*u.participation_code) : ordered_json(nullptr);
    o["events_stored"] = u.events_stored;
    o["events_acked"] = u.events_acked;
    arr.push_back(std::move(o));
  }
  j["participants"] = std::move(arr);
  j["raffle_winners"] = raffle_winners;
  return j.dump(2) + "\n";
}

}  // namespace daytrace
