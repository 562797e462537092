#include "daytrace/service.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iterator>
#include <regex>

#include "daytrace/anonymizer.hpp"

namespace daytrace {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_atomically(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw Error(ErrorCode::storage_error, "cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::optional<std::uint64_t> parse_u64(std::string_view s) {
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

bool is_participation_code(std::string_view code) {
  return code.size() == kParticipationCodeLength &&
         std::all_of(code.begin(), code.end(),
                     [](char c) { return kCrockfordAlphabet.find(c) != std::string_view::npos; });
}

bool is_valid_email(std::string_view email) {
  static const std::regex kPattern(R"(^[A-Za-z0-9._%+\-]+@[A-Za-z0-9\-]+(\.[A-Za-z0-9\-]+)*\.[A-Za-z]{2,}$)");
  return email.size() <= 254 && std::regex_match(email.begin(), email.end(), kPattern);
}

// ---------------------------------------------------------------------------
// Participant registry

ParticipantRegistry::ParticipantRegistry(std::filesystem::path file) : file_(std::move(file)) {
  if (file_.empty() || !std::filesystem::exists(file_)) return;
  std::string text = slurp(file_);
  std::size_t pos = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    auto j = json::parse(line);
    ParticipantRecord r;
    r.email = j.at("email").get<std::string>();
    r.participant_token = j.at("participant_token").get<std::string>();
    r.enrolled_at = j.at("enrolled_at").get<TimestampMs>();
    r.report_received = j.at("report_received").get<bool>();
    r.completion_reported = j.at("completion_reported").get<bool>();
    if (!j.at("participation_code").is_null()) {
      r.participation_code = j.at("participation_code").get<std::string>();
      codes_.insert(*r.participation_code);
    }
    by_email_[lower(r.email)] = records_.size();
    by_token_[r.participant_token] = records_.size();
    records_.push_back(std::move(r));
  }
}

std::string ParticipantRegistry::dump() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const auto& r : records_) {
    ordered_json j;
    j["email"] = r.email;
    j["participant_token"] = r.participant_token;
    j["enrolled_at"] = r.enrolled_at;
    j["report_received"] = r.report_received;
    j["completion_reported"] = r.completion_reported;
    j["participation_code"] = r.participation_code ? ordered_json(*r.participation_code) : ordered_json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

void ParticipantRegistry::persist() const {
  if (file_.empty()) return;
  std::string out;
  for (const auto& r : records_) {
    ordered_json j;
    j["email"] = r.email;
    j["participant_token"] = r.participant_token;
    j["enrolled_at"] = r.enrolled_at;
    j["report_received"] = r.report_received;
    j["completion_reported"] = r.completion_reported;
    j["participation_code"] = r.participation_code ? ordered_json(*r.participation_code) : ordered_json(nullptr);
    out += j.dump() + "\n";
  }
  write_atomically(file_, out);
}

std::string ParticipantRegistry::signup(std::string_view email, TimestampMs now, RandomSource& rng) {
  if (!is_valid_email(email)) throw Error(ErrorCode::invalid_email, "not a syntactically valid email");
  std::lock_guard lock(mu_);
  const std::string key = lower(email);
  if (by_email_.count(key)) throw Error(ErrorCode::duplicate_enrollment, "email already enrolled");
  std::string token;
  do {
    token = random_hex(rng, 16);
  } while (by_token_.count(token));
  by_email_[key] = records_.size();
  by_token_[token] = records_.size();
  records_.push_back(ParticipantRecord{std::string(email), token, now, false, false, std::nullopt});
  persist();
  return token;
}

std::string ParticipantRegistry::issue_unique_code(RandomSource& rng) {
  while (true) {
    std::uint64_t bits = rng.next_u64() & ((std::uint64_t{1} << 50) - 1);
    std::string code(kParticipationCodeLength, '0');
    for (std::size_t i = 0; i < kParticipationCodeLength; ++i) {
      code[kParticipationCodeLength - 1 - i] = kCrockfordAlphabet[bits & 31];
      bits >>= 5;
    }
    if (codes_.insert(code).second) return code;
    ++code_collisions_;
  }
}

CompletionResult ParticipantRegistry::report_completion(std::string_view token, bool met_threshold,
                                                        RandomSource& rng) {
  std::lock_guard lock(mu_);
  auto it = by_token_.find(token);
  if (it == by_token_.end()) throw Error(ErrorCode::unknown_token, "no participant with this token");
  ParticipantRecord& r = records_[it->second];
  if (r.report_received) throw Error(ErrorCode::already_reported, "completion already reported");
  r.report_received = true;
  if (met_threshold) {
    r.completion_reported = true;
    r.participation_code = issue_unique_code(rng);
  }
  persist();
  return {met_threshold, r.participation_code};
}

std::vector<std::string> ParticipantRegistry::draw_raffle(std::size_t n, std::uint64_t seed) const {
  std::lock_guard lock(mu_);
  std::vector<std::string> pool;
  for (const auto& r : records_)
    if (r.completion_reported) pool.push_back(r.email);
  if (n > pool.size())
    throw Error(ErrorCode::insufficient_completers,
                std::to_string(n) + " winners requested, " + std::to_string(pool.size()) + " completers");
  std::mt19937_64 engine(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t j = i + static_cast<std::size_t>(uniform_below(engine, pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  return pool;
}

std::optional<ParticipantRecord> ParticipantRegistry::find_by_token(std::string_view token) const {
  std::lock_guard lock(mu_);
  auto it = by_token_.find(token);
  if (it == by_token_.end()) return std::nullopt;
  return records_[it->second];
}

std::vector<ParticipantRecord> ParticipantRegistry::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

std::size_t ParticipantRegistry::size() const {
  std::lock_guard lock(mu_);
  return records_.size();
}

std::size_t ParticipantRegistry::completers() const {
  std::lock_guard lock(mu_);
  return static_cast<std::size_t>(
      std::count_if(records_.begin(), records_.end(), [](const auto& r) { return r.completion_reported; }));
}

// ---------------------------------------------------------------------------
// Device event store

DeviceEventStore::DeviceEventStore(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) return;
  std::filesystem::create_directories(dir_);
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.path().extension() != ".log") continue;
    auto pid = PseudonymId::parse(entry.path().stem().string());
    if (!pid) continue;
    Device& dev = devices_[pid->str()];
    std::string text = slurp(entry.path());
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto nl = text.find('\n', pos);
      if (nl == std::string::npos) break;  // torn tail
      std::string line = text.substr(pos, nl - pos);
      pos = nl + 1;
      try {
        EventRecord ev = canonical_decode(line);
        if (ev.pseudonym == *pid && !validate(ev)) dev.lines.emplace(ev.seq, std::move(line));
      } catch (const DecodeError&) {
      }
    }
    while (dev.lines.count(dev.acked + 1)) ++dev.acked;
  }
}

std::filesystem::path DeviceEventStore::file_for(const PseudonymId& p) const {
  return dir_ / (p.str() + ".log");
}

std::uint64_t DeviceEventStore::ingest(const PseudonymId& pseudonym, std::uint64_t first_seq,
                                       std::uint64_t last_seq, std::string_view checksum,
                                       std::string_view body) {
  if (sha256_hex(body) != checksum) throw Error(ErrorCode::checksum_mismatch, "batch body checksum differs");
  if (first_seq == 0 || last_seq < first_seq)
    throw Error(ErrorCode::schema_rejection, "bad seq range");
  if (last_seq - first_seq + 1 > max_batch) throw Error(ErrorCode::schema_rejection, "batch too large");
  if (!body.empty() && body.back() != '\n') throw Error(ErrorCode::schema_rejection, "body must end with newline");

  std::vector<std::pair<std::uint64_t, std::string>> parsed;
  std::size_t pos = 0;
  std::optional<std::uint64_t> prev;
  while (pos < body.size()) {
    auto nl = body.find('\n', pos);
    std::string_view line = body.substr(pos, nl - pos);
    pos = nl + 1;
    EventRecord ev = [&] {
      try {
        return canonical_decode(line);
      } catch (const DecodeError& e) {
        throw Error(ErrorCode::schema_rejection, std::string("line ") + std::to_string(parsed.size() + 1) + ": " + e.what());
      }
    }();
    if (auto rej = validate(ev, prev))
      throw Error(ErrorCode::schema_rejection, "seq " + std::to_string(ev.seq) + ": " + rej->describe());
    if (ev.pseudonym != pseudonym) throw Error(ErrorCode::schema_rejection, "event pseudonym differs from header");
    if (ev.seq != first_seq + parsed.size()) throw Error(ErrorCode::schema_rejection, "events do not cover the declared range");
    prev = ev.seq;
    parsed.emplace_back(ev.seq, std::string(line));
  }
  if (parsed.size() != last_seq - first_seq + 1)
    throw Error(ErrorCode::schema_rejection, "event count does not match the declared range");

  std::lock_guard lock(mu_);
  Device& dev = devices_[pseudonym.str()];
  std::string appended;
  for (auto& [seq, line] : parsed) {
    auto [it, inserted] = dev.lines.emplace(seq, line);
    if (inserted) {
      appended += line;
      appended += '\n';
    }
  }
  if (!dir_.empty() && !appended.empty()) {
    std::ofstream out(file_for(pseudonym), std::ios::binary | std::ios::app);
    out << appended;
    out.flush();
    if (!out) throw Error(ErrorCode::storage_error, "cannot append to event store");
  }
  while (dev.lines.count(dev.acked + 1)) ++dev.acked;
  return dev.acked;
}

std::size_t DeviceEventStore::delete_device(const PseudonymId& pseudonym) {
  std::lock_guard lock(mu_);
  auto it = devices_.find(pseudonym.str());
  std::size_t n = 0;
  if (it != devices_.end()) {
    n = it->second.lines.size();
    devices_.erase(it);
  }
  if (!dir_.empty()) {
    std::error_code ec;
    std::filesystem::remove(file_for(pseudonym), ec);
  }
  return n;
}

std::uint64_t DeviceEventStore::acked_through(const PseudonymId& pseudonym) const {
  std::lock_guard lock(mu_);
  auto it = devices_.find(pseudonym.str());
  return it == devices_.end() ? 0 : it->second.acked;
}

std::size_t DeviceEventStore::count(const PseudonymId& pseudonym) const {
  std::lock_guard lock(mu_);
  auto it = devices_.find(pseudonym.str());
  return it == devices_.end() ? 0 : it->second.lines.size();
}

std::size_t DeviceEventStore::total() const {
  std::lock_guard lock(mu_);
  std::size_t n = 0;
  for (const auto& [_, d] : devices_) n += d.lines.size();
  return n;
}

std::vector<PseudonymId> DeviceEventStore::pseudonyms() const {
  std::lock_guard lock(mu_);
  std::vector<PseudonymId> out;
  for (const auto& [p, _] : devices_) out.emplace_back(p);
  return out;
}

std::vector<std::string> DeviceEventStore::lines(const PseudonymId& pseudonym) const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  auto it = devices_.find(pseudonym.str());
  if (it == devices_.end()) return out;
  for (const auto& [_, l] : it->second.lines) out.push_back(l);
  return out;
}

std::vector<EventRecord> DeviceEventStore::events(const PseudonymId& pseudonym) const {
  std::vector<EventRecord> out;
  for (const auto& l : lines(pseudonym)) out.push_back(canonical_decode(l));
  return out;
}

std::string DeviceEventStore::dump() const {
  std::lock_guard lock(mu_);
  std::string out;
  for (const auto& [_, d] : devices_)
    for (const auto& [seq, l] : d.lines) out += l + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Questionnaires

QuestionnaireRepository::QuestionnaireRepository(std::filesystem::path dir) : dir_(std::move(dir)) {
  if (dir_.empty()) return;
  std::filesystem::create_directories(dir_);
  for (const auto& entry : std::filesystem::directory_iterator(dir_)) {
    if (entry.path().extension() != ".json") continue;
    std::string text = slurp(entry.path());
    QuestionnaireDef def = parse_questionnaire(text);
    versions_[def.version] = text;
  }
}

void QuestionnaireRepository::publish(const QuestionnaireDef& def) {
  check_definition(def);
  std::string text = serialize(def);
  std::lock_guard lock(mu_);
  if (auto it = versions_.find(def.version); it != versions_.end()) {
    if (it->second == text) return;
    throw Error(ErrorCode::version_conflict, "version " + std::to_string(def.version) + " is already published");
  }
  if (!versions_.empty() && def.version < versions_.rbegin()->first)
    throw Error(ErrorCode::version_conflict, "versions must increase");
  if (!dir_.empty()) write_atomically(dir_ / ("v" + std::to_string(def.version) + ".json"), text);
  versions_.emplace(def.version, std::move(text));
}

std::string QuestionnaireRepository::latest() const {
  std::lock_guard lock(mu_);
  if (versions_.empty()) throw Error(ErrorCode::none_published, "no questionnaire published");
  return versions_.rbegin()->second;
}

int QuestionnaireRepository::latest_version() const {
  std::lock_guard lock(mu_);
  if (versions_.empty()) throw Error(ErrorCode::none_published, "no questionnaire published");
  return versions_.rbegin()->first;
}

// ---------------------------------------------------------------------------
// Service

namespace {

std::filesystem::path sub(const std::filesystem::path& root, const char* name) {
  if (root.empty()) return {};
  std::filesystem::create_directories(root / name);
  return root / name;
}

}  // namespace

StudyService::StudyService(ServiceOptions options)
    : options_(std::move(options)),
      rng_(options_.rng ? *options_.rng : static_cast<RandomSource&>(system_rng_)),
      registry_(options_.data_dir.empty() ? std::filesystem::path{}
                                          : sub(options_.data_dir, "registry") / "participants.jsonl"),
      events_(sub(options_.data_dir, "events")),
      questionnaires_(sub(options_.data_dir, "questionnaires")) {}

TimestampMs StudyService::now() const {
  if (options_.clock) return options_.clock();
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::uint64_t StudyService::ingest(const PseudonymId& pseudonym, std::uint64_t first_seq,
                                   std::uint64_t last_seq, std::string_view checksum, std::string_view body) {
  return events_.ingest(pseudonym, first_seq, last_seq, checksum, body);
}

std::string StudyService::signup(std::string_view email) {
  std::lock_guard lock(rng_mu_);
  return registry_.signup(email, now(), rng_);
}

CompletionResult StudyService::report_completion(std::string_view token, bool met_threshold) {
  std::lock_guard lock(rng_mu_);
  return registry_.report_completion(token, met_threshold, rng_);
}

std::vector<std::string> StudyService::draw_raffle(std::size_t n, std::uint64_t seed) const {
  return registry_.draw_raffle(n, seed);
}

void StudyService::publish_questionnaire(const QuestionnaireDef& def) { questionnaires_.publish(def); }

std::string StudyService::latest_questionnaire() const { return questionnaires_.latest(); }

std::size_t StudyService::delete_device_data(const PseudonymId& pseudonym) {
  return events_.delete_device(pseudonym);
}

std::vector<DailyAggregate> StudyService::aggregates(const PseudonymId& pseudonym, Date from, Date to) const {
  std::vector<DailyAggregate> out;
  if (to < from) return out;
  const auto evs = events_.events(pseudonym);
  for (Date d = from; d <= to; d += std::chrono::days{1}) out.push_back(daily_aggregate(evs, d));
  return out;
}

std::string aggregate_to_json(const DailyAggregate& a) {
  ordered_json j;
  j["date"] = format_date(a.date);
  j["usage_seconds"] = a.usage_seconds;
  j["unlock_count"] = a.unlock_count;
  j["distinct_location_cells"] = a.distinct_location_cells;
  j["steps_total"] = a.steps_total;
  j["notifications_per_app"] = a.notifications_per_app;
  j["photos_count"] = a.photos_count;
  j["music_play_count"] = a.music_play_count;
  return j.dump();
}

namespace {

HttpResponse json_response(int status, const ordered_json& body) {
  HttpResponse r;
  r.status = status;
  r.headers["Content-Type"] = "application/json";
  r.body = body.dump();
  return r;
}

HttpResponse error_response(int status, ErrorCode code, const std::string& detail) {
  ordered_json j;
  j["error"] = to_string(code);
  j["detail"] = detail;
  return json_response(status, j);
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::checksum_mismatch: return 422;
    case ErrorCode::duplicate_enrollment:
    case ErrorCode::already_reported:
    case ErrorCode::insufficient_completers:
    case ErrorCode::version_conflict: return 409;
    case ErrorCode::unknown_token:
    case ErrorCode::none_published: return 404;
    case ErrorCode::storage_error:
    case ErrorCode::storage_full: return 503;
    default: return 400;
  }
}

bool carries_token(const HttpRequest& r) {
  return r.headers.count("participant_token") || r.headers.count("token");
}

bool carries_pseudonym(const HttpRequest& r) {
  return r.headers.count("pseudonym") || r.path_only().starts_with("/v1/devices/");
}

// Parses a JSON object body whose keys must be exactly `allowed` (subset allowed
// when `required` is false).
ordered_json strict_object(const std::string& body, std::initializer_list<std::string_view> allowed) {
  ordered_json j = ordered_json::parse(body);
  if (!j.is_object()) throw Error(ErrorCode::schema_rejection, "body must be a JSON object");
  for (const auto& [k, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw Error(ErrorCode::schema_rejection, "unexpected field '" + k + "'");
  }
  for (auto k : allowed)
    if (!j.contains(std::string(k))) throw Error(ErrorCode::schema_rejection, "missing field '" + std::string(k) + "'");
  return j;
}

}  // namespace

HttpResponse StudyService::handle(const HttpRequest& req) {
  const std::string path = req.path_only();
  try {
    // No endpoint may ever see a participant token together with a pseudonym.
    if (carries_pseudonym(req) && (carries_token(req) || req.body.find("participant_token") != std::string::npos))
      throw Error(ErrorCode::schema_rejection, "request mixes participant and device identifiers");

    if (req.method == "POST" && path == "/v1/events") {
      auto header = [&](const char* name) -> std::string {
        auto it = req.headers.find(name);
        if (it == req.headers.end()) throw Error(ErrorCode::schema_rejection, std::string("missing header ") + name);
        return it->second;
      };
      auto pid = PseudonymId::parse(header("pseudonym"));
      auto first = parse_u64(header("first_seq"));
      auto last = parse_u64(header("last_seq"));
      if (!pid || !first || !last) throw Error(ErrorCode::schema_rejection, "malformed batch headers");
      ordered_json j;
      j["acked_through"] = ingest(*pid, *first, *last, header("checksum"), req.body);
      return json_response(200, j);
    }

    if (req.method == "POST" && path == "/v1/participants") {
      auto j = strict_object(req.body, {"email"});
      ordered_json out;
      out["participant_token"] = signup(j.at("email").get<std::string>());
      return json_response(201, out);
    }

    if (req.method == "POST" && path == "/v1/participants/completion") {
      auto j = strict_object(req.body, {"participant_token", "met_threshold"});
      const auto token = j.at("participant_token").get<std::string>();
      try {
        CompletionResult r = report_completion(token, j.at("met_threshold").get<bool>());
        ordered_json out;
        out["status"] = r.eligible ? "eligible" : "ineligible";
        if (r.participation_code) out["participation_code"] = *r.participation_code;
        return json_response(200, out);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::already_reported) throw;
        ordered_json out;
        out["error"] = to_string(e.code());
        auto rec = registry_.find_by_token(token);
        if (rec && rec->participation_code) out["participation_code"] = *rec->participation_code;
        return json_response(409, out);
      }
    }

    if (req.method == "POST" && (path == "/v1/raffle/draw" || path == "/v1/questionnaires")) {
      auto admin = req.headers.find("admin");
      if (options_.admin_key.empty() || admin == req.headers.end() || admin->second != options_.admin_key)
        return error_response(403, ErrorCode::invalid_argument, "admin flag required");
      if (path == "/v1/questionnaires") {
        publish_questionnaire(parse_questionnaire(req.body));
        return json_response(201, ordered_json{{"version", questionnaires_.latest_version()}});
      }
      auto j = strict_object(req.body, {"n", "seed"});
      ordered_json out;
      out["winners"] = draw_raffle(j.at("n").get<std::size_t>(), j.at("seed").get<std::uint64_t>());
      return json_response(200, out);
    }

    if (req.method == "GET" && path == "/v1/questionnaires/latest") {
      const int version = questionnaires_.latest_version();
      if (auto iv = req.headers.find("If-Version"); iv != req.headers.end()) {
        auto cached = parse_u64(iv->second);
        if (cached && *cached == static_cast<std::uint64_t>(version)) {
          HttpResponse r;
          r.status = 304;
          r.headers["Questionnaire-Version"] = std::to_string(version);
          return r;
        }
      }
      HttpResponse r;
      r.status = 200;
      r.headers["Content-Type"] = "application/json";
      r.headers["Questionnaire-Version"] = std::to_string(version);
      r.body = latest_questionnaire();
      return r;
    }

    if (path.starts_with("/v1/devices/")) {
      std::string_view rest(path);
      rest.remove_prefix(12);
      auto slash = rest.find('/');
      if (slash == std::string_view::npos) return error_response(404, ErrorCode::invalid_argument, "not found");
      auto pid = PseudonymId::parse(rest.substr(0, slash));
      if (!pid) throw Error(ErrorCode::schema_rejection, "bad pseudonym in path");
      auto tail = rest.substr(slash);
      if (req.method == "DELETE" && tail == "/events") {
        ordered_json out;
        out["removed"] = delete_device_data(*pid);
        return json_response(200, out);
      }
      if (req.method == "GET" && tail == "/aggregates") {
        auto q = req.query();
        auto from = parse_date(q["from"]);
        auto to = parse_date(q["to"]);
        if (!from || !to || *to < *from || (*to - *from).count() > 366)
          throw Error(ErrorCode::schema_rejection, "from/to must be YYYY-MM-DD, at most 367 days apart");
        ordered_json arr = ordered_json::array();
        for (const auto& a : aggregates(*pid, *from, *to)) arr.push_back(ordered_json::parse(aggregate_to_json(a)));
        return json_response(200, arr);
      }
    }
    return error_response(404, ErrorCode::invalid_argument, "no route for " + req.method + " " + path);
  } catch (const Error& e) {
    return error_response(status_for(e.code()), e.code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return error_response(400, ErrorCode::schema_rejection, e.what());
  }
}

}  // namespace daytrace
