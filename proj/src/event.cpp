#include "daytrace/event.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace daytrace {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::empty_value: return "empty-value";
    case ErrorCode::unknown_field: return "unknown-field";
    case ErrorCode::malformed_input: return "malformed-input";
    case ErrorCode::invalid_event: return "invalid-event";
    case ErrorCode::seq_mismatch: return "seq-mismatch";
    case ErrorCode::storage_full: return "storage-full";
    case ErrorCode::storage_error: return "storage-error";
    case ErrorCode::duplicate_identifier: return "duplicate-identifier";
    case ErrorCode::checksum_mismatch: return "checksum-mismatch";
    case ErrorCode::schema_rejection: return "schema-rejection";
    case ErrorCode::duplicate_enrollment: return "duplicate-enrollment";
    case ErrorCode::invalid_email: return "invalid-email";
    case ErrorCode::unknown_token: return "unknown-token";
    case ErrorCode::already_reported: return "already-reported";
    case ErrorCode::insufficient_completers: return "insufficient-completers";
    case ErrorCode::none_published: return "none-published";
    case ErrorCode::version_conflict: return "version-conflict";
    case ErrorCode::version_mismatch: return "version-mismatch";
    case ErrorCode::incomplete_session: return "incomplete-session";
    case ErrorCode::non_scorable_item: return "non-scorable-item";
    case ErrorCode::study_still_running: return "study-still-running";
    case ErrorCode::invalid_config: return "invalid-config";
    case ErrorCode::service_unreachable: return "service-unreachable";
  }
  return "unknown";
}

Date date_of(TimestampMs t, std::chrono::minutes utc_offset) {
  auto tp = std::chrono::sys_time<std::chrono::milliseconds>(std::chrono::milliseconds(t)) +
            utc_offset;
  return std::chrono::floor<std::chrono::days>(tp);
}

TimestampMs start_of_day(Date d, std::chrono::minutes utc_offset) {
  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(d.time_since_epoch());
  return ms.count() - std::chrono::duration_cast<std::chrono::milliseconds>(utc_offset).count();
}

std::string format_date(Date d) {
  std::chrono::year_month_day ymd{d};
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::optional<Date> parse_date(std::string_view text) {
  if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
  auto digits = [&](std::size_t pos, std::size_t n) -> std::optional<int> {
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
      if (text[i] < '0' || text[i] > '9') return std::nullopt;
      v = v * 10 + (text[i] - '0');
    }
    return v;
  };
  auto y = digits(0, 4), m = digits(5, 2), d = digits(8, 2);
  if (!y || !m || !d) return std::nullopt;
  std::chrono::year_month_day ymd{std::chrono::year{*y}, std::chrono::month{static_cast<unsigned>(*m)},
                                  std::chrono::day{static_cast<unsigned>(*d)}};
  if (!ymd.ok()) return std::nullopt;
  return std::chrono::sys_days{ymd};
}

std::string to_hex(const unsigned char* data, std::size_t size) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(size * 2, '0');
  for (std::size_t i = 0; i < size; ++i) {
    out[2 * i] = kDigits[data[i] >> 4];
    out[2 * i + 1] = kDigits[data[i] & 0xf];
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, kSourceKindCount> kTags{
    "location",  "weather",    "light",      "accelerometer", "activity",          "steps",
    "phone_lock", "headphone", "battery",    "wifi",          "bluetooth",         "call_meta",
    "music_meta", "photo_meta", "notification_meta", "app_usage", "app_traffic",
};

constexpr std::int64_t kMicro = 1'000'000;

constexpr std::array<std::string_view, 6> kWeatherConditions{"clear", "cloudy", "fog",
                                                             "rain",  "snow",   "storm"};
constexpr std::array<std::string_view, 6> kActivityKinds{"in_vehicle", "on_bicycle", "running",
                                                         "still",      "unknown",    "walking"};
constexpr std::array<std::string_view, 3> kCallDirections{"incoming", "missed", "outgoing"};

constexpr FieldSpec integer(std::string_view k, std::int64_t lo, std::int64_t hi) {
  return {k, FieldType::integer, lo, hi, {}};
}
constexpr FieldSpec real(std::string_view k, std::int64_t lo, std::int64_t hi) {
  return {k, FieldType::real, lo * kMicro, hi * kMicro, {}};
}
constexpr FieldSpec boolean(std::string_view k) { return {k, FieldType::boolean}; }
constexpr FieldSpec digest(std::string_view k) { return {k, FieldType::digest}; }
constexpr FieldSpec token(std::string_view k, std::span<const std::string_view> allowed) {
  return {k, FieldType::token, INT64_MIN, INT64_MAX, allowed};
}

constexpr std::int64_t kMaxBytes = INT64_C(1) << 50;

const FieldSpec kLocation[] = {real("accuracy_m", 0, 1'000'000), real("lat", -90, 90),
                               real("lon", -180, 180)};
const FieldSpec kWeather[] = {token("condition", kWeatherConditions), real("humidity", 0, 1),
                              real("temperature_c", -100, 100)};
const FieldSpec kLight[] = {integer("segment_from", 0, 64), integer("segment_to", 0, 64)};
const FieldSpec kAccel[] = {real("x", -1000, 1000), real("y", -1000, 1000), real("z", -1000, 1000)};
const FieldSpec kActivity[] = {real("confidence", 0, 1), token("kind", kActivityKinds)};
const FieldSpec kSteps[] = {integer("count", 0, 100'000)};
const FieldSpec kPhoneLock[] = {boolean("locked")};
const FieldSpec kHeadphone[] = {boolean("plugged")};
const FieldSpec kBattery[] = {boolean("charging"), real("level", 0, 1)};
const FieldSpec kWifi[] = {digest("bssid_digest"), boolean("connected"), digest("ssid_digest")};
const FieldSpec kBluetooth[] = {digest("address_digest"), boolean("connected"),
                                digest("name_digest")};
const FieldSpec kCall[] = {token("direction", kCallDirections), integer("duration_s", 0, 86'400),
                           digest("peer_digest")};
const FieldSpec kMusic[] = {digest("artist_digest"), integer("duration_s", 0, 86'400),
                            digest("track_digest")};
const FieldSpec kPhoto[] = {integer("count", 0, 100'000)};
const FieldSpec kNotification[] = {digest("app_digest")};
const FieldSpec kAppUsage[] = {digest("app_digest"), integer("hour_start", 0, INT64_MAX),
                               integer("seconds_used", 0, 3600)};
const FieldSpec kAppTraffic[] = {digest("app_digest"), integer("hour_start", 0, INT64_MAX),
                                 integer("rx_bytes", 0, kMaxBytes), integer("tx_bytes", 0, kMaxBytes)};

constexpr std::array<std::string_view, 13> kRawIdentifierKeys{
    "address", "app_package", "artist", "bssid", "device_name", "email", "mac",
    "name",    "package",     "peer_number", "phone_number", "ssid", "track"};

}  // namespace

std::string_view wire_tag(SourceKind source) { return kTags[index_of(source)]; }

std::optional<SourceKind> source_from_tag(std::string_view tag) {
  for (std::size_t i = 0; i < kTags.size(); ++i)
    if (kTags[i] == tag) return kAllSources[i];
  return std::nullopt;
}

Real Real::from_double(double v) {
  if (!std::isfinite(v)) throw Error(ErrorCode::invalid_argument, "non-finite real");
  return Real(static_cast<std::int64_t>(std::llround(v * 1e6)));
}

bool is_digest(std::string_view s) {
  return s.size() == 64 && std::all_of(s.begin(), s.end(), [](char c) {
           return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
         });
}

std::optional<PseudonymId> PseudonymId::parse(std::string_view hex) {
  if (!is_digest(hex)) return std::nullopt;
  return PseudonymId(std::string(hex), Unchecked{});
}

PseudonymId::PseudonymId(std::string hex) : hex_(std::move(hex)) {
  if (!is_digest(hex_)) throw Error(ErrorCode::invalid_argument, "pseudonym must be 64 lowercase hex chars");
}

std::span<const FieldSpec> payload_schema(SourceKind source) {
  switch (source) {
    case SourceKind::location: return kLocation;
    case SourceKind::weather: return kWeather;
    case SourceKind::light: return kLight;
    case SourceKind::accelerometer: return kAccel;
    case SourceKind::activity: return kActivity;
    case SourceKind::steps: return kSteps;
    case SourceKind::phone_lock: return kPhoneLock;
    case SourceKind::headphone: return kHeadphone;
    case SourceKind::battery: return kBattery;
    case SourceKind::wifi: return kWifi;
    case SourceKind::bluetooth: return kBluetooth;
    case SourceKind::call_meta: return kCall;
    case SourceKind::music_meta: return kMusic;
    case SourceKind::photo_meta: return kPhoto;
    case SourceKind::notification_meta: return kNotification;
    case SourceKind::app_usage: return kAppUsage;
    case SourceKind::app_traffic: return kAppTraffic;
  }
  return {};
}

bool is_raw_identifier_key(std::string_view key) {
  if (key.size() >= 4 && key.substr(key.size() - 4) == "_raw") return true;
  return std::find(kRawIdentifierKeys.begin(), kRawIdentifierKeys.end(), key) !=
         kRawIdentifierKeys.end();
}

std::string_view Rejection::reason() const {
  switch (code) {
    case RejectionCode::invalid_seq: return "invalid seq";
    case RejectionCode::negative_timestamp: return "negative timestamp";
    case RejectionCode::non_increasing_seq: return "non-increasing seq";
    case RejectionCode::raw_identifier_field: return "raw identifier field";
    case RejectionCode::unknown_key: return "unknown key";
    case RejectionCode::missing_key: return "missing key";
    case RejectionCode::wrong_type: return "wrong type";
    case RejectionCode::out_of_range: return "out of range";
    case RejectionCode::invalid_value: return "invalid value";
  }
  return "unknown";
}

std::string Rejection::describe() const {
  std::string out(reason());
  if (!key.empty()) out += " '" + key + "'";
  return out;
}

namespace {

std::optional<RejectionCode> check_field(const FieldSpec& field, const Value& v) {
  switch (field.type) {
    case FieldType::integer: {
      const auto* i = std::get_if<std::int64_t>(&v);
      if (!i) return RejectionCode::wrong_type;
      if (*i < field.min || *i > field.max) return RejectionCode::out_of_range;
      return std::nullopt;
    }
    case FieldType::real: {
      const auto* r = std::get_if<Real>(&v);
      if (!r) return RejectionCode::wrong_type;
      if (r->micros() < field.min || r->micros() > field.max) return RejectionCode::out_of_range;
      return std::nullopt;
    }
    case FieldType::boolean:
      if (!std::holds_alternative<bool>(v)) return RejectionCode::wrong_type;
      return std::nullopt;
    case FieldType::digest: {
      const auto* s = std::get_if<std::string>(&v);
      if (!s) return RejectionCode::wrong_type;
      if (!is_digest(*s)) return RejectionCode::invalid_value;
      return std::nullopt;
    }
    case FieldType::token: {
      const auto* s = std::get_if<std::string>(&v);
      if (!s) return RejectionCode::wrong_type;
      if (std::find(field.tokens.begin(), field.tokens.end(), *s) == field.tokens.end())
        return RejectionCode::invalid_value;
      return std::nullopt;
    }
  }
  return RejectionCode::wrong_type;
}

}  // namespace

std::optional<Rejection> validate(const EventRecord& event,
                                  std::optional<std::uint64_t> previous_seq) {
  if (event.seq == 0) return Rejection{RejectionCode::invalid_seq, {}};
  if (event.timestamp < 0) return Rejection{RejectionCode::negative_timestamp, {}};
  if (previous_seq && event.seq <= *previous_seq)
    return Rejection{RejectionCode::non_increasing_seq, {}};

  const auto schema = payload_schema(event.source);
  for (const auto& [key, value] : event.payload) {
    if (is_raw_identifier_key(key)) return Rejection{RejectionCode::raw_identifier_field, key};
    auto it = std::find_if(schema.begin(), schema.end(),
                           [&](const FieldSpec& f) { return f.key == key; });
    if (it == schema.end()) return Rejection{RejectionCode::unknown_key, key};
    if (auto bad = check_field(*it, value)) return Rejection{*bad, key};
  }
  for (const auto& field : schema) {
    if (event.payload.find(field.key) == event.payload.end())
      return Rejection{RejectionCode::missing_key, std::string(field.key)};
  }
  return std::nullopt;
}

bool ContextSnapshot::empty() const {
  return std::none_of(values_.begin(), values_.end(), [](const auto& v) { return v.has_value(); });
}

}  // namespace daytrace
