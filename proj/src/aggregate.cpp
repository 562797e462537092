#include <algorithm>
#include <set>

#include "daytrace/store.hpp"

namespace daytrace {

namespace {

std::int64_t round_to_thousand(std::int64_t micros) {
  return micros >= 0 ? (micros + 500) / 1000 : -((-micros + 500) / 1000);
}

template <typename T>
const T* field(const EventRecord& e, std::string_view key) {
  auto it = e.payload.find(key);
  return it == e.payload.end() ? nullptr : std::get_if<T>(&it->second);
}

}  // namespace

std::pair<std::int64_t, std::int64_t> location_cell(Real lat, Real lon) {
  return {round_to_thousand(lat.micros()), round_to_thousand(lon.micros())};
}

DailyAggregate daily_aggregate(std::span<const EventRecord> events, Date date,
                               std::chrono::minutes utc_offset) {
  DailyAggregate agg;
  agg.date = date;
  const TimestampMs day_start = start_of_day(date, utc_offset);
  const TimestampMs day_end = day_start + kDayMs;
  auto in_day = [&](TimestampMs t) { return t >= day_start && t < day_end; };
  auto overlap = [&](TimestampMs a, TimestampMs b) {
    return std::max<TimestampMs>(0, std::min(b, day_end) - std::max(a, day_start));
  };

  TimestampMs usage_ms = 0;
  bool unlocked = false;
  TimestampMs unlocked_at = 0;
  std::set<std::pair<std::int64_t, std::int64_t>> cells;

  for (const auto& e : events) {
    switch (e.source) {
      case SourceKind::phone_lock: {
        const bool* locked = field<bool>(e, "locked");
        if (!locked) break;
        if (!*locked) {
          if (in_day(e.timestamp)) ++agg.unlock_count;
          if (!unlocked) unlocked_at = e.timestamp;
          unlocked = true;
        } else if (unlocked) {
          if (e.timestamp >= unlocked_at) usage_ms += overlap(unlocked_at, e.timestamp);
          unlocked = false;
        }
        break;
      }
      case SourceKind::location: {
        const Real* lat = field<Real>(e, "lat");
        const Real* lon = field<Real>(e, "lon");
        if (lat && lon && in_day(e.timestamp)) cells.insert(location_cell(*lat, *lon));
        break;
      }
      case SourceKind::steps:
        if (const auto* c = field<std::int64_t>(e, "count"); c && in_day(e.timestamp)) agg.steps_total += *c;
        break;
      case SourceKind::notification_meta:
        if (const auto* app = field<std::string>(e, "app_digest"); app && in_day(e.timestamp))
          ++agg.notifications_per_app[*app];
        break;
      case SourceKind::photo_meta:
        if (const auto* c = field<std::int64_t>(e, "count"); c && in_day(e.timestamp)) agg.photos_count += *c;
        break;
      case SourceKind::music_meta:
        if (in_day(e.timestamp)) ++agg.music_play_count;
        break;
      default:
        break;
    }
  }
  if (unlocked) {
    const TimestampMs own_day_end = start_of_day(date_of(unlocked_at, utc_offset), utc_offset) + kDayMs;
    usage_ms += overlap(unlocked_at, own_day_end);
  }
  agg.usage_seconds = std::min<std::int64_t>(usage_ms / kSecondMs, 86'400);
  agg.distinct_location_cells = static_cast<std::int64_t>(cells.size());
  return agg;
}

std::array<DailyAggregate, 7> weekly_view(std::span<const EventRecord> events, Date end,
                                          std::chrono::minutes utc_offset) {
  std::array<DailyAggregate, 7> out;
  for (int i = 0; i < 7; ++i) out[i] = daily_aggregate(events, end - std::chrono::days{6 - i}, utc_offset);
  return out;
}

std::map<std::string, std::int64_t> aggregate_metrics(const DailyAggregate& a) {
  std::int64_t notifications = 0;
  for (const auto& [_, n] : a.notifications_per_app) notifications += n;
  return {
      {"usage_minutes", a.usage_seconds / 60},
      {"unlocks", a.unlock_count},
      {"locations", a.distinct_location_cells},
      {"steps", a.steps_total},
      {"notifications", notifications},
      {"photos", a.photos_count},
      {"music_plays", a.music_play_count},
  };
}

}  // namespace daytrace
