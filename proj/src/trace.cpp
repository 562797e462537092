#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "daytrace/random.hpp"
#include "daytrace/sim.hpp"

namespace daytrace {

namespace {

constexpr TimestampMs kDefaultStart = 1'767'571'200'000;  // 2026-01-05T00:00:00Z

constexpr std::string_view kWeatherConditions[] = {"clear", "cloudy", "fog", "rain", "snow", "storm"};
constexpr std::string_view kDirections[] = {"incoming", "missed", "outgoing"};

// One engine per generated process, so changing one rate leaves the others
// untouched.
class Streams {
 public:
  explicit Streams(std::uint64_t seed) : seed_(seed) {}
  std::mt19937_64 make(std::uint64_t process) const {
    return std::mt19937_64(seed_ ^ (0x9e3779b97f4a7c15ULL * (process + 1)));
  }

 private:
  std::uint64_t seed_;
};

double unit(std::mt19937_64& e) { return uniform_unit(e); }

double expo(std::mt19937_64& e, double mean) { return -mean * std::log1p(-unit(e)); }

double gauss(std::mt19937_64& e) {
  const double u1 = 1.0 - unit(e);  // (0, 1]
  const double u2 = unit(e);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::int64_t whole_seconds(double s) { return static_cast<std::int64_t>(std::llround(s)) * kSecondMs; }

Real real(double v) { return Real::from_double(v); }

struct Window {
  TimestampMs begin;
  TimestampMs end;
};

class Generator {
 public:
  explicit Generator(const SimConfig& c)
      : c_(c), p_(c.profile), streams_(c.seed), start_(c.start == 0 ? kDefaultStart : c.start) {}

  Trace run() {
    Trace t;
    t.config = c_;
    t.start = start_;
    t.end = start_ + c_.days * kDayMs;
    if (c_.days == 0) return t;
    for (int d = 0; d < c_.days; ++d) {
      const TimestampMs day = start_ + d * kDayMs;
      awake_.push_back({day + p_.wake_hour * kHourMs, day + p_.sleep_hour * kHourMs});
    }
    end_ = t.end;
    unlocks();
    steps();
    accelerometer();
    locations();
    battery();
    weather();
    point_processes();
    std::stable_sort(out_.begin(), out_.end(),
                     [](const TraceEvent& a, const TraceEvent& b) { return a.timestamp < b.timestamp; });
    t.events = std::move(out_);
    return t;
  }

 private:
  void add(TimestampMs t, SourceKind s, Payload p) { out_.push_back({t, s, std::move(p)}); }

  double day_phase(TimestampMs t) const {
    const double sec = static_cast<double>(((t - start_) % kDayMs + kDayMs) % kDayMs) / 1000.0;
    return std::sin(2.0 * std::numbers::pi * (sec / 86400.0 - 0.25));
  }

  std::string app_package(int k) const {
    return "org.cnry.app" + std::to_string(k) + ".s" + std::to_string(c_.seed);
  }

  void unlocks() {
    auto e = streams_.make(1);
    auto lux_e = streams_.make(2);
    auto app_e = streams_.make(3);
    for (const Window& w : awake_) {
      TimestampMs t = w.begin + whole_seconds(expo(e, p_.unlock_gap_mean_s));
      while (t < w.end) {
        double dur = std::clamp(expo(e, p_.unlock_mean_s), 5.0, p_.max_unlock_s);
        TimestampMs lock = std::min(t + whole_seconds(dur), w.end);
        if (lock <= t) break;
        add(t, SourceKind::phone_lock, {{"locked", false}});
        add(lock, SourceKind::phone_lock, {{"locked", true}});
        const double offset = (2 * unit(lux_e) - 1) * p_.lux_session_spread;
        for (TimestampMs s = t; s < lock; s += kSecondMs) {
          double log_lux = p_.lux_log_center + p_.lux_log_amplitude * day_phase(s) + offset +
                           p_.lux_noise * gauss(lux_e);
          add(s, SourceKind::light, {{"lux", real(std::pow(10.0, log_lux))}});
        }
        app_sessions(app_e, t, lock);
        t = lock + std::max(kSecondMs, whole_seconds(expo(e, p_.unlock_gap_mean_s)));
      }
    }
  }

  void app_sessions(std::mt19937_64& e, TimestampMs begin, TimestampMs end) {
    TimestampMs cur = begin;
    while (cur < end) {
      if (unit(e) < 0.3) {  // home screen between apps
        cur += whole_seconds(1 + static_cast<double>(uniform_below(e, 10)));
        continue;
      }
      const int app = static_cast<int>(uniform_below(e, static_cast<std::uint64_t>(p_.app_pool)));
      TimestampMs len = std::min(end - cur, std::max(kSecondMs, whole_seconds(expo(e, 60))));
      add(cur, SourceKind::app_usage,
          {{"app_package", app_package(app)}, {"duration_s", std::int64_t{len / kSecondMs}}});
      const auto records = uniform_below(e, static_cast<std::uint64_t>(2 * p_.traffic_per_session) + 1);
      for (std::uint64_t i = 0; i < records; ++i) {
        TimestampMs at = cur + static_cast<TimestampMs>(uniform_below(e, static_cast<std::uint64_t>(len)));
        add(at, SourceKind::app_traffic,
            {{"app_package", app_package(app)},
             {"rx_bytes", static_cast<std::int64_t>(uniform_below(e, 500'000))},
             {"tx_bytes", static_cast<std::int64_t>(uniform_below(e, 50'000))}});
      }
      cur += len;
    }
  }

  void steps() {
    auto e = streams_.make(4);
    if (p_.step_bursts_per_hour <= 0) return;
    const double gap = 3600.0 / p_.step_bursts_per_hour;
    for (const Window& w : awake_) {
      TimestampMs t = w.begin + whole_seconds(expo(e, gap));
      while (t < w.end) {
        TimestampMs end = std::min(w.end, t + whole_seconds(std::clamp(expo(e, p_.step_burst_mean_s), 60.0, 3600.0)));
        add(t, SourceKind::activity, {{"confidence", real(0.7 + 0.3 * unit(e))}, {"kind", std::string("walking")}});
        for (TimestampMs s = t; s < end; s += p_.step_interval_s * kSecondMs)
          add(s, SourceKind::steps, {{"count", static_cast<std::int64_t>(12 + uniform_below(e, 9))}});
        add(end, SourceKind::activity, {{"confidence", real(0.6 + 0.4 * unit(e))}, {"kind", std::string("still")}});
        bursts_.push_back({t, end});
        t = end + whole_seconds(expo(e, gap));
      }
    }
  }

  void accelerometer() {
    auto e = streams_.make(5);
    std::size_t b = 0;
    for (const Window& w : awake_) {
      for (TimestampMs t = w.begin; t < w.end; t += p_.accel_period_s * kSecondMs) {
        while (b < bursts_.size() && bursts_[b].end <= t) ++b;
        const bool moving = b < bursts_.size() && bursts_[b].begin <= t;
        const double sigma = moving ? 3.0 : 0.05;
        add(t, SourceKind::accelerometer,
            {{"x", real(sigma * gauss(e))}, {"y", real(sigma * gauss(e))}, {"z", real(9.81 + sigma * gauss(e))}});
      }
    }
  }

  void locations() {
    auto e = streams_.make(6);
    const double home_lat = 48 + 6 * unit(e), home_lon = 6 + 8 * unit(e);
    const double work_lat = home_lat + 0.02 * (unit(e) - 0.5), work_lon = home_lon + 0.03 * (unit(e) - 0.5);
    for (const Window& w : awake_) {
      for (TimestampMs t = w.begin; t < w.end; t += p_.location_period_s * kSecondMs) {
        const TimestampMs hour = ((t - start_) % kDayMs) / kHourMs;
        const bool at_work = hour >= 9 && hour < 18;
        add(t, SourceKind::location,
            {{"accuracy_m", real(5 + 45 * unit(e))},
             {"lat", real((at_work ? work_lat : home_lat) + 0.0003 * gauss(e))},
             {"lon", real((at_work ? work_lon : home_lon) + 0.0003 * gauss(e))}});
      }
    }
  }

  void battery() {
    auto e = streams_.make(7);
    double level = 0.6 + 0.4 * unit(e);
    for (TimestampMs t = start_; t < end_; t += p_.battery_period_s * kSecondMs) {
      const TimestampMs hour = ((t - start_) % kDayMs) / kHourMs;
      const bool charging = hour >= p_.sleep_hour || hour < p_.wake_hour;
      const double per_period = p_.battery_period_s / 600.0;
      if (charging) {
        level = std::min(1.0, level + 0.05 * per_period);
      } else {
        level = std::max(0.02, level - (0.006 + 0.004 * unit(e)) * per_period);
      }
      add(t, SourceKind::battery, {{"charging", charging}, {"level", real(level)}});
    }
  }

  void weather() {
    auto e = streams_.make(8);
    for (TimestampMs t = start_; t < end_; t += p_.weather_change_s * kSecondMs) {
      add(t, SourceKind::weather,
          {{"condition", std::string(kWeatherConditions[uniform_below(e, std::size(kWeatherConditions))])},
           {"humidity", real(0.3 + 0.7 * unit(e))},
           {"temperature_c", real(10 + 8 * day_phase(t) + 2 * gauss(e))}});
    }
  }

  // Poisson arrivals at `per_day` over the awake windows.
  template <typename F>
  void arrivals(std::mt19937_64& e, double per_day, F&& f) {
    if (per_day <= 0) return;
    const double awake_s = (p_.sleep_hour - p_.wake_hour) * 3600.0;
    const double gap = awake_s / per_day;
    for (const Window& w : awake_) {
      for (TimestampMs t = w.begin + whole_seconds(expo(e, gap)); t < w.end; t += whole_seconds(expo(e, gap)) + kSecondMs)
        f(t);
    }
  }

  void point_processes() {
    const std::string s = std::to_string(c_.seed);
    auto wifi = streams_.make(9);
    arrivals(wifi, p_.wifi_scans_per_day, [&](TimestampMs t) {
      const auto k = uniform_below(wifi, static_cast<std::uint64_t>(p_.wifi_pool));
      char bssid[32];
      std::snprintf(bssid, sizeof bssid, "02:c7:%02x:%02x:%02x:%02x", static_cast<unsigned>(c_.seed & 0xff),
                    static_cast<unsigned>((c_.seed >> 8) & 0xff), static_cast<unsigned>(k), 0x5a);
      add(t, SourceKind::wifi,
          {{"bssid", std::string(bssid)}, {"connected", unit(wifi) < 0.6},
           {"ssid", "cnry-ssid-" + std::to_string(k) + "-s" + s}});
    });
    auto bt = streams_.make(10);
    arrivals(bt, p_.bluetooth_per_day, [&](TimestampMs t) {
      const auto k = uniform_below(bt, static_cast<std::uint64_t>(p_.bluetooth_pool));
      char addr[32];
      std::snprintf(addr, sizeof addr, "CA:FE:%02X:%02X:%02X:%02X", static_cast<unsigned>(c_.seed & 0xff),
                    static_cast<unsigned>((c_.seed >> 8) & 0xff), static_cast<unsigned>(k), 0xB7);
      std::string name = k % 2 == 0 ? "cnry headset " + std::to_string(k) + " s" + s
                                     : "owner" + std::to_string(k) + ".s" + s + "@cnry.example.net";
      add(t, SourceKind::bluetooth, {{"address", std::string(addr)}, {"connected", unit(bt) < 0.5}, {"name", name}});
    });
    auto calls = streams_.make(11);
    arrivals(calls, p_.calls_per_day, [&](TimestampMs t) {
      const auto dir = kDirections[uniform_below(calls, 3)];
      const std::int64_t dur = dir == "missed" ? 0 : std::min<std::int64_t>(86'400, std::llround(expo(calls, 120)));
      char number[24];
      std::snprintf(number, sizeof number, "+4915%08llu",
                    static_cast<unsigned long long>(uniform_below(calls, 100'000'000)));
      add(t, SourceKind::call_meta,
          {{"direction", std::string(dir)}, {"duration_s", dur}, {"peer_number", std::string(number)}});
    });
    auto music = streams_.make(12);
    arrivals(music, p_.music_per_day, [&](TimestampMs t) {
      const auto k = uniform_below(music, 20);
      const std::int64_t dur = 120 + static_cast<std::int64_t>(uniform_below(music, 280));
      std::string artist = k % 4 == 0 ? "dj" + std::to_string(k) + ".s" + s + "@cnry.example.com"
                                      : "cnry artist " + std::to_string(k) + " s" + s;
      add(t, SourceKind::headphone, {{"plugged", true}});
      add(t, SourceKind::music_meta,
          {{"artist", artist}, {"duration_s", dur},
           {"track", "cnry track " + std::to_string(uniform_below(music, 50)) + " s" + s}});
      add(t + dur * kSecondMs, SourceKind::headphone, {{"plugged", false}});
    });
    auto photos = streams_.make(13);
    arrivals(photos, p_.photos_per_day, [&](TimestampMs t) {
      add(t, SourceKind::photo_meta, {{"count", static_cast<std::int64_t>(1 + uniform_below(photos, 3))}});
    });
    auto notes = streams_.make(14);
    arrivals(notes, p_.notifications_per_day, [&](TimestampMs t) {
      add(t, SourceKind::notification_meta,
          {{"app_package", app_package(static_cast<int>(uniform_below(notes, static_cast<std::uint64_t>(p_.app_pool))))}});
    });
  }

  const SimConfig& c_;
  const ProfileParams& p_;
  Streams streams_;
  TimestampMs start_;
  TimestampMs end_ = 0;
  std::vector<Window> awake_;
  std::vector<Window> bursts_;
  std::vector<TraceEvent> out_;
};

bool is_identifier_key(std::string_view k) {
  return k == "app_package" || k == "ssid" || k == "bssid" || k == "address" || k == "name" ||
         k == "peer_number" || k == "artist" || k == "track";
}

}  // namespace

void check_sim_config(const SimConfig& c) {
  const ProfileParams& p = c.profile;
  auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_config, what); };
  if (c.days < 0 || c.days > 3660) fail("days must be in 0..3660");
  if (c.start < 0) fail("start must be non-negative");
  if (p.wake_hour < 0 || p.sleep_hour > 24 || p.wake_hour >= p.sleep_hour) fail("need 0 <= wake_hour < sleep_hour <= 24");
  if (p.unlock_gap_mean_s <= 0 || p.unlock_mean_s <= 0 || p.max_unlock_s < 5) fail("unlock timing must be positive");
  if (p.step_bursts_per_hour < 0 || p.step_burst_mean_s <= 0) fail("step burst parameters out of range");
  if (p.step_interval_s <= 0 || p.accel_period_s <= 0 || p.location_period_s <= 0 ||
      p.battery_period_s <= 0 || p.weather_change_s <= 0)
    fail("sampling periods must be positive");
  if (p.app_pool <= 0 || p.wifi_pool <= 0 || p.bluetooth_pool <= 0) fail("identifier pools must be non-empty");
  if (p.lux_noise < 0 || p.lux_session_spread < 0) fail("light noise must be non-negative");
  if (p.traffic_per_session < 0 || p.calls_per_day < 0 || p.music_per_day < 0 || p.photos_per_day < 0 ||
      p.notifications_per_day < 0 || p.wifi_scans_per_day < 0 || p.bluetooth_per_day < 0)
    fail("event rates must be non-negative");
}

Trace generate_trace(const SimConfig& config) {
  check_sim_config(config);
  return Generator(config).run();
}

std::vector<std::string> Trace::canaries() const {
  std::set<std::string> out;
  for (const auto& ev : events)
    for (const auto& [k, v] : ev.payload)
      if (is_identifier_key(k)) out.insert(std::get<std::string>(v));
  return {out.begin(), out.end()};
}

std::map<std::string, std::int64_t> session_totals(const Trace& trace) {
  std::map<std::string, std::int64_t> out;
  for (const auto& ev : trace.events)
    if (ev.source == SourceKind::app_usage)
      out[std::get<std::string>(ev.payload.at("app_package"))] += std::get<std::int64_t>(ev.payload.at("duration_s"));
  return out;
}

std::string encode_trace(const Trace& trace) {
  std::string out = "daytrace-trace 1 seed=" + std::to_string(trace.config.seed) +
                    " days=" + std::to_string(trace.config.days) + " start=" + std::to_string(trace.start) +
                    " end=" + std::to_string(trace.end) + "\n";
  for (const auto& ev : trace.events) {
    out += std::to_string(ev.timestamp);
    out += ' ';
    out += wire_tag(ev.source);
    if (!ev.payload.empty()) {
      out += ' ';
      out += encode_payload(ev.payload);
    }
    out += '\n';
  }
  return out;
}

Trace decode_trace(std::string_view text) {
  auto bad = [](std::size_t line, const std::string& what) {
    return Error(ErrorCode::malformed_input, "trace line " + std::to_string(line) + ": " + what);
  };
  Trace t;
  std::size_t pos = 0, line_no = 0;
  auto next_line = [&]() -> std::optional<std::string_view> {
    if (pos >= text.size()) return std::nullopt;
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) throw bad(line_no + 1, "missing final newline");
    auto l = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    return l;
  };
  auto header = next_line();
  if (!header || !header->starts_with("daytrace-trace 1 ")) throw bad(1, "not a daytrace trace");
  {
    std::istringstream in{std::string(header->substr(17))};
    std::string kv;
    std::map<std::string, std::string> fields;
    while (in >> kv) {
      auto eq = kv.find('=');
      if (eq == std::string::npos) throw bad(1, "bad header field");
      fields[kv.substr(0, eq)] = kv.substr(eq + 1);
    }
    try {
      t.config.seed = std::stoull(fields.at("seed"));
      t.config.days = std::stoi(fields.at("days"));
      t.start = std::stoll(fields.at("start"));
      t.end = std::stoll(fields.at("end"));
      t.config.start = t.start;
    } catch (const std::exception&) {
      throw bad(1, "header needs seed, days, start and end");
    }
  }
  TimestampMs prev = t.start;
  while (auto l = next_line()) {
    auto sp1 = l->find(' ');
    if (sp1 == std::string_view::npos) throw bad(line_no, "expected '<ts> <tag> ...'");
    auto sp2 = l->find(' ', sp1 + 1);
    TraceEvent ev;
    try {
      ev.timestamp = std::stoll(std::string(l->substr(0, sp1)));
    } catch (const std::exception&) {
      throw bad(line_no, "bad timestamp");
    }
    auto tag = l->substr(sp1 + 1, sp2 == std::string_view::npos ? std::string_view::npos : sp2 - sp1 - 1);
    auto src = source_from_tag(tag);
    if (!src) throw bad(line_no, "unknown source '" + std::string(tag) + "'");
    ev.source = *src;
    if (sp2 != std::string_view::npos) {
      try {
        ev.payload = decode_payload(l->substr(sp2 + 1));
      } catch (const DecodeError& e) {
        throw bad(line_no, e.what());
      }
    }
    if (ev.timestamp < prev || ev.timestamp >= t.end) throw bad(line_no, "timestamp out of order or range");
    prev = ev.timestamp;
    t.events.push_back(std::move(ev));
  }
  return t;
}

void save_trace(const Trace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << encode_trace(trace);
  if (!out) throw Error(ErrorCode::storage_error, "cannot write " + path.string());
}

Trace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::storage_error, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_trace(ss.str());
}

// ---------------------------------------------------------------------------

TraceUsageSource::TraceUsageSource(const Trace& trace) {
  for (const auto& ev : trace.events) {
    if (ev.source != SourceKind::app_usage) continue;
    const auto dur = std::get<std::int64_t>(ev.payload.at("duration_s"));
    intervals_.push_back({std::get<std::string>(ev.payload.at("app_package")), ev.timestamp,
                          ev.timestamp + dur * kSecondMs});
  }
}

std::optional<std::vector<UsageInterval>> TraceUsageSource::query(TimestampMs from, TimestampMs to) {
  // Sessions never overlap, so ends ascend with starts.
  auto it = std::partition_point(intervals_.begin(), intervals_.end(),
                                 [&](const UsageInterval& u) { return u.end <= from; });
  std::vector<UsageInterval> out;
  for (; it != intervals_.end() && it->start < to; ++it) out.push_back(*it);
  return out;
}

TraceTrafficSource::TraceTrafficSource(const Trace& trace) {
  for (const auto& ev : trace.events) {
    if (ev.source != SourceKind::app_traffic) continue;
    records_.push_back({std::get<std::string>(ev.payload.at("app_package")), ev.timestamp,
                        std::get<std::int64_t>(ev.payload.at("rx_bytes")),
                        std::get<std::int64_t>(ev.payload.at("tx_bytes"))});
  }
}

std::optional<std::vector<TrafficRecord>> TraceTrafficSource::query(TimestampMs from, TimestampMs to) {
  auto lo = std::partition_point(records_.begin(), records_.end(),
                                 [&](const TrafficRecord& r) { return r.timestamp < from; });
  std::vector<TrafficRecord> out;
  for (; lo != records_.end() && lo->timestamp < to; ++lo) out.push_back(*lo);
  return out;
}

TraceWeatherSource::TraceWeatherSource(const Trace& trace) {
  for (const auto& ev : trace.events)
    if (ev.source == SourceKind::weather) states_.emplace_back(ev.timestamp, ev.payload);
}

std::optional<Payload> TraceWeatherSource::current(TimestampMs now) {
  auto it = std::partition_point(states_.begin(), states_.end(),
                                 [&](const auto& s) { return s.first <= now; });
  if (it == states_.begin()) return std::nullopt;
  return std::prev(it)->second;
}

}  // namespace daytrace
