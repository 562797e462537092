#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "daytrace/acquisition.hpp"

namespace daytrace {

// ---------------------------------------------------------------------------

HysteresisQuantizer::HysteresisQuantizer(std::vector<double> boundaries, double margin,
                                         int initial_segment)
    : boundaries_(std::move(boundaries)), margin_(margin), segment_(initial_segment) {
  if (boundaries_.empty()) throw Error(ErrorCode::invalid_config, "at least one light boundary required");
  for (std::size_t i = 0; i < boundaries_.size(); ++i) {
    if (!(boundaries_[i] > 0) || !std::isfinite(boundaries_[i]))
      throw Error(ErrorCode::invalid_config, "light boundaries must be positive");
    if (i > 0 && !(boundaries_[i] > boundaries_[i - 1]))
      throw Error(ErrorCode::invalid_config, "light boundaries must be strictly ascending");
  }
  // margin 0 is accepted: it is the plain boundary-crossing baseline.
  if (!(margin_ >= 0 && margin_ < 1)) throw Error(ErrorCode::invalid_config, "margin must be in [0, 1)");
  if (segment_ < 0 || segment_ > static_cast<int>(boundaries_.size()))
    throw Error(ErrorCode::invalid_config, "initial segment out of range");
}

QuantizerStep HysteresisQuantizer::update(double lux) {
  if (!(lux >= 0) || !std::isfinite(lux)) return {true, std::nullopt};
  const int k = static_cast<int>(boundaries_.size());
  int s = segment_;
  while (s < k && lux >= boundaries_[s] * (1 + margin_)) ++s;
  while (s > 0 && lux <= boundaries_[s - 1] * (1 - margin_)) --s;
  if (s == segment_) return {};
  SegmentChange change{segment_, s};
  segment_ = s;
  return {false, change};
}

// ---------------------------------------------------------------------------

void StepGate::record_step(TimestampMs t) {
  // Keep ascending order; out-of-order steps are inserted in place.
  auto pos = std::upper_bound(steps_.begin(), steps_.end(), t);
  steps_.insert(pos, t);
  // Steps older than the newest step's window can never reopen the gate for
  // samples that arrive in time order.
  while (steps_.size() > 1 && steps_.front() + window_ <= steps_.back() - window_) steps_.pop_front();
}

bool StepGate::is_open(TimestampMs now) const {
  // Latest step at or before now decides.
  auto it = std::upper_bound(steps_.begin(), steps_.end(), now);
  if (it == steps_.begin()) return false;
  --it;
  return now - *it < window_;
}

// ---------------------------------------------------------------------------

void PollSchedule::set_period(SourceKind source, TimestampMs period, TimestampMs start) {
  if (period <= 0) throw Error(ErrorCode::invalid_config, "poll period must be positive");
  entries_[source] = Entry{period, start + period, std::nullopt};
}

std::optional<TimestampMs> PollSchedule::next_due() const {
  std::optional<TimestampMs> best;
  for (const auto& [_, e] : entries_)
    if (!best || e.next < *best) best = e.next;
  return best;
}

std::vector<SourceKind> PollSchedule::due_at(TimestampMs t) const {
  std::vector<SourceKind> out;
  for (const auto& [s, e] : entries_)
    if (e.next <= t) out.push_back(s);
  return out;
}

void PollSchedule::mark_polled(SourceKind source, TimestampMs t) {
  auto& e = entries_.at(source);
  e.last = t;
  e.next = t + e.period;
}

std::optional<TimestampMs> PollSchedule::last_poll(SourceKind source) const {
  auto it = entries_.find(source);
  return it == entries_.end() ? std::nullopt : it->second.last;
}

TimestampMs PollSchedule::period(SourceKind source) const { return entries_.at(source).period; }

// ---------------------------------------------------------------------------

Decision consent_gate(const ConsentState& state, Action) {
  return state.accepted() ? Decision::allow : Decision::deny;
}

ConsentState ConsentState::load(const std::filesystem::path& path) {
  ConsentState s;
  std::ifstream in(path);
  if (!in) return s;
  std::string word;
  TimestampMs at = 0;
  if (in >> word >> at && word == "accepted") s.accepted_at_ = at;
  return s;
}

void ConsentState::save(const std::filesystem::path& path) const {
  if (!accepted_at_) return;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  out << "accepted " << *accepted_at_ << "\n";
  if (!out) throw Error(ErrorCode::storage_error, "cannot write " + path.string());
}

// ---------------------------------------------------------------------------

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double parse_double(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    double d = std::stod(std::string(v), &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw Error(ErrorCode::invalid_config, std::string(key) + ": not a number: " + std::string(v));
  }
}

std::int64_t parse_int(std::string_view key, std::string_view v) {
  std::int64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw Error(ErrorCode::invalid_config, std::string(key) + ": not an integer: " + std::string(v));
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "granted" || v == "accepted") return true;
  if (v == "false" || v == "missing" || v == "withheld") return false;
  throw Error(ErrorCode::invalid_config, std::string(key) + ": expected a boolean: " + std::string(v));
}

}  // namespace

AcquisitionConfig parse_acquisition_config(std::string_view text) {
  AcquisitionConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::invalid_config, "line " + std::to_string(line_no) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));

    if (key == "light.boundaries") {
      cfg.light_boundaries.clear();
      while (!value.empty()) {
        auto comma = value.find(',');
        cfg.light_boundaries.push_back(parse_double(key, trim(value.substr(0, comma))));
        value = comma == std::string_view::npos ? std::string_view{} : value.substr(comma + 1);
      }
    } else if (key == "light.margin") {
      cfg.light_margin = parse_double(key, value);
    } else if (key == "step_gate.window_s") {
      cfg.step_window = parse_int(key, value) * kSecondMs;
    } else if (key == "poll.app_usage_s") {
      cfg.app_usage_period = parse_int(key, value) * kSecondMs;
    } else if (key == "poll.app_traffic_s") {
      cfg.app_traffic_period = parse_int(key, value) * kSecondMs;
    } else if (key == "poll.weather_s") {
      cfg.weather_period = parse_int(key, value) * kSecondMs;
    } else if (key == "consent") {
      cfg.consent = parse_bool(key, value);
    } else if (key.starts_with("permission.")) {
      auto src = source_from_tag(key.substr(11));
      if (!src) throw Error(ErrorCode::invalid_config, "unknown source in " + std::string(key));
      cfg.permissions[*src] = parse_bool(key, value);
    } else {
      throw Error(ErrorCode::invalid_config, "unknown key " + std::string(key));
    }
  }
  // Surface invalid boundary/margin combinations at load time.
  HysteresisQuantizer check(cfg.light_boundaries, cfg.light_margin);
  if (cfg.step_window <= 0 || cfg.app_usage_period <= 0 || cfg.app_traffic_period <= 0 ||
      cfg.weather_period <= 0)
    throw Error(ErrorCode::invalid_config, "durations must be positive");
  return cfg;
}

AcquisitionConfig load_acquisition_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::invalid_config, "cannot read " + path.string());
  std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return parse_acquisition_config(text);
}

std::string format_acquisition_config(const AcquisitionConfig& cfg) {
  std::ostringstream out;
  out << "light.boundaries = ";
  for (std::size_t i = 0; i < cfg.light_boundaries.size(); ++i)
    out << (i ? "," : "") << cfg.light_boundaries[i];
  out << "\nlight.margin = " << cfg.light_margin << "\n"
      << "step_gate.window_s = " << cfg.step_window / kSecondMs << "\n"
      << "poll.app_usage_s = " << cfg.app_usage_period / kSecondMs << "\n"
      << "poll.app_traffic_s = " << cfg.app_traffic_period / kSecondMs << "\n"
      << "poll.weather_s = " << cfg.weather_period / kSecondMs << "\n"
      << "consent = " << (cfg.consent ? "accepted" : "withheld") << "\n";
  for (const auto& [src, ok] : cfg.permissions)
    out << "permission." << wire_tag(src) << " = " << (ok ? "granted" : "missing") << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------

std::string Diagnostics::format() const {
  std::string out;
  for (const auto& [k, v] : counters_) out += k + " " + std::to_string(v) + "\n";
  return out;
}

Diagnostics Diagnostics::parse(std::string_view text) {
  Diagnostics d;
  std::istringstream in{std::string(text)};
  std::string name;
  std::uint64_t v = 0;
  while (in >> name >> v) d.counters_[name] += v;
  return d;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::int64_t> usage_seconds_in_bucket(const std::vector<UsageInterval>& intervals,
                                                            TimestampMs bucket_start,
                                                            TimestampMs not_before) {
  const TimestampMs lo = std::max(bucket_start, not_before);
  const TimestampMs hi = bucket_start + kHourMs;
  std::map<std::string, std::vector<std::pair<TimestampMs, TimestampMs>>> per_app;
  for (const auto& iv : intervals) {
    TimestampMs a = std::max(iv.start, lo), b = std::min(iv.end, hi);
    if (a < b) per_app[iv.app_package].emplace_back(a, b);
  }
  std::map<std::string, std::int64_t> out;
  for (auto& [app, spans] : per_app) {
    std::sort(spans.begin(), spans.end());
    TimestampMs total = 0, cur_a = spans[0].first, cur_b = spans[0].second;
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i].first <= cur_b) {
        cur_b = std::max(cur_b, spans[i].second);
      } else {
        total += cur_b - cur_a;
        cur_a = spans[i].first;
        cur_b = spans[i].second;
      }
    }
    total += cur_b - cur_a;
    out[app] = total / kSecondMs;
  }
  return out;
}

void HourBucketTracker::collect_from(TimestampMs t) {
  collect_from_ = t;
  next_bucket_ = std::max(next_bucket_, floor_hour(t));
}

std::vector<Emission> HourBucketTracker::poll_usage(TimestampMs now, UsageSource& source,
                                                    const Anonymizer& anon, Diagnostics& diag) {
  std::vector<Emission> out;
  while (next_bucket_ + kHourMs <= now) {
    auto intervals = source.query(next_bucket_, next_bucket_ + kHourMs);
    if (!intervals) {
      diag.bump("app_usage.source_unavailable");
      break;
    }
    std::vector<Emission> bucket;
    for (const auto& [app, seconds] : usage_seconds_in_bucket(*intervals, next_bucket_, collect_from_)) {
      if (seconds <= 0) continue;
      Payload p{{"app_digest", anon.pseudonymize(app).str()},
                {"hour_start", std::int64_t{next_bucket_}},
                {"seconds_used", std::int64_t{seconds}}};
      bucket.push_back({next_bucket_ + kHourMs, SourceKind::app_usage, std::move(p)});
    }
    std::sort(bucket.begin(), bucket.end(), [](const Emission& a, const Emission& b) {
      return std::get<std::string>(a.payload.at("app_digest")) < std::get<std::string>(b.payload.at("app_digest"));
    });
    for (auto& e : bucket) out.push_back(std::move(e));
    next_bucket_ += kHourMs;
  }
  return out;
}

std::vector<Emission> HourBucketTracker::poll_traffic(TimestampMs now, TrafficSource& source,
                                                      const Anonymizer& anon, Diagnostics& diag) {
  std::vector<Emission> out;
  while (next_bucket_ + kHourMs <= now) {
    auto records = source.query(next_bucket_, next_bucket_ + kHourMs);
    if (!records) {
      diag.bump("app_traffic.source_unavailable");
      break;
    }
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> per_app;
    for (const auto& r : *records) {
      if (r.timestamp < std::max(next_bucket_, collect_from_) || r.timestamp >= next_bucket_ + kHourMs) continue;
      auto& [rx, tx] = per_app[anon.pseudonymize(r.app_package).str()];
      rx += r.rx_bytes;
      tx += r.tx_bytes;
    }
    for (const auto& [digest, bytes] : per_app) {
      Payload p{{"app_digest", digest},
                {"hour_start", std::int64_t{next_bucket_}},
                {"rx_bytes", bytes.first},
                {"tx_bytes", bytes.second}};
      out.push_back({next_bucket_ + kHourMs, SourceKind::app_traffic, std::move(p)});
    }
    next_bucket_ += kHourMs;
  }
  return out;
}

}  // namespace daytrace
