#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "daytrace/acquisition.hpp"
#include "daytrace/http.hpp"
#include "daytrace/questionnaire.hpp"
#include "daytrace/store.hpp"
#include "daytrace/sync.hpp"

namespace daytrace {

// ---------------------------------------------------------------------------
// Synthetic traces

struct ProfileParams {
  // Light: log10(lux) = center + amplitude*sin(day phase) + per-session offset + noise.
  double lux_log_center = 2.0;
  double lux_log_amplitude = 1.5;
  double lux_session_spread = 0.6;  // per-unlock offset, uniform in +-spread
  double lux_noise = 0.02;          // gaussian sigma in log10 units

  int wake_hour = 7;
  int sleep_hour = 23;
  double unlock_gap_mean_s = 1200;   // locked time between unlocks while awake
  double unlock_mean_s = 180;        // unlocked session length
  double max_unlock_s = 1800;

  double step_bursts_per_hour = 0.6;
  double step_burst_mean_s = 420;
  int step_interval_s = 10;          // step-counter reports during a burst
  int accel_period_s = 10;           // accelerometer samples, all day

  int app_pool = 8;
  double traffic_per_session = 2;    // mean traffic records per app session

  double calls_per_day = 3;
  double music_per_day = 4;
  double photos_per_day = 2;
  double notifications_per_day = 40;
  int location_period_s = 900;
  int battery_period_s = 600;
  int weather_change_s = 10800;
  int wifi_pool = 4;
  int bluetooth_pool = 3;
  double wifi_scans_per_day = 12;
  double bluetooth_per_day = 6;
};

struct SimConfig {
  std::uint64_t seed = 42;
  int days = 7;
  TimestampMs start = 0;  // 0 = 2026-01-05T00:00:00Z
  ProfileParams profile;
};

/// Validates ranges; throws Error(invalid_config).
void check_sim_config(const SimConfig& config);

// Raw observation at a virtual time. app_usage events describe a whole app
// session (`app_package`, `duration_s`); app_traffic and weather events feed
// the polled sources rather than being pushed to the pipeline.
struct TraceEvent {
  TimestampMs timestamp = 0;
  SourceKind source = SourceKind::light;
  Payload payload;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

struct Trace {
  SimConfig config;
  TimestampMs start = 0;
  TimestampMs end = 0;
  std::vector<TraceEvent> events;  // sorted by timestamp

  /// Every raw identifier planted in the trace (SSIDs, addresses, names,
  /// numbers, packages, emails), for leak scans.
  std::vector<std::string> canaries() const;
};

Trace generate_trace(const SimConfig& config);

/// `daytrace-trace 1 seed=.. days=.. start=.. end=..` header then
/// `<ts> <tag> <key=value ...>` lines.
std::string encode_trace(const Trace& trace);
Trace decode_trace(std::string_view text);
void save_trace(const Trace& trace, const std::filesystem::path& path);
Trace load_trace(const std::filesystem::path& path);

/// Seconds of app use per package in the trace (the generator's ground truth).
std::map<std::string, std::int64_t> session_totals(const Trace& trace);

// Polled sources backed by a trace.
class TraceUsageSource final : public UsageSource {
 public:
  explicit TraceUsageSource(const Trace& trace);
  std::optional<std::vector<UsageInterval>> query(TimestampMs from, TimestampMs to) override;

 private:
  std::vector<UsageInterval> intervals_;  // by start
};

class TraceTrafficSource final : public TrafficSource {
 public:
  explicit TraceTrafficSource(const Trace& trace);
  std::optional<std::vector<TrafficRecord>> query(TimestampMs from, TimestampMs to) override;

 private:
  std::vector<TrafficRecord> records_;
};

class TraceWeatherSource final : public WeatherSource {
 public:
  explicit TraceWeatherSource(const Trace& trace);
  std::optional<Payload> current(TimestampMs now) override;

 private:
  std::vector<std::pair<TimestampMs, Payload>> states_;
};

// ---------------------------------------------------------------------------
// Replay

struct ReplayOptions {
  AcquisitionConfig acquisition;
  /// Optional upload path; events are synced every `sync_period` of virtual time.
  Transport* transport = nullptr;
  TimestampMs sync_period = kHourMs;
  /// Virtual-to-wall speed ratio; 0 runs unpaced.
  double acceleration = 0;
  /// Device identity. Derived from the trace seed when unset.
  std::optional<std::uint64_t> identity_seed;
};

struct SourceCounts {
  std::uint64_t raw = 0;
  std::uint64_t stored = 0;
  std::uint64_t stored_bytes = 0;
};

struct ReplayReport {
  std::map<SourceKind, SourceCounts> sources;
  std::uint64_t raw_total = 0;
  std::uint64_t stored_total = 0;
  std::uint64_t stored_bytes = 0;
  std::uint64_t wakeups = 0;
  std::uint64_t uploads = 0;
  std::uint64_t bytes_sent = 0;
  std::uint64_t acked_through = 0;
  Diagnostics diagnostics;

  /// stored light events / raw lux samples (0 when no samples).
  double light_ratio() const;
  /// stored events / raw samples over all sources.
  double overall_ratio() const;

  std::string text() const;
  std::string json() const;
};

// The device side of one simulated participant.
struct SimDevice {
  Anonymizer anonymizer;
  PseudonymId pseudonym;

  static SimDevice from_seed(std::uint64_t seed);
};

/// Drives a fresh pipeline through the trace on a virtual clock, appending to
/// `log`. Polls run at their scheduled virtual times; the trace end flushes the
/// final hour bucket.
ReplayReport replay(const Trace& trace, EventLog& log, const SimDevice& device, const ReplayOptions& options);
ReplayReport replay(const Trace& trace, EventLog& log, const ReplayOptions& options);

// Paces virtual time against the wall clock.
class VirtualClock {
 public:
  VirtualClock(TimestampMs origin, double acceleration);
  /// Sleeps until wall time catches up with `t` (no-op when unpaced).
  void wait_until(TimestampMs t);
  TimestampMs now() const { return now_; }

 private:
  TimestampMs origin_;
  TimestampMs now_;
  double acceleration_;
  std::chrono::steady_clock::time_point wall_origin_;
};

// ---------------------------------------------------------------------------
// Study simulation

struct StudyConfig {
  std::uint64_t seed = 42;
  int users = 50;
  int days = 28;
  double threshold = kDefaultComplianceThreshold;
  /// Per-user daily completion probability; cycled when shorter than `users`.
  std::vector<double> completion_probabilities{1.0, 0.95, 0.9, 0.85, 0.8, 0.7, 0.5, 0.0};
  bool telemetry = true;  // generate, collect and upload each user's trace
  bool consent = true;
  ProfileParams profile;
  std::size_t raffle_winners = 5;
  std::string admin_key = "sim-admin";
  Date study_start = Date{std::chrono::year{2026} / 1 / 5};
};

struct UserOutcome {
  int index = 0;
  std::string email;
  double completion_probability = 0;
  std::vector<int> completed_days;  // day offsets with a completed session
  double rate = 0;
  bool met = false;
  std::optional<std::string> participation_code;
  std::uint64_t events_stored = 0;
  std::uint64_t events_acked = 0;
};

struct StudyReport {
  StudyConfig config;
  std::vector<UserOutcome> users;
  std::vector<std::string> raffle_winners;  // emails

  std::string text() const;
  std::string json() const;
};

/// Runs every virtual user through sign-up, telemetry, daily sessions and the
/// completion report, then draws the raffle. Throws Error(service_unreachable)
/// when the transport gets no response.
StudyReport run_study(const StudyConfig& config, Transport& transport);

}  // namespace daytrace
