#pragma once

#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "daytrace/anonymizer.hpp"
#include "daytrace/event.hpp"

namespace daytrace {

// ---------------------------------------------------------------------------
// Light segmentation

struct SegmentChange {
  int from = 0;
  int to = 0;
  friend bool operator==(const SegmentChange&, const SegmentChange&) = default;
};

struct QuantizerStep {
  bool rejected = false;
  std::optional<SegmentChange> change;
};

// Maps a lux stream onto k+1 segments separated by k boundaries and reports
// only segment changes. A boundary B is crossed upwards at B*(1+margin) and
// downwards at B*(1-margin). A jump across several boundaries is one change.
class HysteresisQuantizer {
 public:
  HysteresisQuantizer(std::vector<double> boundaries, double margin, int initial_segment = 0);

  /// Negative or non-finite lux is rejected and leaves the state untouched.
  QuantizerStep update(double lux);

  int segment() const { return segment_; }
  int segment_count() const { return static_cast<int>(boundaries_.size()) + 1; }
  const std::vector<double>& boundaries() const { return boundaries_; }
  double margin() const { return margin_; }

 private:
  std::vector<double> boundaries_;
  double margin_;
  int segment_;
};

// ---------------------------------------------------------------------------
// Accelerometer gate

// Open at `now` iff some step happened at t with t <= now < t + window.
class StepGate {
 public:
  explicit StepGate(TimestampMs window) : window_(window) {}

  void record_step(TimestampMs t);
  bool is_open(TimestampMs now) const;
  TimestampMs window() const { return window_; }

 private:
  TimestampMs window_;
  std::deque<TimestampMs> steps_;  // ascending
};

// ---------------------------------------------------------------------------
// Periodic polling

class PollSchedule {
 public:
  void set_period(SourceKind source, TimestampMs period, TimestampMs start);

  std::optional<TimestampMs> next_due() const;
  /// Sources due at exactly `t`.
  std::vector<SourceKind> due_at(TimestampMs t) const;
  void mark_polled(SourceKind source, TimestampMs t);

  std::optional<TimestampMs> last_poll(SourceKind source) const;
  TimestampMs period(SourceKind source) const;

 private:
  struct Entry {
    TimestampMs period;
    TimestampMs next;
    std::optional<TimestampMs> last;
  };
  std::map<SourceKind, Entry> entries_;
};

// ---------------------------------------------------------------------------
// Fences

using FencePredicate = std::function<bool(const ContextSnapshot&)>;
using FenceCallback = std::function<void(const std::string& id, bool entered, const ContextSnapshot&)>;

struct Fence {
  std::string id;
  FencePredicate predicate;
  FenceCallback callback;
  bool last = false;
};

// ---------------------------------------------------------------------------
// Consent

enum class Action { collect, transmit };
enum class Decision { allow, deny };

class ConsentState {
 public:
  bool accepted() const { return accepted_at_.has_value(); }
  std::optional<TimestampMs> accepted_at() const { return accepted_at_; }
  /// Only transition is absent -> accepted; a second call keeps the first time.
  void accept(TimestampMs now) {
    if (!accepted_at_) accepted_at_ = now;
  }

  static ConsentState load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

 private:
  std::optional<TimestampMs> accepted_at_;
};

Decision consent_gate(const ConsentState& state, Action action);

// ---------------------------------------------------------------------------
// Configuration

struct AcquisitionConfig {
  std::vector<double> light_boundaries{10, 100, 1000, 10000};
  double light_margin = 0.1;
  TimestampMs step_window = 60 * kSecondMs;
  TimestampMs app_usage_period = 15 * kMinuteMs;
  TimestampMs app_traffic_period = 15 * kMinuteMs;
  TimestampMs weather_period = 30 * kMinuteMs;
  bool consent = false;
  std::map<SourceKind, bool> permissions;  // absent = granted

  bool permitted(SourceKind s) const {
    auto it = permissions.find(s);
    return it == permissions.end() || it->second;
  }
};

/// `key = value` lines, `#` comments. Throws Error(invalid_config).
AcquisitionConfig parse_acquisition_config(std::string_view text);
AcquisitionConfig load_acquisition_config(const std::filesystem::path& path);
std::string format_acquisition_config(const AcquisitionConfig& config);

// ---------------------------------------------------------------------------
// Polled sources

struct UsageInterval {
  std::string app_package;
  TimestampMs start = 0;
  TimestampMs end = 0;
};

struct TrafficRecord {
  std::string app_package;
  TimestampMs timestamp = 0;
  std::int64_t rx_bytes = 0;
  std::int64_t tx_bytes = 0;
};

class UsageSource {
 public:
  virtual ~UsageSource() = default;
  /// Intervals overlapping [from, to); nullopt when the source is unavailable.
  virtual std::optional<std::vector<UsageInterval>> query(TimestampMs from, TimestampMs to) = 0;
};

class TrafficSource {
 public:
  virtual ~TrafficSource() = default;
  /// Records with timestamp in [from, to); nullopt when unavailable.
  virtual std::optional<std::vector<TrafficRecord>> query(TimestampMs from, TimestampMs to) = 0;
};

class WeatherSource {
 public:
  virtual ~WeatherSource() = default;
  /// Stored-schema weather payload, or nullopt when unavailable.
  virtual std::optional<Payload> current(TimestampMs now) = 0;
};

class Diagnostics {
 public:
  void bump(const std::string& name, std::uint64_t n = 1) { counters_[name] += n; }
  std::uint64_t get(const std::string& name) const {
    auto it = counters_.find(name);
    return it == counters_.end() ? 0 : it->second;
  }
  const std::map<std::string, std::uint64_t>& counters() const { return counters_; }
  void merge(const Diagnostics& other) {
    for (const auto& [k, v] : other.counters_) counters_[k] += v;
  }

  std::string format() const;  // `name value` lines
  static Diagnostics parse(std::string_view text);

 private:
  std::map<std::string, std::uint64_t> counters_;
};

struct Emission {
  TimestampMs timestamp = 0;
  SourceKind source = SourceKind::app_usage;
  Payload payload;
};

// Per-app seconds per wall-clock hour. Each poll flushes every hour bucket that
// has fully elapsed; a bucket is retried while the source is unavailable.
class HourBucketTracker {
 public:
  explicit HourBucketTracker(TimestampMs start) : next_bucket_(floor_hour(start)), collect_from_(start) {}

  std::vector<Emission> poll_usage(TimestampMs now, UsageSource& source, const Anonymizer& anon,
                                   Diagnostics& diag);
  std::vector<Emission> poll_traffic(TimestampMs now, TrafficSource& source, const Anonymizer& anon,
                                     Diagnostics& diag);

  /// Nothing before `t` is ever reported.
  void collect_from(TimestampMs t);
  TimestampMs next_bucket() const { return next_bucket_; }

 private:
  TimestampMs next_bucket_;
  TimestampMs collect_from_;
};

/// Splits usage intervals into per-app hour-bucket seconds for [bucket, bucket+1h).
/// Overlapping intervals of one app count once.
std::map<std::string, std::int64_t> usage_seconds_in_bucket(const std::vector<UsageInterval>& intervals,
                                                            TimestampMs bucket_start,
                                                            TimestampMs not_before);

// ---------------------------------------------------------------------------
// Pipeline

struct RawSample {
  TimestampMs timestamp = 0;
  SourceKind source = SourceKind::location;
  Payload payload;  // raw schema of `source`
};

/// Receives scrubbed, schema-conforming payloads in emission order.
class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual void emit(SourceKind source, TimestampMs timestamp, const Payload& payload) = 0;
};

struct PollSources {
  UsageSource* usage = nullptr;
  TrafficSource* traffic = nullptr;
  WeatherSource* weather = nullptr;
};

class Pipeline {
 public:
  Pipeline(AcquisitionConfig config, Anonymizer anonymizer, EventSink& sink, PollSources sources,
           TimestampMs start);

  void accept_consent(TimestampMs now);
  const ConsentState& consent() const { return consent_; }

  /// Runs due polls up to the sample time, then handles the sample.
  void on_sample(const RawSample& sample);
  /// Runs every poll scheduled at or before `now`, in time order.
  void advance_to(TimestampMs now);

  ContextSnapshot snapshot() const { return snapshot_; }

  /// Throws Error(duplicate_identifier) when the id is taken.
  void register_fence(std::string id, FencePredicate predicate, FenceCallback callback);
  bool unregister_fence(const std::string& id);

  const Diagnostics& diagnostics() const { return diag_; }
  const HysteresisQuantizer& quantizer() const { return quantizer_; }
  std::uint64_t wakeups() const { return diag_.get("poll.wakeups"); }

 private:
  void emit(SourceKind source, TimestampMs t, Payload payload);
  void observe(SourceKind source, TimestampMs t, Payload value);
  void run_polls(TimestampMs t);

  AcquisitionConfig config_;
  Anonymizer anonymizer_;
  EventSink& sink_;
  PollSources sources_;
  ConsentState consent_;
  HysteresisQuantizer quantizer_;
  StepGate gate_;
  PollSchedule schedule_;
  HourBucketTracker usage_buckets_;
  HourBucketTracker traffic_buckets_;
  ContextSnapshot snapshot_;
  std::vector<Fence> fences_;
  Diagnostics diag_;
  TimestampMs clock_;
};

}  // namespace daytrace
