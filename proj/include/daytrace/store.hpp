#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "daytrace/acquisition.hpp"
#include "daytrace/event.hpp"

namespace daytrace {

struct LogOptions {
  /// fsync after every append. Off only for simulations that never crash.
  bool sync_each_append = true;
  /// Appends beyond this many bytes fail with storage-full.
  std::optional<std::uint64_t> max_bytes;
};

struct RecoveryInfo {
  std::size_t lines_loaded = 0;
  std::uint64_t bytes_discarded = 0;  // torn or corrupt tail removed on open
};

// Append-only log of canonical event lines for one device.
//
// File layout under a state directory:
//   events.log         one canonical line per event, '\n'-terminated
//   events.log.cursor  highest acked seq (decimal)
//   diagnostics.log    audit lines (never event content)
class EventLog {
 public:
  /// Purely in-memory log (simulations, tests).
  EventLog() = default;
  /// Opens or creates the log under `dir`, discarding any torn tail.
  static EventLog open(const std::filesystem::path& dir, LogOptions options = {});

  EventLog(EventLog&&) noexcept;
  EventLog& operator=(EventLog&&) noexcept;
  EventLog(const EventLog&) = delete;
  EventLog& operator=(const EventLog&) = delete;
  ~EventLog();

  /// Requires validate(event) == ok and event.seq == next_seq().
  void append(const EventRecord& event);

  std::uint64_t next_seq() const { return events_.size() + 1; }
  std::uint64_t max_seq() const { return events_.size(); }
  std::size_t size() const { return events_.size(); }
  std::uint64_t stored_bytes() const { return stored_bytes_; }

  std::span<const EventRecord> events() const { return events_; }
  std::span<const std::string> lines() const { return lines_; }

  std::uint64_t sync_cursor() const { return cursor_; }
  /// Monotone; clamps to max_seq().
  void set_sync_cursor(std::uint64_t acked);

  /// Removes every event, resets next-seq and the cursor, and writes one audit
  /// line (count and time only). Returns the number of events purged.
  std::size_t purge_all(TimestampMs now);

  const RecoveryInfo& recovery() const { return recovery_; }
  const std::filesystem::path& dir() const { return dir_; }
  bool file_backed() const { return fd_ >= 0; }

 private:
  void write_cursor();
  void audit(const std::string& line);

  std::filesystem::path dir_;
  LogOptions options_;
  int fd_ = -1;
  std::vector<EventRecord> events_;
  std::vector<std::string> lines_;
  std::uint64_t stored_bytes_ = 0;
  std::uint64_t cursor_ = 0;
  RecoveryInfo recovery_;
};

/// Stamps emissions with the device pseudonym and the next seq, then appends.
/// Serializes concurrent producers with a mutex.
class StoreSink final : public EventSink {
 public:
  StoreSink(EventLog& log, PseudonymId pseudonym) : log_(log), pseudonym_(std::move(pseudonym)) {}
  void emit(SourceKind source, TimestampMs timestamp, const Payload& payload) override;

 private:
  std::mutex mu_;
  EventLog& log_;
  PseudonymId pseudonym_;
};

// ---------------------------------------------------------------------------
// Daily summaries

struct DailyAggregate {
  Date date{};
  std::int64_t usage_seconds = 0;
  std::int64_t unlock_count = 0;
  std::int64_t distinct_location_cells = 0;
  std::int64_t steps_total = 0;
  std::map<std::string, std::int64_t> notifications_per_app;  // app digest -> count
  std::int64_t photos_count = 0;
  std::int64_t music_play_count = 0;

  friend bool operator==(const DailyAggregate&, const DailyAggregate&) = default;
};

/// Pure function of the events. Unlock->lock intervals are clipped to the day;
/// an unlock with no later lock runs to the end of its own day.
DailyAggregate daily_aggregate(std::span<const EventRecord> events, Date date,
                               std::chrono::minutes utc_offset = std::chrono::minutes{0});

/// Aggregates for end-6 .. end, oldest first.
std::array<DailyAggregate, 7> weekly_view(std::span<const EventRecord> events, Date end,
                                          std::chrono::minutes utc_offset = std::chrono::minutes{0});

/// Grid cell of a location fix at 3 decimals (~111 m).
std::pair<std::int64_t, std::int64_t> location_cell(Real lat, Real lon);

/// Notification-preview metrics (name -> value) derived from one aggregate.
std::map<std::string, std::int64_t> aggregate_metrics(const DailyAggregate& a);

}  // namespace daytrace
