#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "daytrace/acquisition.hpp"
#include "daytrace/http.hpp"
#include "daytrace/store.hpp"

namespace daytrace {

inline constexpr std::size_t kDefaultBatchSize = 500;

struct Batch {
  PseudonymId pseudonym;
  std::uint64_t first_seq = 0;
  std::uint64_t last_seq = 0;  // inclusive
  std::vector<std::string> lines;
  std::string checksum;  // SHA-256 hex of body()

  /// Each line followed by '\n'.
  std::string body() const;
  /// POST /v1/events with pseudonym/first_seq/last_seq/checksum headers.
  HttpRequest to_request() const;
};

Batch make_batch(const PseudonymId& pseudonym, std::uint64_t first_seq, std::vector<std::string> lines);

// Highest contiguous acked seq; never decreases.
class AckState {
 public:
  explicit AckState(std::uint64_t acked = 0) : acked_(acked) {}
  std::uint64_t acked() const { return acked_; }
  void advance(std::uint64_t to) {
    if (to > acked_) acked_ = to;
  }

 private:
  std::uint64_t acked_;
};

/// Covers (ack, max_seq] of the log with consecutive batches of at most
/// `max_events` lines.
std::vector<Batch> make_batches(const EventLog& log, const PseudonymId& pseudonym, AckState ack,
                                std::size_t max_events = kDefaultBatchSize);

enum class UploadStatus { acked, retryable, permanent };

struct UploadResult {
  UploadStatus status = UploadStatus::retryable;
  std::uint64_t acked_through = 0;
  std::string detail;
};

/// One POST /v1/events round trip, classified.
UploadResult upload(Transport& transport, const Batch& batch);

struct SyncOptions {
  std::size_t max_batch = kDefaultBatchSize;
  TimestampMs initial_backoff = 1 * kSecondMs;
  TimestampMs max_backoff = 5 * kMinuteMs;
};

enum class SyncOutcome { idle, not_due, consent_denied, acked, retry_scheduled, halted };

// Serialized sender: at most one upload in flight. Progress is persisted as the
// log's sync cursor. Retryable failures back off 1 s, 2 s, 4 s ... capped.
class SyncClient {
 public:
  SyncClient(EventLog& log, PseudonymId pseudonym, Transport& transport, SyncOptions options = {},
             Diagnostics* diagnostics = nullptr);

  /// Attempts at most one batch upload if due at `now`.
  SyncOutcome step(TimestampMs now, const ConsentState& consent);
  /// Repeats step() until idle, halted, or a retry is scheduled.
  SyncOutcome drain(TimestampMs now, const ConsentState& consent);

  bool halted() const { return halted_; }
  std::uint64_t acked() const { return log_.sync_cursor(); }
  TimestampMs next_attempt() const { return next_attempt_; }
  TimestampMs current_backoff() const { return backoff_; }
  std::uint64_t uploads() const { return uploads_; }
  std::uint64_t bytes_sent() const { return bytes_sent_; }
  /// Clears a permanent-failure halt after operator intervention.
  void resume() { halted_ = false; }

 private:
  EventLog& log_;
  PseudonymId pseudonym_;
  Transport& transport_;
  SyncOptions options_;
  Diagnostics* diag_;
  bool halted_ = false;
  TimestampMs next_attempt_ = INT64_MIN;
  TimestampMs backoff_ = 0;
  std::uint64_t uploads_ = 0;
  std::uint64_t bytes_sent_ = 0;
};

}  // namespace daytrace
