#pragma once

#include <chrono>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace daytrace {

/// UTC milliseconds since the Unix epoch.
using TimestampMs = std::int64_t;

inline constexpr TimestampMs kSecondMs = 1000;
inline constexpr TimestampMs kMinuteMs = 60 * kSecondMs;
inline constexpr TimestampMs kHourMs = 60 * kMinuteMs;
inline constexpr TimestampMs kDayMs = 24 * kHourMs;

enum class ErrorCode {
  invalid_argument,
  empty_value,
  unknown_field,
  malformed_input,
  invalid_event,
  seq_mismatch,
  storage_full,
  storage_error,
  duplicate_identifier,
  checksum_mismatch,
  schema_rejection,
  duplicate_enrollment,
  invalid_email,
  unknown_token,
  already_reported,
  insufficient_completers,
  none_published,
  version_conflict,
  version_mismatch,
  incomplete_session,
  non_scorable_item,
  study_still_running,
  invalid_config,
  service_unreachable,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Calendar day in UTC (optionally shifted by a fixed offset).
using Date = std::chrono::sys_days;

Date date_of(TimestampMs t, std::chrono::minutes utc_offset = std::chrono::minutes{0});
TimestampMs start_of_day(Date d, std::chrono::minutes utc_offset = std::chrono::minutes{0});
inline TimestampMs floor_hour(TimestampMs t) {
  TimestampMs r = t % kHourMs;
  return r < 0 ? t - r - kHourMs : t - r;
}

/// "YYYY-MM-DD"
std::string format_date(Date d);
std::optional<Date> parse_date(std::string_view text);

std::string to_hex(const unsigned char* data, std::size_t size);

}  // namespace daytrace
