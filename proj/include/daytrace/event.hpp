#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>

#include "daytrace/common.hpp"

namespace daytrace {

// Tracked sources. Order is part of the wire contract only through wire_tag().
enum class SourceKind : std::uint8_t {
  location,
  weather,
  light,
  accelerometer,
  activity,
  steps,
  phone_lock,
  headphone,
  battery,
  wifi,
  bluetooth,
  call_meta,
  music_meta,
  photo_meta,
  notification_meta,
  app_usage,
  app_traffic,
};

inline constexpr std::size_t kSourceKindCount = 17;

inline constexpr std::array<SourceKind, kSourceKindCount> kAllSources{
    SourceKind::location,   SourceKind::weather,      SourceKind::light,
    SourceKind::accelerometer, SourceKind::activity,  SourceKind::steps,
    SourceKind::phone_lock, SourceKind::headphone,    SourceKind::battery,
    SourceKind::wifi,       SourceKind::bluetooth,    SourceKind::call_meta,
    SourceKind::music_meta, SourceKind::photo_meta,   SourceKind::notification_meta,
    SourceKind::app_usage,  SourceKind::app_traffic,
};

std::string_view wire_tag(SourceKind source);
std::optional<SourceKind> source_from_tag(std::string_view tag);
inline std::size_t index_of(SourceKind s) { return static_cast<std::size_t>(s); }

/// Fixed-point real with exactly six decimals. Stored as integer micro-units so
/// that the text encoding round-trips without float formatting drift.
class Real {
 public:
  constexpr Real() = default;
  static constexpr Real from_micros(std::int64_t micros) { return Real(micros); }
  static Real from_double(double v);

  constexpr std::int64_t micros() const { return micros_; }
  double value() const { return static_cast<double>(micros_) / 1e6; }

  friend constexpr auto operator<=>(Real, Real) = default;

 private:
  constexpr explicit Real(std::int64_t m) : micros_(m) {}
  std::int64_t micros_ = 0;
};

using Value = std::variant<std::int64_t, Real, bool, std::string>;
using Payload = std::map<std::string, Value, std::less<>>;

/// Lowercase 64-character hex digest.
class PseudonymId {
 public:
  static std::optional<PseudonymId> parse(std::string_view hex);
  /// Throws Error(invalid_argument) if `hex` is not 64 lowercase hex chars.
  explicit PseudonymId(std::string hex);

  const std::string& str() const { return hex_; }
  friend auto operator<=>(const PseudonymId&, const PseudonymId&) = default;

 private:
  struct Unchecked {};
  PseudonymId(std::string hex, Unchecked) : hex_(std::move(hex)) {}
  std::string hex_;
};

bool is_digest(std::string_view s);

struct EventRecord {
  PseudonymId pseudonym;
  std::uint64_t seq = 0;
  TimestampMs timestamp = 0;
  SourceKind source = SourceKind::location;
  Payload payload;

  friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

// ---------------------------------------------------------------------------
// Per-source payload schemas

enum class FieldType { integer, real, boolean, digest, token };

struct FieldSpec {
  std::string_view key;
  FieldType type;
  // Inclusive bounds for integer fields, and for real fields in micro-units.
  std::int64_t min = INT64_MIN;
  std::int64_t max = INT64_MAX;
  // Allowed values for token fields.
  std::span<const std::string_view> tokens = {};
};

/// Stored (post-scrub) schema. Every key is required.
std::span<const FieldSpec> payload_schema(SourceKind source);

/// Keys that carry raw identifiers and must never appear in a stored payload.
bool is_raw_identifier_key(std::string_view key);

enum class RejectionCode {
  invalid_seq,
  negative_timestamp,
  non_increasing_seq,
  raw_identifier_field,
  unknown_key,
  missing_key,
  wrong_type,
  out_of_range,
  invalid_value,
};

struct Rejection {
  RejectionCode code;
  std::string key;  // offending payload key, when applicable

  /// Short rule name, e.g. "raw identifier field".
  std::string_view reason() const;
  std::string describe() const;
};

/// nullopt means the event is valid. `previous_seq` is the seq of the
/// predecessor in the same device stream, if any.
std::optional<Rejection> validate(const EventRecord& event,
                                  std::optional<std::uint64_t> previous_seq = std::nullopt);

// ---------------------------------------------------------------------------
// Latest-value view per source

struct Observation {
  TimestampMs timestamp = 0;
  Payload value;
  friend bool operator==(const Observation&, const Observation&) = default;
};

class ContextSnapshot {
 public:
  const std::optional<Observation>& get(SourceKind s) const { return values_[index_of(s)]; }
  void set(SourceKind s, Observation obs) { values_[index_of(s)] = std::move(obs); }
  bool empty() const;

 private:
  std::array<std::optional<Observation>, kSourceKindCount> values_;
};

// ---------------------------------------------------------------------------
// Canonical line codec

class DecodeError : public Error {
 public:
  DecodeError(std::size_t offset, const std::string& what)
      : Error(ErrorCode::malformed_input, "at byte " + std::to_string(offset) + ": " + what),
        offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// One line, no trailing newline:
///   <seq> <timestamp> <source> <pseudonym>[ <key>=<value>]... *<crc32>
/// Throws Error(invalid_event) when validate() rejects the event.
std::string canonical_encode(const EventRecord& event);

/// Strict inverse of canonical_encode; throws DecodeError.
EventRecord canonical_decode(std::string_view line);

/// Payload-only encoding (`key=value` pairs separated by single spaces).
std::string encode_payload(const Payload& payload);
Payload decode_payload(std::string_view text);

}  // namespace daytrace
