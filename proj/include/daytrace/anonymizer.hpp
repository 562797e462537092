#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

#include "daytrace/event.hpp"
#include "daytrace/random.hpp"

namespace daytrace {

/// Per-installation secret. Deliberately not printable or serializable except
/// through save(); it must never reach an event, a log line or the wire.
class Salt {
 public:
  static constexpr std::size_t kSize = 16;

  static Salt generate(RandomSource& rng);
  static Salt from_bytes(std::span<const unsigned char> bytes);

  /// Reads the 16-byte salt at `path`, creating it (mode 0600) if absent.
  static Salt load_or_create(const std::filesystem::path& path, RandomSource& rng);
  static Salt load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::span<const unsigned char, kSize> bytes() const { return bytes_; }

  friend bool operator==(const Salt&, const Salt&) = default;

 private:
  Salt() = default;
  std::array<unsigned char, kSize> bytes_{};
};

/// Lowercase hex SHA-256 of `data`.
std::string sha256_hex(std::string_view data);

/// SHA-256(salt || value) as lowercase hex. Throws Error(empty_value) on "".
PseudonymId pseudonymize(std::string_view value, const Salt& salt);

/// Random installation identifier standing in for a platform-provided device
/// ID. Persisted next to the salt; created on first use.
std::string load_or_create_installation_id(const std::filesystem::path& path, RandomSource& rng);

class Anonymizer {
 public:
  explicit Anonymizer(Salt salt) : salt_(std::move(salt)) {}

  PseudonymId pseudonymize(std::string_view value) const {
    return daytrace::pseudonymize(value, salt_);
  }

  /// Replaces every identifying field of a raw payload with its digest
  /// (e.g. wifi `ssid` -> `ssid_digest`). Already-scrubbed fields pass through,
  /// so scrub is idempotent. Throws Error(unknown_field) for keys outside the
  /// raw and stored schemas of `source`.
  Payload scrub(SourceKind source, const Payload& raw) const;

 private:
  Salt salt_;
};

/// Raw-field name -> stored digest field name for `source`; empty when the
/// source carries no identifying fields.
std::span<const std::pair<std::string_view, std::string_view>> identifying_fields(SourceKind source);

}  // namespace daytrace
