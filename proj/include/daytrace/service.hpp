#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "daytrace/event.hpp"
#include "daytrace/http.hpp"
#include "daytrace/questionnaire.hpp"
#include "daytrace/random.hpp"
#include "daytrace/store.hpp"

namespace daytrace {

/// Crockford base32 alphabet (no I, L, O, U).
inline constexpr std::string_view kCrockfordAlphabet = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
inline constexpr std::size_t kParticipationCodeLength = 10;

bool is_participation_code(std::string_view code);
bool is_valid_email(std::string_view email);

// Identity side. Holds no pseudonym and nothing derived from one.
struct ParticipantRecord {
  std::string email;
  std::string participant_token;  // 128-bit random, hex
  TimestampMs enrolled_at = 0;
  bool report_received = false;
  bool completion_reported = false;
  std::optional<std::string> participation_code;  // present iff completion_reported
};

struct CompletionResult {
  bool eligible = false;
  std::optional<std::string> participation_code;
};

class ParticipantRegistry {
 public:
  /// In-memory when `file` is empty; otherwise loaded from and rewritten to it.
  explicit ParticipantRegistry(std::filesystem::path file = {});

  std::string signup(std::string_view email, TimestampMs now, RandomSource& rng);
  CompletionResult report_completion(std::string_view token, bool met_threshold, RandomSource& rng);
  std::vector<std::string> draw_raffle(std::size_t n, std::uint64_t seed) const;

  std::optional<ParticipantRecord> find_by_token(std::string_view token) const;
  std::vector<ParticipantRecord> records() const;
  std::size_t size() const;
  std::size_t completers() const;
  std::uint64_t code_collisions() const { return code_collisions_; }
  /// Full contents, one JSON object per line.
  std::string dump() const;

  /// Code generation exposed for uniqueness checks.
  std::string issue_unique_code(RandomSource& rng);

 private:
  void persist() const;

  mutable std::mutex mu_;
  std::filesystem::path file_;
  std::vector<ParticipantRecord> records_;  // enrollment order
  std::map<std::string, std::size_t> by_email_;
  std::map<std::string, std::size_t, std::less<>> by_token_;
  std::set<std::string> codes_;
  std::uint64_t code_collisions_ = 0;
};

// Telemetry side. Holds no email and no participant token.
class DeviceEventStore {
 public:
  explicit DeviceEventStore(std::filesystem::path dir = {});

  /// Verifies checksum and schema, inserts with (pseudonym, seq) dedup, and
  /// returns the highest contiguous seq stored for the pseudonym.
  std::uint64_t ingest(const PseudonymId& pseudonym, std::uint64_t first_seq, std::uint64_t last_seq,
                       std::string_view checksum, std::string_view body);

  std::size_t delete_device(const PseudonymId& pseudonym);

  std::uint64_t acked_through(const PseudonymId& pseudonym) const;
  std::size_t count(const PseudonymId& pseudonym) const;
  std::size_t total() const;
  std::vector<PseudonymId> pseudonyms() const;
  std::vector<EventRecord> events(const PseudonymId& pseudonym) const;
  std::vector<std::string> lines(const PseudonymId& pseudonym) const;
  /// Every stored line, grouped by pseudonym, ordered by seq.
  std::string dump() const;

  std::size_t max_batch = 10'000;

 private:
  struct Device {
    std::map<std::uint64_t, std::string> lines;
    std::uint64_t acked = 0;
  };
  std::filesystem::path file_for(const PseudonymId& p) const;

  mutable std::mutex mu_;
  std::filesystem::path dir_;
  std::map<std::string, Device> devices_;
};

class QuestionnaireRepository {
 public:
  explicit QuestionnaireRepository(std::filesystem::path dir = {});

  /// Versions are immutable: republishing identical content is a no-op, any
  /// other reuse or a non-increasing version is a version-conflict.
  void publish(const QuestionnaireDef& def);
  /// Serialized latest definition; throws none-published.
  std::string latest() const;
  int latest_version() const;

 private:
  mutable std::mutex mu_;
  std::filesystem::path dir_;
  std::map<int, std::string> versions_;
};

struct ServiceOptions {
  /// Empty = in-memory. Otherwise `registry/`, `events/` and `questionnaires/`
  /// live in separate subdirectories.
  std::filesystem::path data_dir;
  /// Required in the `admin` header of raffle and publish requests. Empty
  /// disables those endpoints.
  std::string admin_key;
  std::function<TimestampMs()> clock;
  RandomSource* rng = nullptr;  // defaults to SystemRandom
};

class StudyService {
 public:
  explicit StudyService(ServiceOptions options = {});

  std::uint64_t ingest(const PseudonymId& pseudonym, std::uint64_t first_seq, std::uint64_t last_seq,
                       std::string_view checksum, std::string_view body);
  std::string signup(std::string_view email);
  CompletionResult report_completion(std::string_view token, bool met_threshold);
  std::vector<std::string> draw_raffle(std::size_t n, std::uint64_t seed) const;
  void publish_questionnaire(const QuestionnaireDef& def);
  std::string latest_questionnaire() const;
  std::size_t delete_device_data(const PseudonymId& pseudonym);
  std::vector<DailyAggregate> aggregates(const PseudonymId& pseudonym, Date from, Date to) const;

  /// Routes one HTTP request to the operations above.
  HttpResponse handle(const HttpRequest& request);
  Handler handler() {
    return [this](const HttpRequest& r) { return handle(r); };
  }

  const ParticipantRegistry& registry() const { return registry_; }
  const DeviceEventStore& event_store() const { return events_; }

 private:
  TimestampMs now() const;

  ServiceOptions options_;
  SystemRandom system_rng_;
  RandomSource& rng_;
  std::mutex rng_mu_;
  ParticipantRegistry registry_;
  DeviceEventStore events_;
  QuestionnaireRepository questionnaires_;
};

std::string aggregate_to_json(const DailyAggregate& a);

}  // namespace daytrace
