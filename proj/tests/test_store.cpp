#include <gtest/gtest.h>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <fstream>

#include "daytrace/store.hpp"
#include "test_support.hpp"

using namespace daytrace;
using daytrace::testing::random_event;
using daytrace::testing::TempDir;

namespace {

std::string read(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<EventRecord> make_events(std::size_t n, std::uint64_t seed = 1) {
  std::mt19937_64 e(seed);
  std::vector<EventRecord> out;
  for (std::size_t i = 1; i <= n; ++i) out.push_back(random_event(e, i));
  return out;
}

}  // namespace

TEST(EventLog, AppendAdvancesSeq) {
  EventLog log;
  auto evs = make_events(2);
  log.append(evs[0]);
  log.append(evs[1]);
  EXPECT_EQ(log.size(), 2u);
  EXPECT_EQ(log.next_seq(), 3u);
}

TEST(EventLog, SeqMismatchRejected) {
  EventLog log;
  auto evs = make_events(5);
  log.append(evs[0]);
  log.append(evs[1]);
  try {
    log.append(evs[4]);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::seq_mismatch);
  }
  EXPECT_EQ(log.size(), 2u);
}

TEST(EventLog, InvalidEventRejected) {
  EventLog log;
  EventRecord bad{daytrace::testing::test_pseudonym(), 1, 0, SourceKind::wifi, {{"ssid", std::string("x")}}};
  EXPECT_THROW(log.append(bad), Error);
  EXPECT_EQ(log.size(), 0u);
}

TEST(EventLog, ReloadYieldsIdenticalState) {
  TempDir dir;
  auto evs = make_events(300);
  {
    auto log = EventLog::open(dir.path());
    for (const auto& e : evs) log.append(e);
    log.set_sync_cursor(120);
  }
  auto log = EventLog::open(dir.path());
  ASSERT_EQ(log.size(), evs.size());
  EXPECT_TRUE(std::equal(evs.begin(), evs.end(), log.events().begin()));
  EXPECT_EQ(log.sync_cursor(), 120u);
  EXPECT_EQ(log.recovery().bytes_discarded, 0u);
  EXPECT_EQ(log.stored_bytes(), std::filesystem::file_size(dir / "events.log"));
}

TEST(EventLog, TornTailDiscardedAndAudited) {
  TempDir dir;
  auto evs = make_events(10);
  {
    auto log = EventLog::open(dir.path());
    for (const auto& e : evs) log.append(e);
  }
  const auto size = std::filesystem::file_size(dir / "events.log");
  std::filesystem::resize_file(dir / "events.log", size - 7);
  {
    auto log = EventLog::open(dir.path());
    EXPECT_EQ(log.size(), 9u);
    EXPECT_GT(log.recovery().bytes_discarded, 0u);
    log.append(evs[9]);
  }
  auto log = EventLog::open(dir.path());
  EXPECT_EQ(log.size(), 10u);
  EXPECT_NE(read(dir / "diagnostics.log").find("recovery discarded_bytes="), std::string::npos);
}

TEST(EventLog, CorruptMiddleLineTruncatesFromThere) {
  TempDir dir;
  auto evs = make_events(10);
  {
    auto log = EventLog::open(dir.path());
    for (const auto& e : evs) log.append(e);
  }
  std::string content = read(dir / "events.log");
  std::size_t third = 0;
  for (int i = 0; i < 4; ++i) third = content.find('\n', third) + 1;
  content[third + 5] ^= 0x01;  // inside line 5
  std::ofstream(dir / "events.log", std::ios::binary | std::ios::trunc) << content;
  auto log = EventLog::open(dir.path());
  EXPECT_EQ(log.size(), 4u);
}

TEST(EventLog, CursorClampedAndMonotone) {
  EventLog log;
  for (const auto& e : make_events(5)) log.append(e);
  log.set_sync_cursor(3);
  log.set_sync_cursor(2);
  EXPECT_EQ(log.sync_cursor(), 3u);
  log.set_sync_cursor(99);
  EXPECT_EQ(log.sync_cursor(), 5u);
}

TEST(EventLog, QuotaGivesStorageFull) {
  TempDir dir;
  auto log = EventLog::open(dir.path(), LogOptions{true, 600});
  auto evs = make_events(50);
  std::size_t appended = 0;
  try {
    for (const auto& e : evs) {
      log.append(e);
      ++appended;
    }
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::storage_full);
  }
  EXPECT_EQ(log.size(), appended);
  EXPECT_LE(std::filesystem::file_size(dir / "events.log"), 600u);
  EXPECT_EQ(EventLog::open(dir.path()).size(), appended);
}

TEST(EventLog, PurgeRemovesEverythingAndResetsSeq) {
  TempDir dir;
  auto log = EventLog::open(dir.path());
  StoreSink sink(log, daytrace::testing::test_pseudonym());
  SeededRandom r(1);
  Anonymizer anon(Salt::generate(r));
  const std::string canary = "CanarySSID-purge";
  for (int i = 0; i < 100; ++i)
    sink.emit(SourceKind::wifi, i,
              anon.scrub(SourceKind::wifi, {{"ssid", canary}, {"bssid", std::string("b")}, {"connected", true}}));
  const std::string digest = anon.pseudonymize(canary).str();
  ASSERT_NE(read(dir / "events.log").find(digest), std::string::npos);
  log.set_sync_cursor(50);

  EXPECT_EQ(log.purge_all(777), 100u);
  EXPECT_EQ(log.size(), 0u);
  EXPECT_EQ(log.next_seq(), 1u);
  EXPECT_EQ(log.sync_cursor(), 0u);
  EXPECT_EQ(log.purge_all(778), 0u);

  for (const auto& entry : std::filesystem::directory_iterator(dir.path())) {
    const std::string content = read(entry.path());
    EXPECT_EQ(content.find(digest), std::string::npos) << entry.path();
    EXPECT_EQ(content.find(canary), std::string::npos) << entry.path();
  }
  EXPECT_NE(read(dir / "diagnostics.log").find("purge count=100 at=777"), std::string::npos);
  auto reopened = EventLog::open(dir.path());
  EXPECT_EQ(reopened.size(), 0u);
}

TEST(EventLog, PurgeInMemory) {
  EventLog log;
  EXPECT_EQ(log.purge_all(0), 0u);
  EXPECT_EQ(log.size(), 0u);
}

// A writer process is killed at an arbitrary point; whatever was written must
// reload as a clean prefix of what it was writing.
TEST(EventLog, SigkillLeavesCleanPrefix) {
  const auto evs = make_events(3000, 9);
  for (int round = 0; round < 5; ++round) {
    TempDir dir;
    pid_t pid = ::fork();
    ASSERT_GE(pid, 0);
    if (pid == 0) {
      auto log = EventLog::open(dir.path(), LogOptions{false, std::nullopt});
      for (const auto& e : evs) log.append(e);
      ::pause();
      ::_exit(0);
    }
    ::usleep(static_cast<useconds_t>(2000 + 3000 * round));
    ::kill(pid, SIGKILL);
    int status = 0;
    ::waitpid(pid, &status, 0);
    auto log = EventLog::open(dir.path());
    ASSERT_LE(log.size(), evs.size());
    for (std::size_t i = 0; i < log.size(); ++i) ASSERT_EQ(log.events()[i], evs[i]);
  }
}
