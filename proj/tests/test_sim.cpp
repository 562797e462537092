#include <gtest/gtest.h>

#include <algorithm>

#include "daytrace/service.hpp"
#include "daytrace/sim.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace daytrace;

namespace {

SimConfig cfg(std::uint64_t seed, int days = 2) {
  SimConfig c;
  c.seed = seed;
  c.days = days;
  return c;
}

ReplayOptions consented() {
  ReplayOptions o;
  o.acquisition.consent = true;
  return o;
}

std::size_t stored(const EventLog& log, SourceKind s) {
  return static_cast<std::size_t>(
      std::count_if(log.events().begin(), log.events().end(), [&](const EventRecord& e) { return e.source == s; }));
}

struct InProcessStudy {
  SeededRandom rng;
  StudyService service;
  InProcessTransport transport;

  explicit InProcessStudy(std::uint64_t seed, std::string admin = "sim-admin")
      : rng(seed),
        service(ServiceOptions{{}, std::move(admin), [] { return TimestampMs{0}; }, &rng}),
        transport(service.handler()) {}
};

}  // namespace

TEST(Trace, Deterministic) {
  EXPECT_EQ(encode_trace(generate_trace(cfg(7))), encode_trace(generate_trace(cfg(7))));
  EXPECT_NE(encode_trace(generate_trace(cfg(7))), encode_trace(generate_trace(cfg(8))));
}

TEST(Trace, ZeroDaysIsEmpty) {
  auto t = generate_trace(cfg(1, 0));
  EXPECT_TRUE(t.events.empty());
  EXPECT_EQ(t.start, t.end);
}

TEST(Trace, InvalidConfig) {
  EXPECT_THROW(generate_trace(cfg(1, -1)), Error);
  SimConfig c = cfg(1);
  c.profile.wake_hour = 23;
  c.profile.sleep_hour = 7;
  EXPECT_THROW(generate_trace(c), Error);
}

TEST(Trace, SortedAndInRange) {
  auto t = generate_trace(cfg(3));
  EXPECT_EQ(t.start, start_of_day(std::chrono::year{2026} / 1 / 5));
  EXPECT_EQ(t.end, t.start + 2 * kDayMs);
  EXPECT_TRUE(std::is_sorted(t.events.begin(), t.events.end(),
                             [](const TraceEvent& a, const TraceEvent& b) { return a.timestamp < b.timestamp; }));
  for (const auto& e : t.events) {
    ASSERT_GE(e.timestamp, t.start);
    ASSERT_LT(e.timestamp, t.end);
  }
}

TEST(Trace, LockEventsAlternate) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto t = generate_trace(cfg(seed));
    std::optional<bool> last;
    std::size_t n = 0;
    for (const auto& e : t.events) {
      if (e.source != SourceKind::phone_lock) continue;
      const bool locked = std::get<bool>(e.payload.at("locked"));
      if (last) ASSERT_NE(*last, locked) << "seed " << seed;
      last = locked;
      ++n;
    }
    ASSERT_GT(n, 0u);
  }
}

TEST(Trace, EncodeDecodeRoundTrip) {
  auto t = generate_trace(cfg(11));
  auto back = decode_trace(encode_trace(t));
  EXPECT_EQ(back.events, t.events);
  EXPECT_EQ(back.start, t.start);
  EXPECT_EQ(back.end, t.end);
  EXPECT_EQ(back.config.seed, 11u);
  EXPECT_THROW(decode_trace("not a trace"), Error);
  std::string text = encode_trace(t);
  text.resize(text.size() - 3);
  EXPECT_THROW(decode_trace(text), Error);
}

TEST(Trace, SaveLoad) {
  daytrace::testing::TempDir dir;
  auto t = generate_trace(cfg(12, 1));
  save_trace(t, dir / "t.trace");
  EXPECT_EQ(load_trace(dir / "t.trace").events, t.events);
}

TEST(Replay, ReferenceReduction) {
  auto t = generate_trace(cfg(42, 7));
  EventLog log;
  auto r = replay(t, log, consented());
  EXPECT_GT(r.sources.at(SourceKind::light).raw, 10'000u);
  EXPECT_LE(r.light_ratio(), 0.05);
  EXPECT_EQ(r.sources.at(SourceKind::light).stored, stored(log, SourceKind::light));
  EXPECT_EQ(r.stored_total, log.size());
  EXPECT_EQ(r.stored_bytes, log.stored_bytes());
  // Four 15-minute and two 30-minute polls per hour coincide: four wakeups.
  EXPECT_EQ(r.wakeups, 7u * 24 * 4);
}

TEST(Replay, HysteresisNeverStoresMoreLight) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto t = generate_trace(cfg(seed, 1));
    EventLog on_log, off_log;
    auto on = consented();
    auto off = consented();
    off.acquisition.light_margin = 0;
    replay(t, on_log, on);
    replay(t, off_log, off);
    ASSERT_LE(stored(on_log, SourceKind::light), stored(off_log, SourceKind::light)) << "seed " << seed;
  }
}

TEST(Replay, ConsentWithheldStoresAndSendsNothing) {
  InProcessStudy s(1);
  CapturingTransport capture(s.transport);
  auto t = generate_trace(cfg(5));
  EventLog log;
  ReplayOptions o;  // consent absent
  o.transport = &capture;
  auto r = replay(t, log, o);
  EXPECT_EQ(log.size(), 0u);
  EXPECT_EQ(r.stored_total, 0u);
  EXPECT_EQ(r.wakeups, 0u);
  EXPECT_EQ(r.uploads, 0u);
  EXPECT_TRUE(capture.exchanges().empty());
  EXPECT_EQ(s.service.event_store().total(), 0u);
}

TEST(Replay, UploadsEverythingExactlyOnce) {
  InProcessStudy s(2);
  auto t = generate_trace(cfg(6));
  EventLog log;
  auto o = consented();
  o.transport = &s.transport;
  const SimDevice device = SimDevice::from_seed(99);
  auto r = replay(t, log, device, o);
  EXPECT_EQ(r.acked_through, log.size());
  const auto server = s.service.event_store().lines(device.pseudonym);
  ASSERT_EQ(server.size(), log.size());
  EXPECT_TRUE(std::equal(server.begin(), server.end(), log.lines().begin()));
}

TEST(Replay, AcceleratorGatedByStepWindows) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = generate_trace(cfg(seed, 1));
    std::vector<TimestampMs> steps;
    for (const auto& e : t.events)
      if (e.source == SourceKind::steps && std::get<std::int64_t>(e.payload.at("count")) > 0)
        steps.push_back(e.timestamp);
    EventLog log;
    replay(t, log, consented());
    std::size_t accel = 0;
    for (const auto& e : log.events()) {
      if (e.source != SourceKind::accelerometer) continue;
      ++accel;
      auto it = std::upper_bound(steps.begin(), steps.end(), e.timestamp);
      ASSERT_NE(it, steps.begin());
      ASSERT_LT(e.timestamp - *std::prev(it), 60 * kSecondMs);
    }
    ASSERT_GT(accel, 0u);
  }
}

TEST(Replay, HourBucketsConserveSessionTime) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto t = generate_trace(cfg(seed));
    const SimDevice device = SimDevice::from_seed(seed);
    EventLog log;
    replay(t, log, device, consented());
    std::map<std::string, std::int64_t> got;
    for (const auto& e : log.events())
      if (e.source == SourceKind::app_usage)
        got[std::get<std::string>(e.payload.at("app_digest"))] += std::get<std::int64_t>(e.payload.at("seconds_used"));
    std::map<std::string, std::int64_t> want;
    for (const auto& [pkg, secs] : session_totals(t)) want[device.anonymizer.pseudonymize(pkg).str()] += secs;
    ASSERT_EQ(got, want) << "seed " << seed;
  }
}

TEST(Replay, NoCanaryReachesTheLog) {
  auto t = generate_trace(cfg(13));
  const auto canaries = t.canaries();
  ASSERT_FALSE(canaries.empty());
  EventLog log;
  replay(t, log, consented());
  std::string all;
  for (const auto& l : log.lines()) all += l + "\n";
  for (const auto& c : canaries) ASSERT_EQ(all.find(c), std::string::npos) << c;
}

TEST(Replay, ReportFormats) {
  auto t = generate_trace(cfg(1, 1));
  EventLog log;
  auto r = replay(t, log, consented());
  EXPECT_NE(r.text().find("light stored/raw"), std::string::npos);
  EXPECT_NE(r.json().find("\"light_ratio\""), std::string::npos);
}

TEST(Study, AllCompleteGivesUniqueCodes) {
  InProcessStudy s(3);
  StudyConfig c;
  c.telemetry = false;
  c.completion_probabilities = {1.0};
  auto r = run_study(c, s.transport);
  std::set<std::string> codes;
  for (const auto& u : r.users) {
    ASSERT_TRUE(u.participation_code);
    codes.insert(*u.participation_code);
  }
  EXPECT_EQ(codes.size(), 50u);
  EXPECT_EQ(r.raffle_winners.size(), 5u);
}

TEST(Study, NobodyCompletesGivesNoCodes) {
  InProcessStudy s(4);
  StudyConfig c;
  c.telemetry = false;
  c.completion_probabilities = {0.0};
  auto r = run_study(c, s.transport);
  for (const auto& u : r.users) EXPECT_FALSE(u.participation_code);
  EXPECT_TRUE(r.raffle_winners.empty());
}

TEST(Study, CodesMatchCountingOracle) {
  InProcessStudy s(5);
  StudyConfig c;
  c.telemetry = false;
  auto r = run_study(c, s.transport);
  const int need = oracle::required_days(c.threshold, c.days);
  std::size_t eligible = 0;
  std::set<std::string> completer_emails;
  for (const auto& u : r.users) {
    const bool want = static_cast<int>(u.completed_days.size()) >= need;
    ASSERT_EQ(u.participation_code.has_value(), want) << u.index;
    if (want) {
      ++eligible;
      completer_emails.insert(u.email);
    }
  }
  EXPECT_GT(eligible, 0u);
  EXPECT_LT(eligible, r.users.size());
  for (const auto& w : r.raffle_winners) EXPECT_TRUE(completer_emails.count(w)) << w;
}

TEST(Study, ReportIsDeterministic) {
  StudyConfig c;
  c.users = 6;
  c.days = 3;
  InProcessStudy a(9), b(9);
  EXPECT_EQ(run_study(c, a.transport).json(), run_study(c, b.transport).json());
}

TEST(Study, UnreachableService) {
  InProcessTransport dead([](const HttpRequest&) { return HttpResponse{}; });
  StudyConfig c;
  c.users = 1;
  try {
    run_study(c, dead);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::service_unreachable);
  }
}
