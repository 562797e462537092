#include <gtest/gtest.h>

#include <fstream>

#include "daytrace/service.hpp"
#include "daytrace/sync.hpp"
#include "faulty_transport.hpp"
#include "test_support.hpp"

using namespace daytrace;
using daytrace::testing::random_event;
using daytrace::testing::TempDir;
using daytrace::testing::test_pseudonym;

namespace {

void fill(EventLog& log, std::size_t n, std::uint64_t seed = 1, const PseudonymId& pid = test_pseudonym()) {
  std::mt19937_64 e(seed);
  while (log.size() < n) log.append(random_event(e, log.next_seq(), pid));
}

ConsentState granted() {
  ConsentState c;
  c.accept(0);
  return c;
}

StudyService make_service() {
  static SeededRandom rng(3);
  ServiceOptions o;
  o.rng = &rng;
  o.clock = [] { return TimestampMs{0}; };
  return StudyService(o);
}

class CountingTransport final : public Transport {
 public:
  explicit CountingTransport(std::function<HttpResponse(const HttpRequest&)> f) : f_(std::move(f)) {}
  HttpResponse send(const HttpRequest& r) override {
    requests.push_back(r);
    return f_(r);
  }
  std::vector<HttpRequest> requests;

 private:
  std::function<HttpResponse(const HttpRequest&)> f_;
};

}  // namespace

TEST(Batching, SplitsIntoBoundedConsecutiveBatches) {
  EventLog log;
  fill(log, 1200);
  auto batches = make_batches(log, test_pseudonym(), AckState(0));
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].first_seq, 1u);
  EXPECT_EQ(batches[0].last_seq, 500u);
  EXPECT_EQ(batches[1].first_seq, 501u);
  EXPECT_EQ(batches[1].last_seq, 1000u);
  EXPECT_EQ(batches[2].first_seq, 1001u);
  EXPECT_EQ(batches[2].last_seq, 1200u);
  EXPECT_TRUE(make_batches(log, test_pseudonym(), AckState(1200)).empty());
}

TEST(Batching, ConcatenationEqualsUnackedSuffix) {
  EventLog log;
  fill(log, 777);
  std::mt19937_64 e(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::uint64_t ack = uniform_below(e, 778);
    const std::size_t size = 1 + uniform_below(e, 300);
    std::vector<std::string> joined;
    std::uint64_t expect_first = ack + 1;
    for (const auto& b : make_batches(log, test_pseudonym(), AckState(ack), size)) {
      ASSERT_EQ(b.first_seq, expect_first);
      ASSERT_LE(b.lines.size(), size);
      ASSERT_EQ(b.last_seq - b.first_seq + 1, b.lines.size());
      ASSERT_EQ(b.checksum, sha256_hex(b.body()));
      joined.insert(joined.end(), b.lines.begin(), b.lines.end());
      expect_first = b.last_seq + 1;
    }
    const auto lines = log.lines();
    ASSERT_TRUE(std::equal(joined.begin(), joined.end(), lines.begin() + static_cast<std::ptrdiff_t>(ack),
                           lines.end()));
  }
}

TEST(Batching, RequestCarriesOnlyPseudonymousHeaders) {
  EventLog log;
  fill(log, 3);
  auto r = make_batches(log, test_pseudonym(), AckState(0))[0].to_request();
  EXPECT_EQ(r.method, "POST");
  EXPECT_EQ(r.path, "/v1/events");
  EXPECT_EQ(r.headers.at("pseudonym"), test_pseudonym().str());
  EXPECT_EQ(r.headers.at("first_seq"), "1");
  EXPECT_EQ(r.headers.at("last_seq"), "3");
  EXPECT_EQ(r.headers.at("checksum"), sha256_hex(r.body));
  EXPECT_EQ(r.headers.count("participant_token"), 0u);
}

TEST(AckState, NeverDecreases) {
  AckState a(10);
  a.advance(5);
  EXPECT_EQ(a.acked(), 10u);
  a.advance(12);
  EXPECT_EQ(a.acked(), 12u);
}

TEST(Upload, DuplicateBatchStoredOnce) {
  auto service = make_service();
  InProcessTransport t(service.handler());
  EventLog log;
  fill(log, 40);
  const Batch b = make_batches(log, test_pseudonym(), AckState(0))[0];
  auto first = upload(t, b);
  auto second = upload(t, b);
  EXPECT_EQ(first.status, UploadStatus::acked);
  EXPECT_EQ(second.status, UploadStatus::acked);
  EXPECT_EQ(first.acked_through, 40u);
  EXPECT_EQ(second.acked_through, 40u);
  EXPECT_EQ(service.event_store().count(test_pseudonym()), 40u);
}

TEST(Upload, Classification) {
  Batch b = make_batch(test_pseudonym(), 1, {"x"});
  auto with = [&](int status, std::string body = "{}") {
    CountingTransport t([=](const HttpRequest&) { return HttpResponse{status, {}, body}; });
    return upload(t, b).status;
  };
  EXPECT_EQ(with(200, R"({"acked_through":1})"), UploadStatus::acked);
  EXPECT_EQ(with(200, "garbage"), UploadStatus::retryable);
  EXPECT_EQ(with(400), UploadStatus::permanent);
  EXPECT_EQ(with(422), UploadStatus::retryable);
  EXPECT_EQ(with(503), UploadStatus::retryable);
  EXPECT_EQ(with(0), UploadStatus::retryable);
}

TEST(SyncClient, DroppedAckThenRetryConverges) {
  auto service = make_service();
  InProcessTransport inner(service.handler());
  bool drop_next_response = true;
  CountingTransport t([&](const HttpRequest& r) {
    HttpResponse resp = inner.send(r);
    if (drop_next_response) {
      drop_next_response = false;
      return HttpResponse{};
    }
    return resp;
  });
  EventLog log;
  fill(log, 120);
  Diagnostics diag;
  SyncClient sync(log, test_pseudonym(), t, {}, &diag);
  EXPECT_EQ(sync.drain(0, granted()), SyncOutcome::retry_scheduled);
  EXPECT_EQ(log.sync_cursor(), 0u);
  EXPECT_EQ(service.event_store().count(test_pseudonym()), 120u);
  EXPECT_EQ(sync.drain(500, granted()), SyncOutcome::not_due);
  EXPECT_EQ(sync.drain(kSecondMs, granted()), SyncOutcome::idle);
  EXPECT_EQ(log.sync_cursor(), 120u);
  EXPECT_EQ(service.event_store().count(test_pseudonym()), 120u);
  EXPECT_EQ(diag.get("sync.retries"), 1u);
}

TEST(SyncClient, BackoffDoublesAndCaps) {
  CountingTransport t([](const HttpRequest&) { return HttpResponse{503, {}, "busy"}; });
  EventLog log;
  fill(log, 5);
  SyncClient sync(log, test_pseudonym(), t);
  TimestampMs now = 0;
  std::vector<TimestampMs> backoffs;
  for (int i = 0; i < 12; ++i) {
    ASSERT_EQ(sync.step(now, granted()), SyncOutcome::retry_scheduled);
    backoffs.push_back(sync.current_backoff());
    ASSERT_EQ(sync.step(sync.next_attempt() - 1, granted()), SyncOutcome::not_due);
    now = sync.next_attempt();
  }
  EXPECT_EQ(backoffs[0], 1 * kSecondMs);
  EXPECT_EQ(backoffs[1], 2 * kSecondMs);
  EXPECT_EQ(backoffs[2], 4 * kSecondMs);
  EXPECT_EQ(backoffs[8], 256 * kSecondMs);
  EXPECT_EQ(backoffs[9], 5 * kMinuteMs);
  EXPECT_EQ(backoffs[11], 5 * kMinuteMs);
  EXPECT_EQ(t.requests.size(), 12u);
}

TEST(SyncClient, PermanentFailureHaltsAndLogs) {
  TempDir dir;
  CountingTransport t([](const HttpRequest&) { return HttpResponse{400, {}, R"({"error":"schema"})"}; });
  auto log = EventLog::open(dir.path());
  fill(log, 10);
  Diagnostics diag;
  SyncClient sync(log, test_pseudonym(), t, {}, &diag);
  EXPECT_EQ(sync.drain(0, granted()), SyncOutcome::halted);
  EXPECT_EQ(sync.drain(kHourMs, granted()), SyncOutcome::halted);
  EXPECT_EQ(t.requests.size(), 1u);
  EXPECT_EQ(log.sync_cursor(), 0u);
  EXPECT_EQ(diag.get("sync.permanent_failures"), 1u);
  std::ifstream in(dir / "diagnostics.log");
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_NE(content.find("sync halted"), std::string::npos);
  EXPECT_NE(content.find("first_seq=1 last_seq=10"), std::string::npos);
  sync.resume();
  EXPECT_FALSE(sync.halted());
}

TEST(SyncClient, ConsentDeniedSendsNothing) {
  CountingTransport t([](const HttpRequest&) { return HttpResponse{200, {}, R"({"acked_through":0})"}; });
  EventLog log;
  fill(log, 10);
  SyncClient sync(log, test_pseudonym(), t);
  EXPECT_EQ(sync.drain(0, ConsentState{}), SyncOutcome::consent_denied);
  EXPECT_TRUE(t.requests.empty());
}

TEST(SyncClient, OneBatchInFlightInOrder) {
  auto service = make_service();
  InProcessTransport inner(service.handler());
  CountingTransport t([&](const HttpRequest& r) { return inner.send(r); });
  EventLog log;
  fill(log, 1200);
  SyncClient sync(log, test_pseudonym(), t);
  EXPECT_EQ(sync.drain(0, granted()), SyncOutcome::idle);
  ASSERT_EQ(t.requests.size(), 3u);
  EXPECT_EQ(t.requests[0].headers.at("first_seq"), "1");
  EXPECT_EQ(t.requests[1].headers.at("first_seq"), "501");
  EXPECT_EQ(t.requests[2].headers.at("first_seq"), "1001");
  EXPECT_EQ(sync.uploads(), 3u);
}

TEST(SyncClient, CursorSurvivesRestart) {
  TempDir dir;
  auto service = make_service();
  InProcessTransport t(service.handler());
  {
    auto log = EventLog::open(dir.path());
    fill(log, 700);
    SyncClient sync(log, test_pseudonym(), t);
    sync.step(0, granted());
    EXPECT_EQ(log.sync_cursor(), 500u);
  }
  auto log = EventLog::open(dir.path());
  EXPECT_EQ(log.sync_cursor(), 500u);
  CountingTransport counting([&](const HttpRequest& r) { return t.send(r); });
  SyncClient sync(log, test_pseudonym(), counting);
  EXPECT_EQ(sync.drain(0, granted()), SyncOutcome::idle);
  ASSERT_EQ(counting.requests.size(), 1u);
  EXPECT_EQ(counting.requests[0].headers.at("first_seq"), "501");
}

TEST(SyncClient, FaultyNetworkDeliversExactlyOnce) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    auto service = make_service();
    InProcessTransport inner(service.handler());
    daytrace::testing::FaultyTransport t(inner, seed, {0.15, 0.15, 0.15, 0.15});
    EventLog log;
    std::mt19937_64 e(seed);
    SyncClient sync(log, test_pseudonym(), t, SyncOptions{50, kSecondMs, 5 * kMinuteMs});
    TimestampMs now = 0;
    for (int round = 0; round < 40; ++round) {
      fill(log, log.size() + uniform_below(e, 60), seed);
      now += static_cast<TimestampMs>(uniform_below(e, 10)) * kSecondMs;
      sync.drain(now, granted());
    }
    for (int i = 0; i < 500 && log.sync_cursor() < log.max_seq(); ++i) {
      now = std::max(now + kSecondMs, sync.next_attempt());
      sync.drain(now, granted());
    }
    t.flush();
    ASSERT_EQ(log.sync_cursor(), log.max_seq()) << seed;
    const auto stored = service.event_store().lines(test_pseudonym());
    const auto local = log.lines();
    ASSERT_TRUE(std::equal(stored.begin(), stored.end(), local.begin(), local.end())) << seed;
  }
}
