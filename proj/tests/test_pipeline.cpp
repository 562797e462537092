#include <gtest/gtest.h>

#include "daytrace/acquisition.hpp"
#include "test_support.hpp"

using namespace daytrace;

namespace {

struct Emitted {
  SourceKind source;
  TimestampMs timestamp;
  Payload payload;
};

class VectorSink : public EventSink {
 public:
  std::vector<Emitted> out;
  void emit(SourceKind s, TimestampMs t, const Payload& p) override { out.push_back({s, t, p}); }
  std::size_t count(SourceKind s) const {
    return static_cast<std::size_t>(std::count_if(out.begin(), out.end(), [&](const Emitted& e) { return e.source == s; }));
  }
};

class NullUsage : public UsageSource {
 public:
  std::optional<std::vector<UsageInterval>> query(TimestampMs, TimestampMs) override { return std::vector<UsageInterval>{}; }
};
class NullTraffic : public TrafficSource {
 public:
  std::optional<std::vector<TrafficRecord>> query(TimestampMs, TimestampMs) override { return std::vector<TrafficRecord>{}; }
};
class FixedWeather : public WeatherSource {
 public:
  std::optional<Payload> current(TimestampMs) override {
    return Payload{{"condition", std::string("rain")}, {"humidity", Real::from_double(0.8)},
                   {"temperature_c", Real::from_double(11.5)}};
  }
};

Anonymizer anon() {
  SeededRandom r(3);
  return Anonymizer(Salt::generate(r));
}

AcquisitionConfig consented() {
  AcquisitionConfig c;
  c.consent = true;
  return c;
}

RawSample lux(TimestampMs t, double v) { return {t, SourceKind::light, {{"lux", Real::from_double(v)}}}; }

std::optional<std::int64_t> light_segment(const ContextSnapshot& s) {
  const auto& o = s.get(SourceKind::light);
  if (!o) return std::nullopt;
  return std::get<std::int64_t>(o->value.at("segment"));
}

}  // namespace

TEST(Pipeline, FreshSnapshotIsEmpty) {
  VectorSink sink;
  Pipeline p(consented(), anon(), sink, {}, 0);
  EXPECT_TRUE(p.snapshot().empty());
}

TEST(Pipeline, SnapshotHoldsLatestValue) {
  VectorSink sink;
  Pipeline p(consented(), anon(), sink, {}, 0);
  p.on_sample(lux(1000, 500));
  ASSERT_EQ(light_segment(p.snapshot()), 2);
  EXPECT_EQ(p.snapshot().get(SourceKind::light)->timestamp, 1000);
  p.on_sample({2000, SourceKind::battery, {{"level", Real::from_double(0.5)}, {"charging", true}}});
  p.on_sample({3000, SourceKind::battery, {{"level", Real::from_double(0.4)}, {"charging", false}}});
  const auto& b = p.snapshot().get(SourceKind::battery);
  EXPECT_EQ(b->timestamp, 3000);
  EXPECT_EQ(std::get<Real>(b->value.at("level")).micros(), 400000);
}

TEST(Pipeline, LightEmitsOnlySegmentChanges) {
  VectorSink sink;
  Pipeline p(consented(), anon(), sink, {}, 0);
  for (int i = 0; i < 100; ++i) p.on_sample(lux(i * 1000, 9.5 + (i % 2)));
  EXPECT_EQ(sink.count(SourceKind::light), 0u);
  p.on_sample(lux(100'000, 50'000));
  ASSERT_EQ(sink.out.size(), 1u);
  EXPECT_EQ(std::get<std::int64_t>(sink.out[0].payload.at("segment_from")), 0);
  EXPECT_EQ(std::get<std::int64_t>(sink.out[0].payload.at("segment_to")), 4);
  EXPECT_EQ(p.diagnostics().get("raw.light"), 101u);
  EXPECT_EQ(p.diagnostics().get("stored.light"), 1u);
}

TEST(Pipeline, DarkFenceFiresOnEdgesOnly) {
  VectorSink sink;
  Pipeline p(consented(), anon(), sink, {}, 0);
  std::vector<bool> calls;
  p.register_fence(
      "dark", [](const ContextSnapshot& s) { auto seg = light_segment(s); return seg && *seg <= 0; },
      [&](const std::string& id, bool entered, const ContextSnapshot&) {
        EXPECT_EQ(id, "dark");
        calls.push_back(entered);
      });
  for (double v : {105.0, 5.0, 5.0, 105.0}) p.on_sample(lux(static_cast<TimestampMs>(calls.size()) * 1000, v));
  EXPECT_EQ(calls, (std::vector<bool>{true, false}));
}

TEST(Pipeline, ConstantFalseFenceNeverFires) {
  VectorSink sink;
  Pipeline p(consented(), anon(), sink, {}, 0);
  int calls = 0;
  p.register_fence("never", [](const ContextSnapshot&) { return false; },
                   [&](const std::string&, bool, const ContextSnapshot&) { ++calls; });
  for (int i = 0; i < 50; ++i) p.on_sample(lux(i * 1000, i * 300.0));
  EXPECT_EQ(calls, 0);
}

TEST(Pipeline, DuplicateFenceIdRejected) {
  VectorSink sink;
  Pipeline p(consented(), anon(), sink, {}, 0);
  auto pred = [](const ContextSnapshot&) { return true; };
  p.register_fence("x", pred, nullptr);
  try {
    p.register_fence("x", pred, nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::duplicate_identifier);
  }
  EXPECT_TRUE(p.unregister_fence("x"));
  EXPECT_FALSE(p.unregister_fence("x"));
  EXPECT_NO_THROW(p.register_fence("x", pred, nullptr));
}

TEST(Pipeline, AccelerometerGatedBySteps) {
  VectorSink sink;
  Pipeline p(consented(), anon(), sink, {}, 0);
  auto accel = [](TimestampMs t) {
    return RawSample{t, SourceKind::accelerometer,
                     {{"x", Real::from_double(0.1)}, {"y", Real::from_double(0.2)}, {"z", Real::from_double(9.8)}}};
  };
  p.on_sample(accel(50 * kSecondMs));
  p.on_sample({100 * kSecondMs, SourceKind::steps, {{"count", std::int64_t{12}}}});
  p.on_sample(accel(130 * kSecondMs));
  p.on_sample(accel(161 * kSecondMs));
  EXPECT_EQ(sink.count(SourceKind::accelerometer), 1u);
  EXPECT_EQ(p.diagnostics().get("dropped.gated.accelerometer"), 2u);
}

TEST(Pipeline, ZeroStepCountDoesNotOpenGate) {
  VectorSink sink;
  Pipeline p(consented(), anon(), sink, {}, 0);
  p.on_sample({0, SourceKind::steps, {{"count", std::int64_t{0}}}});
  p.on_sample({1000, SourceKind::accelerometer,
               {{"x", Real::from_double(0)}, {"y", Real::from_double(0)}, {"z", Real::from_double(0)}}});
  EXPECT_EQ(sink.count(SourceKind::accelerometer), 0u);
}

TEST(Pipeline, ConsentWithheldStoresNothing) {
  VectorSink sink;
  NullUsage u;
  NullTraffic tr;
  FixedWeather w;
  AcquisitionConfig cfg;  // consent absent
  Pipeline p(cfg, anon(), sink, {&u, &tr, &w}, 0);
  std::mt19937_64 e(1);
  for (int i = 0; i < 2000; ++i) {
    const SourceKind s = kAllSources[uniform_below(e, kAllSources.size())];
    p.on_sample({i * 10 * kSecondMs, s, daytrace::testing::random_payload(s, e)});
  }
  p.advance_to(kDayMs);
  EXPECT_TRUE(sink.out.empty());
  EXPECT_EQ(p.wakeups(), 0u);
  EXPECT_GT(p.diagnostics().get("dropped.no_consent"), 0u);

  p.accept_consent(kDayMs);
  p.on_sample(lux(kDayMs + 1, 50'000));
  EXPECT_EQ(sink.out.size(), 1u);
}

TEST(Pipeline, MissingPermissionDropsSource) {
  VectorSink sink;
  auto cfg = consented();
  cfg.permissions[SourceKind::location] = false;
  Pipeline p(cfg, anon(), sink, {}, 0);
  p.on_sample({0, SourceKind::location,
               {{"lat", Real::from_double(52.5)}, {"lon", Real::from_double(13.3)}, {"accuracy_m", Real::from_double(10)}}});
  p.on_sample({0, SourceKind::battery, {{"level", Real::from_double(0.5)}, {"charging", true}}});
  EXPECT_EQ(sink.count(SourceKind::location), 0u);
  EXPECT_EQ(sink.count(SourceKind::battery), 1u);
  EXPECT_EQ(p.diagnostics().get("dropped.permission.location"), 1u);
}

TEST(Pipeline, RawIdentifiersScrubbedBeforeSink) {
  VectorSink sink;
  Pipeline p(consented(), anon(), sink, {}, 0);
  p.on_sample({0, SourceKind::wifi, {{"ssid", std::string("CanaryNet")}, {"bssid", std::string("02:00:00:aa:bb:cc")}, {"connected", true}}});
  p.on_sample({0, SourceKind::wifi, {{"ssid_raw", std::string("CanaryNet")}}});
  ASSERT_EQ(sink.out.size(), 1u);
  EXPECT_EQ(encode_payload(sink.out[0].payload).find("CanaryNet"), std::string::npos);
  EXPECT_EQ(p.diagnostics().get("rejected.wifi"), 1u);
}

TEST(Pipeline, PollsCoalesceIntoWakeups) {
  VectorSink sink;
  NullUsage u;
  NullTraffic tr;
  FixedWeather w;
  Pipeline p(consented(), anon(), sink, {&u, &tr, &w}, 0);
  p.advance_to(kHourMs);
  // Usage and traffic every 15 min, weather every 30 min: 4 wakeups per hour.
  EXPECT_EQ(p.wakeups(), 4u);
  EXPECT_EQ(sink.count(SourceKind::weather), 2u);
  EXPECT_EQ(p.diagnostics().get("polls.app_usage"), 4u);
}

TEST(Pipeline, PushedSamplesOfPolledSourcesIgnored) {
  VectorSink sink;
  Pipeline p(consented(), anon(), sink, {}, 0);
  p.on_sample({0, SourceKind::weather, {{"condition", std::string("rain")}}});
  EXPECT_TRUE(sink.out.empty());
}
