#include <gtest/gtest.h>

#include <sys/stat.h>

#include <set>

#include "daytrace/anonymizer.hpp"
#include "test_support.hpp"

using namespace daytrace;
using daytrace::testing::TempDir;

namespace {

Salt salt_of(std::uint64_t seed) {
  SeededRandom r(seed);
  return Salt::generate(r);
}

}  // namespace

TEST(Pseudonymize, DeterministicForFixedSalt) {
  const Salt s = salt_of(1);
  EXPECT_EQ(pseudonymize("device-A", s), pseudonymize("device-A", s));
  EXPECT_NE(pseudonymize("device-A", s), pseudonymize("device-B", s));
}

TEST(Pseudonymize, DifferentSaltsGiveDifferentDigests) {
  SeededRandom r(2);
  for (int i = 0; i < 1000; ++i) {
    Salt a = Salt::generate(r), b = Salt::generate(r);
    ASSERT_NE(a, b);
    ASSERT_NE(pseudonymize("device-A", a), pseudonymize("device-A", b));
  }
}

TEST(Pseudonymize, EmptyValueRejected) {
  try {
    pseudonymize("", salt_of(1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::empty_value);
  }
}

TEST(Pseudonymize, MatchesSaltedSha256) {
  const Salt s = salt_of(3);
  std::string input(reinterpret_cast<const char*>(s.bytes().data()), Salt::kSize);
  input += "device-A";
  EXPECT_EQ(pseudonymize("device-A", s).str(), sha256_hex(input));
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Salt, PersistsAcrossRestartsWithPrivateMode) {
  TempDir dir;
  SystemRandom rng;
  const Salt first = Salt::load_or_create(dir / "salt", rng);
  const Salt again = Salt::load_or_create(dir / "salt", rng);
  EXPECT_EQ(first, again);
  EXPECT_EQ(pseudonymize("device-A", first), pseudonymize("device-A", Salt::load(dir / "salt")));
  struct stat st {};
  ASSERT_EQ(::stat((dir / "salt").c_str(), &st), 0);
  EXPECT_EQ(st.st_mode & 0777, 0600u);
  EXPECT_EQ(std::filesystem::file_size(dir / "salt"), Salt::kSize);
}

TEST(InstallationId, StableOnceCreated) {
  TempDir dir;
  SystemRandom rng;
  auto a = load_or_create_installation_id(dir / "id", rng);
  EXPECT_EQ(a.size(), 32u);
  EXPECT_EQ(load_or_create_installation_id(dir / "id", rng), a);
}

TEST(Scrub, WifiSsidBecomesDigest) {
  Anonymizer anon(salt_of(4));
  Payload out = anon.scrub(SourceKind::wifi, {{"ssid", std::string("HomeNet")},
                                              {"bssid", std::string("aa:bb:cc:dd:ee:ff")},
                                              {"connected", true}});
  EXPECT_EQ(out.size(), 3u);
  EXPECT_TRUE(is_digest(std::get<std::string>(out.at("ssid_digest"))));
  EXPECT_TRUE(is_digest(std::get<std::string>(out.at("bssid_digest"))));
  EXPECT_EQ(std::get<bool>(out.at("connected")), true);
  EXPECT_EQ(out.count("ssid"), 0u);
}

TEST(Scrub, BatteryUnchanged) {
  Anonymizer anon(salt_of(4));
  Payload in{{"level", Real::from_double(0.43)}, {"charging", false}};
  EXPECT_EQ(anon.scrub(SourceKind::battery, in), in);
}

TEST(Scrub, SameIdentifierOnDifferentDaysSameDigest) {
  Anonymizer anon(salt_of(5));
  auto day1 = anon.scrub(SourceKind::wifi, {{"ssid", std::string("HomeNet")}, {"bssid", std::string("x")}, {"connected", true}});
  auto day2 = anon.scrub(SourceKind::wifi, {{"ssid", std::string("HomeNet")}, {"bssid", std::string("y")}, {"connected", false}});
  EXPECT_EQ(day1.at("ssid_digest"), day2.at("ssid_digest"));
  EXPECT_NE(day1.at("bssid_digest"), day2.at("bssid_digest"));
}

TEST(Scrub, UnknownFieldRejected) {
  Anonymizer anon(salt_of(6));
  EXPECT_THROW(anon.scrub(SourceKind::battery, {{"level", Real::from_double(1)}, {"owner", std::string("x")}}), Error);
  EXPECT_THROW(anon.scrub(SourceKind::wifi, {{"ssid", std::int64_t{4}}}), Error);
}

TEST(Scrub, IdempotentAndCanaryFreeProperty) {
  Anonymizer anon(salt_of(7));
  std::mt19937_64 e(7);
  std::vector<std::string> canaries;
  for (int i = 0; i < 500; ++i) {
    const std::string id = std::to_string(i);
    const std::vector<std::pair<SourceKind, Payload>> raws = {
        {SourceKind::wifi, {{"ssid", "Canary-SSID-" + id}, {"bssid", "02:00:00:00:00:" + id}, {"connected", true}}},
        {SourceKind::bluetooth, {{"address", "CA:FE:00:00:" + id}, {"name", "owner" + id + "@mail.example"}, {"connected", false}}},
        {SourceKind::call_meta, {{"peer_number", "+4930" + id}, {"direction", std::string("incoming")}, {"duration_s", std::int64_t{30}}}},
        {SourceKind::music_meta, {{"artist", "artist" + id + "@fan.example"}, {"track", "Song " + id}, {"duration_s", std::int64_t{200}}}},
        {SourceKind::notification_meta, {{"app_package", "com.canary.app" + id}}},
    };
    for (const auto& [src, raw] : raws) {
      const Payload once = anon.scrub(src, raw);
      ASSERT_EQ(anon.scrub(src, once), once);
      const std::string text = encode_payload(once);
      for (const auto& [k, v] : raw)
        if (const auto* s = std::get_if<std::string>(&v); s && is_raw_identifier_key(k))
          ASSERT_EQ(text.find(*s), std::string::npos) << *s;
      EventRecord ev{daytrace::testing::test_pseudonym(), 1, 0, src, once};
      ASSERT_FALSE(validate(ev));
    }
  }
}

TEST(Scrub, IdentifyingFieldsListed) {
  EXPECT_EQ(identifying_fields(SourceKind::wifi).size(), 2u);
  EXPECT_EQ(identifying_fields(SourceKind::battery).size(), 0u);
  EXPECT_EQ(identifying_fields(SourceKind::app_usage).size(), 1u);
}
