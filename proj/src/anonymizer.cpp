#include "daytrace/anonymizer.hpp"

#include <fcntl.h>
#include <openssl/evp.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <iterator>
#include <memory>

namespace daytrace {

namespace {

using FieldMap = std::pair<std::string_view, std::string_view>;

const FieldMap kWifiIds[] = {{"bssid", "bssid_digest"}, {"ssid", "ssid_digest"}};
const FieldMap kBluetoothIds[] = {{"address", "address_digest"}, {"name", "name_digest"}};
const FieldMap kCallIds[] = {{"peer_number", "peer_digest"}};
const FieldMap kMusicIds[] = {{"artist", "artist_digest"}, {"track", "track_digest"}};
const FieldMap kAppIds[] = {{"app_package", "app_digest"}};

void write_private_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0600);
  if (fd < 0) throw Error(ErrorCode::storage_error, "cannot create " + path.string());
  std::unique_ptr<int, void (*)(int*)> guard(&fd, [](int* f) { ::close(*f); });
  ::fchmod(fd, 0600);
  std::size_t done = 0;
  while (done < bytes.size()) {
    ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n <= 0) throw Error(ErrorCode::storage_error, "cannot write " + path.string());
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::storage_error, "cannot read " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

Salt Salt::generate(RandomSource& rng) {
  Salt s;
  rng.fill(s.bytes_);
  return s;
}

Salt Salt::from_bytes(std::span<const unsigned char> bytes) {
  if (bytes.size() != kSize) throw Error(ErrorCode::invalid_argument, "salt must be 16 bytes");
  Salt s;
  std::copy(bytes.begin(), bytes.end(), s.bytes_.begin());
  return s;
}

Salt Salt::load(const std::filesystem::path& path) {
  std::string raw = read_file(path);
  if (raw.size() != kSize)
    throw Error(ErrorCode::storage_error, "salt file " + path.string() + " is not 16 bytes");
  return from_bytes({reinterpret_cast<const unsigned char*>(raw.data()), raw.size()});
}

void Salt::save(const std::filesystem::path& path) const {
  write_private_file(path, {reinterpret_cast<const char*>(bytes_.data()), bytes_.size()});
}

Salt Salt::load_or_create(const std::filesystem::path& path, RandomSource& rng) {
  if (std::filesystem::exists(path)) return load(path);
  Salt s = generate(rng);
  s.save(path);
  return s;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCode::storage_error, "SHA-256 failed");
  return to_hex(digest, len);
}

PseudonymId pseudonymize(std::string_view value, const Salt& salt) {
  if (value.empty()) throw Error(ErrorCode::empty_value, "cannot pseudonymize an empty value");
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  auto salt_bytes = salt.bytes();
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), salt_bytes.data(), salt_bytes.size()) != 1 ||
      EVP_DigestUpdate(ctx.get(), value.data(), value.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw Error(ErrorCode::storage_error, "SHA-256 failed");
  return PseudonymId(to_hex(digest, len));
}

std::string load_or_create_installation_id(const std::filesystem::path& path, RandomSource& rng) {
  if (std::filesystem::exists(path)) {
    std::string id = read_file(path);
    if (id.empty()) throw Error(ErrorCode::storage_error, "empty installation id file");
    return id;
  }
  std::string id = random_hex(rng, 16);
  write_private_file(path, id);
  return id;
}

std::span<const std::pair<std::string_view, std::string_view>> identifying_fields(SourceKind source) {
  switch (source) {
    case SourceKind::wifi: return kWifiIds;
    case SourceKind::bluetooth: return kBluetoothIds;
    case SourceKind::call_meta: return kCallIds;
    case SourceKind::music_meta: return kMusicIds;
    case SourceKind::notification_meta:
    case SourceKind::app_usage:
    case SourceKind::app_traffic: return kAppIds;
    default: return {};
  }
}

Payload Anonymizer::scrub(SourceKind source, const Payload& raw) const {
  const auto ids = identifying_fields(source);
  const auto schema = payload_schema(source);
  Payload out;
  for (const auto& [key, value] : raw) {
    auto id = std::find_if(ids.begin(), ids.end(), [&](const FieldMap& f) { return f.first == key; });
    if (id != ids.end()) {
      const auto* text = std::get_if<std::string>(&value);
      if (!text) throw Error(ErrorCode::unknown_field, "identifier '" + key + "' must be a string");
      if (raw.find(id->second) != raw.end())
        throw Error(ErrorCode::unknown_field, "both '" + key + "' and its digest present");
      out.insert_or_assign(std::string(id->second), pseudonymize(*text).str());
      continue;
    }
    bool known = std::any_of(schema.begin(), schema.end(), [&](const FieldSpec& f) { return f.key == key; });
    if (!known) throw Error(ErrorCode::unknown_field, "'" + key + "' is not a " + std::string(wire_tag(source)) + " field");
    out.insert_or_assign(key, value);
  }
  return out;
}

}  // namespace daytrace
