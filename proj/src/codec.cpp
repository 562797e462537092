#include <zlib.h>

#include <charconv>
#include <cstdio>

#include "daytrace/event.hpp"

namespace daytrace {

namespace {

std::uint32_t line_crc(std::string_view bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void append_real(std::string& out, Real r) {
  std::int64_t m = r.micros();
  std::uint64_t mag = m < 0 ? static_cast<std::uint64_t>(-(m + 1)) + 1 : static_cast<std::uint64_t>(m);
  if (m < 0) out += '-';
  out += std::to_string(mag / 1'000'000);
  char frac[8];
  std::snprintf(frac, sizeof frac, ".%06llu", static_cast<unsigned long long>(mag % 1'000'000));
  out += frac;
}

void append_string(std::string& out, std::string_view s) {
  out += '"';
  for (unsigned char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (c < 0x20 || c == 0x7f) {
          char esc[8];
          std::snprintf(esc, sizeof esc, "\\x%02x", c);
          out += esc;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  out += '"';
}

void append_value(std::string& out, const Value& v) {
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, std::int64_t>) {
          out += std::to_string(x);
        } else if constexpr (std::is_same_v<T, Real>) {
          append_real(out, x);
        } else if constexpr (std::is_same_v<T, bool>) {
          out += x ? "true" : "false";
        } else {
          append_string(out, x);
        }
      },
      v);
}

bool is_key_start(char c) { return c >= 'a' && c <= 'z'; }
bool is_key_char(char c) { return is_key_start(c) || (c >= '0' && c <= '9') || c == '_'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

// Strict left-to-right reader; every failure reports the absolute byte offset.
class Reader {
 public:
  Reader(std::string_view text, std::size_t base) : text_(text), base_(base) {}

  bool at_end() const { return pos_ >= text_.size(); }
  char peek() const { return text_[pos_]; }
  std::size_t offset() const { return base_ + pos_; }

  [[noreturn]] void fail(const std::string& what) const { throw DecodeError(offset(), what); }

  void expect(char c) {
    if (at_end() || peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string_view token() {
    std::size_t start = pos_;
    while (!at_end() && peek() != ' ') ++pos_;
    if (pos_ == start) fail("empty field");
    return text_.substr(start, pos_ - start);
  }

  std::uint64_t unsigned_number() {
    std::size_t start = pos_;
    while (!at_end() && is_digit(peek())) ++pos_;
    auto digits = text_.substr(start, pos_ - start);
    if (digits.empty()) fail("expected digits");
    if (digits.size() > 1 && digits[0] == '0') { pos_ = start; fail("leading zero"); }
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
    if (ec != std::errc{}) { pos_ = start; fail("number out of range"); }
    return v;
  }

  std::string key() {
    std::size_t start = pos_;
    if (at_end() || !is_key_start(peek())) fail("expected key");
    while (!at_end() && is_key_char(peek())) ++pos_;
    return std::string(text_.substr(start, pos_ - start));
  }

  Value value() {
    if (at_end()) fail("expected value");
    char c = peek();
    if (c == '"') return string_value();
    if (c == 't' || c == 'f') {
      if (text_.substr(pos_, 4) == "true") { pos_ += 4; return true; }
      if (text_.substr(pos_, 5) == "false") { pos_ += 5; return false; }
      fail("bad boolean");
    }
    return number_value();
  }

 private:
  Value number_value() {
    std::size_t start = pos_;
    bool negative = false;
    if (peek() == '-') { negative = true; ++pos_; }
    std::uint64_t whole = unsigned_number();
    if (!at_end() && peek() == '.') {
      ++pos_;
      std::uint64_t frac = 0;
      for (int i = 0; i < 6; ++i) {
        if (at_end() || !is_digit(peek())) fail("real needs exactly 6 decimals");
        frac = frac * 10 + static_cast<std::uint64_t>(peek() - '0');
        ++pos_;
      }
      if (!at_end() && is_digit(peek())) fail("real needs exactly 6 decimals");
      if (whole > static_cast<std::uint64_t>(INT64_MAX) / 1'000'000) { pos_ = start; fail("real out of range"); }
      std::uint64_t mag = whole * 1'000'000 + frac;
      if (negative && mag == 0) { pos_ = start; fail("negative zero"); }
      if (mag > static_cast<std::uint64_t>(INT64_MAX)) { pos_ = start; fail("real out of range"); }
      auto m = static_cast<std::int64_t>(mag);
      return Real::from_micros(negative ? -m : m);
    }
    if (negative) {
      if (whole == 0) { pos_ = start; fail("negative zero"); }
      if (whole > static_cast<std::uint64_t>(INT64_MAX) + 1) { pos_ = start; fail("integer out of range"); }
      return static_cast<std::int64_t>(0 - whole);
    }
    if (whole > static_cast<std::uint64_t>(INT64_MAX)) { pos_ = start; fail("integer out of range"); }
    return static_cast<std::int64_t>(whole);
  }

  Value string_value() {
    ++pos_;  // opening quote
    std::string out;
    while (true) {
      if (at_end()) fail("unterminated string");
      unsigned char c = static_cast<unsigned char>(peek());
      if (c == '"') { ++pos_; return out; }
      if (c == '\\') {
        ++pos_;
        if (at_end()) fail("unterminated escape");
        char e = peek();
        ++pos_;
        switch (e) {
          case '"': out += '"'; break;
          case '\\': out += '\\'; break;
          case 'n': out += '\n'; break;
          case 'r': out += '\r'; break;
          case 't': out += '\t'; break;
          case 'x': {
            if (pos_ + 2 > text_.size()) fail("short \\x escape");
            unsigned v = 0;
            auto [p, ec] = std::from_chars(text_.data() + pos_, text_.data() + pos_ + 2, v, 16);
            if (ec != std::errc{} || p != text_.data() + pos_ + 2) fail("bad \\x escape");
            if (!(v < 0x20 || v == 0x7f) || v == '\n' || v == '\r' || v == '\t')
              fail("non-canonical escape");
            for (int i = 0; i < 2; ++i) {
              char h = text_[pos_ + i];
              if (h >= 'A' && h <= 'F') fail("non-canonical escape");
            }
            pos_ += 2;
            out += static_cast<char>(v);
            break;
          }
          default: --pos_; fail("unknown escape");
        }
        continue;
      }
      if (c < 0x20 || c == 0x7f) fail("raw control character in string");
      out += static_cast<char>(c);
      ++pos_;
    }
  }

  std::string_view text_;
  std::size_t base_;
  std::size_t pos_ = 0;
};

void parse_pairs(Reader& r, Payload& out, bool leading_space) {
  bool first = true;
  while (!r.at_end()) {
    if (leading_space || !first) r.expect(' ');
    first = false;
    std::size_t key_offset = r.offset();
    std::string key = r.key();
    r.expect('=');
    Value v = r.value();
    if (!out.empty() && !(out.rbegin()->first < key))
      throw DecodeError(key_offset, "keys must be unique and ascending");
    out.emplace_hint(out.end(), std::move(key), std::move(v));
  }
}

}  // namespace

std::string encode_payload(const Payload& payload) {
  std::string out;
  for (const auto& [k, v] : payload) {
    if (!out.empty()) out += ' ';
    out += k;
    out += '=';
    append_value(out, v);
  }
  return out;
}

Payload decode_payload(std::string_view text) {
  Payload out;
  Reader r(text, 0);
  parse_pairs(r, out, false);
  return out;
}

std::string canonical_encode(const EventRecord& event) {
  if (auto rej = validate(event)) throw Error(ErrorCode::invalid_event, rej->describe());
  std::string out;
  out.reserve(128 + event.payload.size() * 32);
  out += std::to_string(event.seq);
  out += ' ';
  out += std::to_string(event.timestamp);
  out += ' ';
  out += wire_tag(event.source);
  out += ' ';
  out += event.pseudonym.str();
  for (const auto& [k, v] : event.payload) {
    out += ' ';
    out += k;
    out += '=';
    append_value(out, v);
  }
  char crc[16];
  std::snprintf(crc, sizeof crc, " *%08x", line_crc(out));
  out += crc;
  return out;
}

EventRecord canonical_decode(std::string_view line) {
  constexpr std::size_t kTrailer = 10;  // " *" + 8 hex digits
  if (line.size() < kTrailer || line[line.size() - kTrailer] != ' ' ||
      line[line.size() - kTrailer + 1] != '*')
    throw DecodeError(line.size(), "missing checksum trailer");
  const std::size_t body_len = line.size() - kTrailer;
  const std::string_view crc_text = line.substr(body_len + 2);
  std::uint32_t stated = 0;
  for (char c : crc_text) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f')))
      throw DecodeError(body_len + 2, "bad checksum digits");
  }
  std::from_chars(crc_text.data(), crc_text.data() + crc_text.size(), stated, 16);
  const std::string_view body = line.substr(0, body_len);
  if (stated != line_crc(body)) throw DecodeError(body_len + 2, "checksum mismatch");

  Reader r(body, 0);
  EventRecord ev{PseudonymId(std::string(64, '0')), 0, 0, SourceKind::location, {}};
  ev.seq = r.unsigned_number();
  r.expect(' ');
  std::uint64_t ts = r.unsigned_number();
  if (ts > static_cast<std::uint64_t>(INT64_MAX)) r.fail("timestamp out of range");
  ev.timestamp = static_cast<TimestampMs>(ts);
  r.expect(' ');
  std::size_t tag_offset = r.offset();
  auto tag = r.token();
  auto source = source_from_tag(tag);
  if (!source) throw DecodeError(tag_offset, "unknown source tag");
  ev.source = *source;
  r.expect(' ');
  std::size_t pid_offset = r.offset();
  auto pid = PseudonymId::parse(r.token());
  if (!pid) throw DecodeError(pid_offset, "bad pseudonym");
  ev.pseudonym = std::move(*pid);
  parse_pairs(r, ev.payload, true);
  return ev;
}

}  // namespace daytrace
