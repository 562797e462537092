#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <iterator>

#include "daytrace/store.hpp"

namespace daytrace {

namespace {

constexpr const char* kLogFile = "events.log";
constexpr const char* kCursorFile = "events.log.cursor";
constexpr const char* kDiagnosticsFile = "diagnostics.log";

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return {};
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(int fd, std::string_view data, const std::string& what) {
  std::size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) {
      int err = errno;
      throw Error(err == ENOSPC || err == EDQUOT ? ErrorCode::storage_full : ErrorCode::storage_error,
                  what + ": " + std::strerror(err));
    }
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

EventLog EventLog::open(const std::filesystem::path& dir, LogOptions options) {
  std::filesystem::create_directories(dir);
  EventLog log;
  log.dir_ = dir;
  log.options_ = options;

  const auto path = dir / kLogFile;
  const std::string content = slurp(path);
  std::size_t pos = 0;
  std::size_t valid_end = 0;
  while (pos < content.size()) {
    auto nl = content.find('\n', pos);
    if (nl == std::string::npos) break;  // torn final line
    std::string_view line(content.data() + pos, nl - pos);
    try {
      EventRecord ev = canonical_decode(line);
      std::optional<std::uint64_t> prev;
      if (!log.events_.empty()) prev = log.events_.back().seq;
      if (validate(ev, prev) || ev.seq != log.next_seq()) break;
      log.events_.push_back(std::move(ev));
      log.lines_.emplace_back(line);
    } catch (const DecodeError&) {
      break;
    }
    pos = nl + 1;
    valid_end = pos;
  }
  log.stored_bytes_ = valid_end;
  log.recovery_.lines_loaded = log.events_.size();
  log.recovery_.bytes_discarded = content.size() - valid_end;

  log.fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0600);
  if (log.fd_ < 0) throw Error(ErrorCode::storage_error, "cannot open " + path.string());
  if (log.recovery_.bytes_discarded > 0) {
    if (::ftruncate(log.fd_, static_cast<off_t>(valid_end)) != 0 || ::fsync(log.fd_) != 0)
      throw Error(ErrorCode::storage_error, "cannot truncate torn tail of " + path.string());
    log.audit("recovery discarded_bytes=" + std::to_string(log.recovery_.bytes_discarded));
  }

  std::string cursor = slurp(dir / kCursorFile);
  if (!cursor.empty()) {
    try {
      log.cursor_ = std::min<std::uint64_t>(std::stoull(cursor), log.max_seq());
    } catch (const std::exception&) {
      log.cursor_ = 0;
    }
  }
  return log;
}

EventLog::EventLog(EventLog&& other) noexcept
    : dir_(std::move(other.dir_)),
      options_(other.options_),
      fd_(std::exchange(other.fd_, -1)),
      events_(std::move(other.events_)),
      lines_(std::move(other.lines_)),
      stored_bytes_(other.stored_bytes_),
      cursor_(other.cursor_),
      recovery_(other.recovery_) {}

EventLog& EventLog::operator=(EventLog&& other) noexcept {
  if (this != &other) {
    if (fd_ >= 0) ::close(fd_);
    dir_ = std::move(other.dir_);
    options_ = other.options_;
    fd_ = std::exchange(other.fd_, -1);
    events_ = std::move(other.events_);
    lines_ = std::move(other.lines_);
    stored_bytes_ = other.stored_bytes_;
    cursor_ = other.cursor_;
    recovery_ = other.recovery_;
  }
  return *this;
}

EventLog::~EventLog() {
  if (fd_ >= 0) ::close(fd_);
}

void EventLog::append(const EventRecord& event) {
  std::optional<std::uint64_t> prev;
  if (!events_.empty()) prev = events_.back().seq;
  if (auto rej = validate(event, prev)) throw Error(ErrorCode::invalid_event, rej->describe());
  if (event.seq != next_seq())
    throw Error(ErrorCode::seq_mismatch,
                "expected seq " + std::to_string(next_seq()) + ", got " + std::to_string(event.seq));

  std::string line = canonical_encode(event);
  const std::uint64_t bytes = line.size() + 1;
  if (options_.max_bytes && stored_bytes_ + bytes > *options_.max_bytes)
    throw Error(ErrorCode::storage_full, "log quota exhausted");

  if (fd_ >= 0) {
    std::string framed = line + '\n';
    try {
      write_all(fd_, framed, "append");
    } catch (const Error&) {
      // Drop any partial line so the file stays a clean prefix; if that fails
      // too, the next open discards it.
      if (::ftruncate(fd_, static_cast<off_t>(stored_bytes_)) != 0) audit("append rollback failed");
      throw;
    }
    if (options_.sync_each_append && ::fdatasync(fd_) != 0)
      throw Error(ErrorCode::storage_error, "fdatasync failed");
  }
  stored_bytes_ += bytes;
  events_.push_back(event);
  lines_.push_back(std::move(line));
}

void EventLog::set_sync_cursor(std::uint64_t acked) {
  acked = std::min(acked, max_seq());
  if (acked <= cursor_) return;
  cursor_ = acked;
  write_cursor();
}

void EventLog::write_cursor() {
  if (fd_ < 0) return;
  const auto tmp = dir_ / (std::string(kCursorFile) + ".tmp");
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << cursor_ << "\n";
    if (!out) throw Error(ErrorCode::storage_error, "cannot write sync cursor");
  }
  std::filesystem::rename(tmp, dir_ / kCursorFile);
}

void EventLog::audit(const std::string& line) {
  if (dir_.empty()) return;
  std::ofstream out(dir_ / kDiagnosticsFile, std::ios::app);
  out << line << "\n";
}

std::size_t EventLog::purge_all(TimestampMs now) {
  const std::size_t count = events_.size();
  if (fd_ >= 0) {
    if (::ftruncate(fd_, 0) != 0 || ::fsync(fd_) != 0)
      throw Error(ErrorCode::storage_error, "cannot truncate event log");
  }
  events_.clear();
  events_.shrink_to_fit();
  lines_.clear();
  lines_.shrink_to_fit();
  stored_bytes_ = 0;
  cursor_ = 0;
  if (fd_ >= 0) {
    std::error_code ec;
    std::filesystem::remove(dir_ / kCursorFile, ec);
  }
  audit("purge count=" + std::to_string(count) + " at=" + std::to_string(now));
  return count;
}

void StoreSink::emit(SourceKind source, TimestampMs timestamp, const Payload& payload) {
  std::lock_guard lock(mu_);
  log_.append(EventRecord{pseudonym_, log_.next_seq(), timestamp, source, payload});
}

}  // namespace daytrace
