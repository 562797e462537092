#include "daytrace/sync.hpp"

#include <json.hpp>

#include <fstream>

#include "daytrace/anonymizer.hpp"

namespace daytrace {

std::string Batch::body() const {
  std::string out;
  std::size_t n = 0;
  for (const auto& l : lines) n += l.size() + 1;
  out.reserve(n);
  for (const auto& l : lines) {
    out += l;
    out += '\n';
  }
  return out;
}

HttpRequest Batch::to_request() const {
  HttpRequest r;
  r.method = "POST";
  r.path = "/v1/events";
  r.headers["pseudonym"] = pseudonym.str();
  r.headers["first_seq"] = std::to_string(first_seq);
  r.headers["last_seq"] = std::to_string(last_seq);
  r.headers["checksum"] = checksum;
  r.headers["Content-Type"] = "text/plain";
  r.body = body();
  return r;
}

Batch make_batch(const PseudonymId& pseudonym, std::uint64_t first_seq, std::vector<std::string> lines) {
  Batch b{pseudonym, first_seq, first_seq + lines.size() - 1, std::move(lines), {}};
  b.checksum = sha256_hex(b.body());
  return b;
}

std::vector<Batch> make_batches(const EventLog& log, const PseudonymId& pseudonym, AckState ack,
                                std::size_t max_events) {
  if (max_events == 0) throw Error(ErrorCode::invalid_argument, "batch size must be positive");
  std::vector<Batch> out;
  const auto lines = log.lines();
  for (std::uint64_t first = ack.acked() + 1; first <= log.max_seq(); first += max_events) {
    const std::uint64_t last = std::min<std::uint64_t>(log.max_seq(), first + max_events - 1);
    std::vector<std::string> chunk(lines.begin() + static_cast<std::ptrdiff_t>(first - 1),
                                   lines.begin() + static_cast<std::ptrdiff_t>(last));
    out.push_back(make_batch(pseudonym, first, std::move(chunk)));
  }
  return out;
}

UploadResult upload(Transport& transport, const Batch& batch) {
  HttpResponse resp = transport.send(batch.to_request());
  if (resp.status == 0) return {UploadStatus::retryable, 0, "no response"};
  if (resp.status == 200) {
    try {
      auto j = nlohmann::json::parse(resp.body);
      return {UploadStatus::acked, j.at("acked_through").get<std::uint64_t>(), {}};
    } catch (const std::exception&) {
      return {UploadStatus::retryable, 0, "unreadable ack"};
    }
  }
  if (resp.status == 400) return {UploadStatus::permanent, 0, resp.body};
  // Checksum mismatches (corruption in transit), 5xx and anything else retry.
  return {UploadStatus::retryable, 0, "status " + std::to_string(resp.status) + " " + resp.body};
}

SyncClient::SyncClient(EventLog& log, PseudonymId pseudonym, Transport& transport,
                       SyncOptions options, Diagnostics* diagnostics)
    : log_(log),
      pseudonym_(std::move(pseudonym)),
      transport_(transport),
      options_(options),
      diag_(diagnostics) {}

SyncOutcome SyncClient::step(TimestampMs now, const ConsentState& consent) {
  if (halted_) return SyncOutcome::halted;
  if (consent_gate(consent, Action::transmit) == Decision::deny) return SyncOutcome::consent_denied;
  if (now < next_attempt_) return SyncOutcome::not_due;
  if (log_.sync_cursor() >= log_.max_seq()) return SyncOutcome::idle;

  // Only the first pending batch is sent; the rest wait for its ack.
  const std::uint64_t first = log_.sync_cursor() + 1;
  const std::uint64_t last = std::min<std::uint64_t>(log_.max_seq(), first + options_.max_batch - 1);
  const auto lines = log_.lines();
  Batch batch = make_batch(pseudonym_, first,
                           {lines.begin() + static_cast<std::ptrdiff_t>(first - 1),
                            lines.begin() + static_cast<std::ptrdiff_t>(last)});
  ++uploads_;
  bytes_sent_ += batch.body().size();
  UploadResult r = upload(transport_, batch);

  switch (r.status) {
    case UploadStatus::acked:
      log_.set_sync_cursor(r.acked_through);
      backoff_ = 0;
      next_attempt_ = INT64_MIN;
      if (diag_) diag_->bump("sync.acked_batches");
      return SyncOutcome::acked;
    case UploadStatus::retryable:
      backoff_ = backoff_ == 0 ? options_.initial_backoff : std::min(backoff_ * 2, options_.max_backoff);
      next_attempt_ = now + backoff_;
      if (diag_) diag_->bump("sync.retries");
      return SyncOutcome::retry_scheduled;
    case UploadStatus::permanent:
      halted_ = true;
      if (diag_) diag_->bump("sync.permanent_failures");
      if (log_.file_backed()) {
        std::ofstream out(log_.dir() / "diagnostics.log", std::ios::app);
        out << "sync halted at=" << now << " first_seq=" << first << " last_seq=" << last
            << " reason=permanent-failure\n";
      }
      return SyncOutcome::halted;
  }
  return SyncOutcome::halted;
}

SyncOutcome SyncClient::drain(TimestampMs now, const ConsentState& consent) {
  while (true) {
    const std::uint64_t before = log_.sync_cursor();
    SyncOutcome o = step(now, consent);
    if (o != SyncOutcome::acked) return o;
    if (log_.sync_cursor() >= log_.max_seq()) return SyncOutcome::idle;
    if (log_.sync_cursor() == before) return SyncOutcome::acked;  // server did not advance
  }
}

}  // namespace daytrace
