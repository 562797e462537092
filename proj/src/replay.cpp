#include <json.hpp>

#include <iomanip>
#include <sstream>
#include <thread>

#include "daytrace/anonymizer.hpp"
#include "daytrace/sim.hpp"

namespace daytrace {

namespace {

bool is_polled(SourceKind s) {
  return s == SourceKind::app_usage || s == SourceKind::app_traffic || s == SourceKind::weather;
}

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

SimDevice SimDevice::from_seed(std::uint64_t seed) {
  SeededRandom rng(seed);
  Salt salt = Salt::generate(rng);
  std::string installation = random_hex(rng, 16);
  PseudonymId pid = pseudonymize(installation, salt);
  return SimDevice{Anonymizer(std::move(salt)), std::move(pid)};
}

VirtualClock::VirtualClock(TimestampMs origin, double acceleration)
    : origin_(origin), now_(origin), acceleration_(acceleration), wall_origin_(std::chrono::steady_clock::now()) {}

void VirtualClock::wait_until(TimestampMs t) {
  if (t > now_) now_ = t;
  if (acceleration_ <= 0) return;
  const auto wall = std::chrono::duration<double, std::milli>(static_cast<double>(now_ - origin_) / acceleration_);
  std::this_thread::sleep_until(wall_origin_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(wall));
}

ReplayReport replay(const Trace& trace, EventLog& log, const ReplayOptions& options) {
  return replay(trace, log, SimDevice::from_seed(options.identity_seed.value_or(trace.config.seed ^ 0xd1ce5eedULL)),
                options);
}

ReplayReport replay(const Trace& trace, EventLog& log, const SimDevice& device, const ReplayOptions& options) {
  ReplayReport report;
  const std::size_t first_line = log.size();
  StoreSink sink(log, device.pseudonym);
  TraceUsageSource usage(trace);
  TraceTrafficSource traffic(trace);
  TraceWeatherSource weather(trace);
  Pipeline pipeline(options.acquisition, device.anonymizer, sink, PollSources{&usage, &traffic, &weather},
                    trace.start);

  Diagnostics sync_diag;
  std::optional<SyncClient> sync;
  if (options.transport) sync.emplace(log, device.pseudonym, *options.transport, SyncOptions{}, &sync_diag);
  VirtualClock clock(trace.start, options.acceleration);
  TimestampMs next_sync = trace.start + options.sync_period;

  auto sync_at = [&](TimestampMs t) {
    pipeline.advance_to(t);
    clock.wait_until(t);
    if (sync) sync->drain(t, pipeline.consent());
  };

  for (const TraceEvent& ev : trace.events) {
    while (sync && next_sync <= ev.timestamp) {
      sync_at(next_sync);
      next_sync += options.sync_period;
    }
    clock.wait_until(ev.timestamp);
    ++report.sources[ev.source].raw;
    if (is_polled(ev.source)) {
      // Read back by the polled sources at their scheduled times.
      pipeline.advance_to(ev.timestamp);
      continue;
    }
    pipeline.on_sample(RawSample{ev.timestamp, ev.source, ev.payload});
  }
  pipeline.advance_to(trace.end);
  if (sync) {
    TimestampMs t = std::max(trace.end, next_sync - options.sync_period);
    // Retries stay on the virtual clock; give up after the backoff has long saturated.
    for (int attempt = 0; attempt < 32; ++attempt) {
      sync_at(t);
      if (sync->halted() || log.sync_cursor() >= log.max_seq() ||
          consent_gate(pipeline.consent(), Action::transmit) == Decision::deny)
        break;
      t = std::max(t + kSecondMs, sync->next_attempt());
    }
  }

  const auto events = log.events();
  const auto lines = log.lines();
  for (std::size_t i = first_line; i < events.size(); ++i) {
    auto& c = report.sources[events[i].source];
    ++c.stored;
    c.stored_bytes += lines[i].size() + 1;
  }
  for (const auto& [_, c] : report.sources) {
    report.raw_total += c.raw;
    report.stored_total += c.stored;
    report.stored_bytes += c.stored_bytes;
  }
  report.wakeups = pipeline.wakeups();
  report.diagnostics = pipeline.diagnostics();
  report.diagnostics.merge(sync_diag);
  if (sync) {
    report.uploads = sync->uploads();
    report.bytes_sent = sync->bytes_sent();
    report.acked_through = log.sync_cursor();
  }
  return report;
}

double ReplayReport::light_ratio() const {
  auto it = sources.find(SourceKind::light);
  return it == sources.end() ? 0.0 : ratio(it->second.stored, it->second.raw);
}

double ReplayReport::overall_ratio() const { return ratio(stored_total, raw_total); }

std::string ReplayReport::text() const {
  std::ostringstream out;
  out << std::left << std::setw(20) << "source" << std::right << std::setw(10) << "raw" << std::setw(10)
      << "stored" << std::setw(12) << "bytes" << std::setw(10) << "ratio" << "\n";
  out << std::fixed << std::setprecision(4);
  for (SourceKind s : kAllSources) {
    auto it = sources.find(s);
    if (it == sources.end()) continue;
    const auto& c = it->second;
    out << std::left << std::setw(20) << wire_tag(s) << std::right << std::setw(10) << c.raw << std::setw(10)
        << c.stored << std::setw(12) << c.stored_bytes << std::setw(10) << ratio(c.stored, c.raw) << "\n";
  }
  out << std::left << std::setw(20) << "total" << std::right << std::setw(10) << raw_total << std::setw(10)
      << stored_total << std::setw(12) << stored_bytes << std::setw(10) << overall_ratio() << "\n\n";
  out << "light stored/raw   " << light_ratio() << "\n";
  out << "poll wakeups       " << wakeups << "\n";
  out << "uploads            " << uploads << "\n";
  out << "bytes sent         " << bytes_sent << "\n";
  return out.str();
}

std::string ReplayReport::json() const {
  nlohmann::ordered_json j;
  nlohmann::ordered_json per = nlohmann::ordered_json::object();
  for (SourceKind s : kAllSources) {
    auto it = sources.find(s);
    if (it == sources.end()) continue;
    per[std::string(wire_tag(s))] = {{"raw", it->second.raw},
                                     {"stored", it->second.stored},
                                     {"stored_bytes", it->second.stored_bytes}};
  }
  j["sources"] = per;
  j["raw_total"] = raw_total;
  j["stored_total"] = stored_total;
  j["stored_bytes"] = stored_bytes;
  j["light_ratio"] = light_ratio();
  j["overall_ratio"] = overall_ratio();
  j["poll_wakeups"] = wakeups;
  j["uploads"] = uploads;
  j["bytes_sent"] = bytes_sent;
  j["acked_through"] = acked_through;
  j["diagnostics"] = diagnostics.counters();
  return j.dump(2) + "\n";
}

}  // namespace daytrace
