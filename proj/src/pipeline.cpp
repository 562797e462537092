#include <algorithm>

#include "daytrace/acquisition.hpp"

namespace daytrace {

namespace {

std::string counter(std::string_view prefix, SourceKind s) {
  return std::string(prefix) + "." + std::string(wire_tag(s));
}

std::optional<double> number_of(const Payload& p, std::string_view key) {
  auto it = p.find(key);
  if (it == p.end()) return std::nullopt;
  if (const auto* r = std::get_if<Real>(&it->second)) return r->value();
  if (const auto* i = std::get_if<std::int64_t>(&it->second)) return static_cast<double>(*i);
  return std::nullopt;
}

bool conforms(SourceKind source, const Payload& payload) {
  static const PseudonymId kProbe(std::string(64, '0'));
  EventRecord probe{kProbe, 1, 0, source, payload};
  return !validate(probe).has_value();
}

bool is_polled(SourceKind s) {
  return s == SourceKind::app_usage || s == SourceKind::app_traffic || s == SourceKind::weather;
}

}  // namespace

Pipeline::Pipeline(AcquisitionConfig config, Anonymizer anonymizer, EventSink& sink,
                   PollSources sources, TimestampMs start)
    : config_(std::move(config)),
      anonymizer_(std::move(anonymizer)),
      sink_(sink),
      sources_(sources),
      quantizer_(config_.light_boundaries, config_.light_margin),
      gate_(config_.step_window),
      usage_buckets_(start),
      traffic_buckets_(start),
      clock_(start) {
  if (sources_.usage) schedule_.set_period(SourceKind::app_usage, config_.app_usage_period, start);
  if (sources_.traffic) schedule_.set_period(SourceKind::app_traffic, config_.app_traffic_period, start);
  if (sources_.weather) schedule_.set_period(SourceKind::weather, config_.weather_period, start);
  if (config_.consent) accept_consent(start);
}

void Pipeline::accept_consent(TimestampMs now) {
  if (consent_.accepted()) return;
  consent_.accept(now);
  usage_buckets_.collect_from(now);
  traffic_buckets_.collect_from(now);
}

void Pipeline::register_fence(std::string id, FencePredicate predicate, FenceCallback callback) {
  auto taken = std::any_of(fences_.begin(), fences_.end(), [&](const Fence& f) { return f.id == id; });
  if (taken) throw Error(ErrorCode::duplicate_identifier, "fence '" + id + "' already registered");
  bool initial = predicate(snapshot_);
  fences_.push_back(Fence{std::move(id), std::move(predicate), std::move(callback), initial});
}

bool Pipeline::unregister_fence(const std::string& id) {
  auto it = std::find_if(fences_.begin(), fences_.end(), [&](const Fence& f) { return f.id == id; });
  if (it == fences_.end()) return false;
  fences_.erase(it);
  return true;
}

void Pipeline::observe(SourceKind source, TimestampMs t, Payload value) {
  snapshot_.set(source, Observation{t, std::move(value)});
  std::vector<std::pair<const Fence*, bool>> fired;
  for (auto& f : fences_) {
    bool now = f.predicate(snapshot_);
    if (now != f.last) {
      f.last = now;
      fired.emplace_back(&f, now);
    }
  }
  if (fired.empty()) return;
  // Callbacks run on a stable copy so they may inspect the snapshot freely.
  const ContextSnapshot view = snapshot_;
  for (auto [fence, entered] : fired) {
    diag_.bump("fence.callbacks");
    if (fence->callback) fence->callback(fence->id, entered, view);
  }
}

void Pipeline::emit(SourceKind source, TimestampMs t, Payload payload) {
  sink_.emit(source, t, payload);
  diag_.bump(counter("stored", source));
  if (source != SourceKind::light) observe(source, t, std::move(payload));
}

void Pipeline::on_sample(const RawSample& sample) {
  advance_to(sample.timestamp);
  const SourceKind src = sample.source;
  diag_.bump(counter("raw", src));

  if (consent_gate(consent_, Action::collect) == Decision::deny) {
    diag_.bump("dropped.no_consent");
    return;
  }
  if (!config_.permitted(src)) {
    diag_.bump(counter("dropped.permission", src));
    return;
  }
  if (is_polled(src)) {
    diag_.bump(counter("dropped.unexpected_sample", src));
    return;
  }

  switch (src) {
    case SourceKind::light: {
      auto lux = number_of(sample.payload, "lux");
      if (!lux || sample.payload.size() != 1) {
        diag_.bump(counter("rejected", src));
        return;
      }
      auto step = quantizer_.update(*lux);
      if (step.rejected) {
        diag_.bump(counter("rejected", src));
        return;
      }
      if (step.change) {
        emit(src, sample.timestamp,
             Payload{{"segment_from", std::int64_t{step.change->from}},
                     {"segment_to", std::int64_t{step.change->to}}});
      }
      observe(src, sample.timestamp, Payload{{"segment", std::int64_t{quantizer_.segment()}}});
      return;
    }
    case SourceKind::accelerometer: {
      if (!conforms(src, sample.payload)) {
        diag_.bump(counter("rejected", src));
        return;
      }
      if (!gate_.is_open(sample.timestamp)) {
        diag_.bump("dropped.gated.accelerometer");
        return;
      }
      emit(src, sample.timestamp, sample.payload);
      return;
    }
    case SourceKind::steps: {
      if (!conforms(src, sample.payload)) {
        diag_.bump(counter("rejected", src));
        return;
      }
      if (std::get<std::int64_t>(sample.payload.at("count")) > 0) gate_.record_step(sample.timestamp);
      emit(src, sample.timestamp, sample.payload);
      return;
    }
    default: {
      Payload scrubbed;
      try {
        scrubbed = anonymizer_.scrub(src, sample.payload);
      } catch (const Error&) {
        diag_.bump(counter("rejected", src));
        return;
      }
      if (!conforms(src, scrubbed)) {
        diag_.bump(counter("rejected", src));
        return;
      }
      emit(src, sample.timestamp, std::move(scrubbed));
    }
  }
}

void Pipeline::advance_to(TimestampMs now) {
  while (auto due = schedule_.next_due()) {
    if (*due > now) break;
    run_polls(*due);
  }
  clock_ = std::max(clock_, now);
}

void Pipeline::run_polls(TimestampMs t) {
  const auto due = schedule_.due_at(t);
  const bool allowed = consent_gate(consent_, Action::collect) == Decision::allow;
  if (allowed) diag_.bump("poll.wakeups");
  for (SourceKind src : due) {
    schedule_.mark_polled(src, t);
    if (!allowed) {
      diag_.bump("poll.skipped_no_consent");
      continue;
    }
    if (!config_.permitted(src)) {
      diag_.bump(counter("dropped.permission", src));
      continue;
    }
    diag_.bump(counter("polls", src));
    std::vector<Emission> out;
    if (src == SourceKind::app_usage) {
      out = usage_buckets_.poll_usage(t, *sources_.usage, anonymizer_, diag_);
    } else if (src == SourceKind::app_traffic) {
      out = traffic_buckets_.poll_traffic(t, *sources_.traffic, anonymizer_, diag_);
    } else if (src == SourceKind::weather) {
      auto w = sources_.weather->current(t);
      if (!w || !conforms(src, *w)) {
        diag_.bump("weather.source_unavailable");
      } else {
        out.push_back({t, src, std::move(*w)});
      }
    }
    for (auto& e : out) emit(e.source, e.timestamp, std::move(e.payload));
  }
}

}  // namespace daytrace
