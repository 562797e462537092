#pragma once

#include <deque>
#include <random>

#include "daytrace/http.hpp"
#include "daytrace/random.hpp"

namespace daytrace::testing {

// Injects network faults in front of `inner`: lost requests, lost responses,
// duplicated deliveries, and requests held back and delivered late (after a
// newer request), all driven by a seeded engine.
class FaultyTransport final : public Transport {
 public:
  struct Rates {
    double drop_request = 0.1;
    double drop_response = 0.1;
    double duplicate = 0.1;
    double delay = 0.1;
  };

  FaultyTransport(Transport& inner, std::uint64_t seed, Rates rates) : inner_(inner), e_(seed), rates_(rates) {}
  FaultyTransport(Transport& inner, std::uint64_t seed) : FaultyTransport(inner, seed, Rates{}) {}

  HttpResponse send(const HttpRequest& request) override {
    ++sent_;
    // Late deliveries of earlier requests land before this one.
    while (!held_.empty() && uniform_unit(e_) < 0.5) {
      inner_.send(held_.front());
      held_.pop_front();
    }
    const double r = uniform_unit(e_);
    const double drop_req = rates_.drop_request;
    const double delay = drop_req + rates_.delay;
    const double dup = delay + rates_.duplicate;
    const double drop_resp = dup + rates_.drop_response;
    if (r < drop_req) return {};
    if (r < delay) {
      held_.push_back(request);
      return {};
    }
    HttpResponse resp = inner_.send(request);
    if (r < dup) return inner_.send(request);
    if (r < drop_resp) return {};
    return resp;
  }

  /// Delivers everything still held back.
  void flush() {
    while (!held_.empty()) {
      inner_.send(held_.front());
      held_.pop_front();
    }
  }

  std::uint64_t sent() const { return sent_; }

 private:
  Transport& inner_;
  std::mt19937_64 e_;
  Rates rates_;
  std::deque<HttpRequest> held_;
  std::uint64_t sent_ = 0;
};

}  // namespace daytrace::testing
