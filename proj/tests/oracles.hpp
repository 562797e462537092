#pragma once

// Reference implementations used only to check the library. They are written
// from the rule statements, deliberately not from the library code.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace daytrace::oracle {

// Light segmentation, closed form. With state s, the segment from the upward
// thresholds alone is `up`; from the downward thresholds alone is `down`.
// Going up wins when it moves; otherwise going down when it moves.
struct Quantizer {
  std::vector<double> boundaries;
  double margin;
  int state = 0;

  std::optional<std::pair<int, int>> feed(double x) {
    int up = 0, down = 0;
    for (double b : boundaries) {
      if (b * (1 + margin) <= x) ++up;
      if (b * (1 - margin) < x) ++down;
    }
    int next = up > state ? up : (down < state ? down : state);
    if (next == state) return std::nullopt;
    std::pair<int, int> change{state, next};
    state = next;
    return change;
  }
};

/// Seconds of [start, end) falling into each hour bucket, counted second by second.
inline std::map<std::int64_t, std::int64_t> split_by_hour(std::int64_t start_ms, std::int64_t end_ms) {
  std::map<std::int64_t, std::int64_t> out;
  for (std::int64_t s = start_ms; s < end_ms; s += 1000) out[s - s % 3'600'000] += 1;
  return out;
}

/// Smallest completed-day count that meets `threshold` over `days`.
inline std::int64_t required_days(double threshold, int days) {
  return static_cast<std::int64_t>(std::ceil(threshold * days - 1e-9));
}

}  // namespace daytrace::oracle
